"""Analysis tests: estimators against hand arithmetic, bound soundness,
background subtraction, and fit properties."""
import numpy as np
import pytest

from tpcsim.analysis import (
    AnalysisError,
    AnalysisParams,
    PhaseBin,
    analyze_records,
    diagonal_tomography,
    estimate_background_fraction,
    fidelity_bound,
    fit_equatorial,
    phase_bins,
    significance,
    subtract_background,
)
from tpcsim.emitter import EmitterParams
from tpcsim.events import RECORD_DTYPE, DetectionParams, simulate_cycles
from tpcsim.optics import InterferometerConfig
from tpcsim.protocol import ProtocolConfig


def ideal_emitter(**overrides):
    base = dict(
        p_cross=0.0,
        zpl_fraction=1.0,
        p_shelve=0.0,
        p_spin_flip=0.0,
        init_fidelity=1.0,
        nuclear_pol=1.0,
        pi_pulse_error=0.0,
        p_readout_click=1.0,
    )
    base.update(overrides)
    return EmitterParams(**base)


def ideal_records(n_cycles, seed=5, **ifm_overrides):
    ifm = InterferometerConfig(phase_mode="scan", phase_readout_sigma=0.0, **ifm_overrides)
    det = DetectionParams(zpl_efficiency=1.0, seed=seed)
    return simulate_cycles(n_cycles, ideal_emitter(), ifm, ProtocolConfig(), det), ifm


def make_records(rows):
    return np.array(rows, dtype=RECORD_DTYPE)


def inject_uniform_background(records, b, ifm, rng):
    """Add spin-uncorrelated, time-uniform clicks so the path-erased class
    carries a background fraction ``b``. Injected clicks use fresh cycle ids."""
    n_sig_erased = int(np.sum(records["arrival_class"] == "Erased"))
    n_bg_erased = b / (1.0 - b) * n_sig_erased
    w, d = ifm.window_ns, ifm.delay_ns
    span = 2.0 * d + 2.0 * w
    n_total = int(round(n_bg_erased * span / (2.0 * w)))
    t_rel = rng.uniform(-d - w, d + w, size=n_total)
    cls = np.full(n_total, "Invalid", dtype="U16")
    cls[np.abs(t_rel) <= w] = "Erased"
    cls[np.abs(t_rel + d) <= w] = "EarlyRevealing"
    cls[np.abs(t_rel - d) <= w] = "LateRevealing"
    base = int(records["cycle_id"].max()) + 1
    rows = []
    for k in range(n_total):
        rows.append(
            (
                base + k,
                "DARL"[rng.integers(4)],
                cls[k],
                float(t_rel[k]),
                rng.uniform(0, 2 * np.pi),
                "minus" if rng.random() < 0.5 else "plus",
                1 if rng.random() < 0.5 else 0,
            )
        )
    merged = np.concatenate([records, np.array(rows, dtype=RECORD_DTYPE)])
    return merged[np.argsort(merged["cycle_id"], kind="stable")]


class TestDiagonalTomography:
    def test_hand_counted_populations(self):
        # 1000 early / 300 bright, 500 late / 400 bright at unit readout
        # calibration: w_H = 2/3, P(0|E) = 0.3, P(0|L) = 0.8
        rows = []
        for i in range(1000):
            rows.append((i, "D", "EarlyRevealing", 0.0, 0.0, "minus", 1 if i < 300 else 0))
        for i in range(500):
            rows.append((1000 + i, "D", "LateRevealing", 0.0, 0.0, "minus", 1 if i < 400 else 0))
        result = diagonal_tomography(make_records(rows), AnalysisParams(p_readout_click=1.0))
        rho11, rho22, rho33, rho44 = result.diagonals
        assert abs(rho11 - 2 / 3 * 0.3) < 1e-12
        assert abs(rho33 - 2 / 3 * 0.7) < 1e-12
        assert abs(rho22 - 1 / 3 * 0.8) < 1e-12
        assert abs(rho44 - 1 / 3 * 0.2) < 1e-12
        assert abs(sum(result.diagonals) - 1.0) < 1e-12
        assert abs(result.c_zz - (rho22 + rho33 - rho11 - rho44)) < 1e-12

    def test_readout_calibration_inversion(self):
        # same populations observed through a 16.7% bright-click probability
        rng = np.random.default_rng(0)
        rows = []
        for i in range(40_000):
            bright = rng.random() < 0.3
            click = bright and (rng.random() < 0.167)
            rows.append((i, "D", "EarlyRevealing", 0.0, 0.0, "minus", int(click)))
        for i in range(40_000):
            bright = rng.random() < 0.8
            click = bright and (rng.random() < 0.167)
            rows.append((40_000 + i, "D", "LateRevealing", 0.0, 0.0, "minus", int(click)))
        result = diagonal_tomography(make_records(rows), AnalysisParams(p_readout_click=0.167))
        assert abs(result.stats["p0_e"] - 0.3) < 3 * result.stats["s_e"]
        assert abs(result.stats["p0_l"] - 0.8) < 3 * result.stats["s_l"]

    def test_ideal_records_give_unit_correlation(self):
        recs, _ = ideal_records(40_000)
        result = diagonal_tomography(recs, AnalysisParams(p_readout_click=1.0))
        assert abs(result.c_zz - 1.0) <= 3 * max(result.c_zz_err, 1e-4)

    def test_uniform_random_records_give_zero(self):
        rng = np.random.default_rng(11)
        rows = []
        for i in range(20_000):
            cls = ("EarlyRevealing", "LateRevealing")[rng.integers(2)]
            rows.append((i, "D", cls, 0.0, 0.0, "minus", int(rng.random() < 0.5)))
        result = diagonal_tomography(make_records(rows), AnalysisParams(p_readout_click=1.0))
        assert abs(result.c_zz) <= 3 * result.c_zz_err

    def test_missing_class_rejected(self):
        rows = [(0, "D", "EarlyRevealing", 0.0, 0.0, "minus", 1)]
        with pytest.raises(AnalysisError):
            diagonal_tomography(make_records(rows), AnalysisParams())

    def test_insufficient_statistics_flagged_not_fatal(self):
        rows = [
            (0, "D", "EarlyRevealing", 0.0, 0.0, "minus", 1),
            (1, "D", "LateRevealing", 0.0, 0.0, "minus", 0),
        ]
        result = diagonal_tomography(make_records(rows), AnalysisParams(p_readout_click=1.0))
        assert "revealing_early" in result.insufficient


class TestEquatorialFit:
    def test_ideal_contrast_and_antiphase(self):
        recs, _ = ideal_records(60_000)
        result = fit_equatorial(recs, AnalysisParams(p_readout_click=1.0))
        assert abs(result.c_xx - 1.0) <= 3 * result.c_xx_err + 0.01
        rel = result.fits["minus"].phase0 - result.fits["plus"].phase0
        assert abs(abs(((rel + np.pi) % (2 * np.pi)) - np.pi) - np.pi) % np.pi < 0.05

    def test_dephased_photon_gives_zero_contrast(self):
        recs, _ = ideal_records(40_000, erasure_visibility=0.0)
        result = fit_equatorial(recs, AnalysisParams(p_readout_click=1.0))
        assert abs(result.c_xx) <= 3 * result.c_xx_err + 0.01

    def test_intermediate_coherence_recovered(self):
        recs, _ = ideal_records(80_000, erasure_visibility=0.407, seed=9)
        result = fit_equatorial(recs, AnalysisParams(p_readout_click=1.0))
        assert abs(result.c_xx - 0.407) <= 3 * result.c_xx_err + 0.01

    def test_exact_invariance_under_one_bin_shift(self):
        # shifting every phase by one bin width relabels the bins: the contrast
        # and the combined correlation are bit-identical
        recs, _ = ideal_records(20_000, seed=13)
        params = AnalysisParams(p_readout_click=1.0)
        shifted = recs.copy()
        width = 2 * np.pi / params.n_phase_bins
        shifted["phase_rad"] = np.mod(shifted["phase_rad"] + width, 2 * np.pi)
        a = fit_equatorial(recs, params)
        b = fit_equatorial(shifted, params)
        assert abs(a.c_xx - b.c_xx) < 1e-9

    def test_approximate_invariance_under_any_shift(self):
        recs, _ = ideal_records(40_000, seed=14)
        params = AnalysisParams(p_readout_click=1.0)
        shifted = recs.copy()
        shifted["phase_rad"] = np.mod(shifted["phase_rad"] + 0.613, 2 * np.pi)
        a = fit_equatorial(recs, params)
        b = fit_equatorial(shifted, params)
        assert abs(a.c_xx - b.c_xx) < 3 * np.hypot(a.c_xx_err, b.c_xx_err) + 0.005

    def test_phase_coverage_below_half_period_rejected(self):
        rng = np.random.default_rng(3)
        rows = []
        for i in range(2_000):
            for prep in ("minus", "plus"):
                rows.append(
                    (len(rows), "D", "Erased", 0.0, rng.uniform(0, 1.2), prep, int(rng.random() < 0.5))
                )
        with pytest.raises(AnalysisError, match="coverage"):
            fit_equatorial(make_records(rows), AnalysisParams(p_readout_click=1.0))

    def test_missing_prep_rejected(self):
        rows = [(i, "D", "Erased", 0.0, 0.1 * i, "minus", 0) for i in range(100)]
        with pytest.raises(AnalysisError, match="plus"):
            fit_equatorial(make_records(rows), AnalysisParams(p_readout_click=1.0))


class TestPhaseBins:
    def test_bins_partition_full_turn(self):
        recs, _ = ideal_records(10_000, seed=31)
        params = AnalysisParams(p_readout_click=1.0)
        bins = phase_bins(recs, params)
        for cell in bins.values():
            centers = [b.center for b in cell]
            assert len(centers) == params.n_phase_bins
            width = 2 * np.pi / params.n_phase_bins
            assert np.allclose(np.diff(centers), width)
            assert 0.0 < centers[0] < width
            assert centers[-1] < 2 * np.pi

    def test_counts_cover_all_erased_events(self):
        recs, _ = ideal_records(10_000, seed=32)
        bins = phase_bins(recs, AnalysisParams(p_readout_click=1.0))
        total = sum(b.n_events for cell in bins.values() for b in cell)
        assert total == int(np.sum(recs["arrival_class"] == "Erased"))

    def test_negative_counts_rejected(self):
        with pytest.raises(AnalysisError):
            PhaseBin(0.1, 3, 4)


class TestBackground:
    def test_zero_background_leaves_report(self):
        recs, ifm = ideal_records(30_000)
        report = analyze_records(recs, AnalysisParams(p_readout_click=1.0), ifm)
        corrected = subtract_background(report, 0.0)
        assert corrected.f_bound_corrected == report.f_bound_raw
        assert corrected.c_zz == report.c_zz

    def test_uniform_mixture_algebra(self):
        # C_raw = (1 - b) C_true: at C_raw = 0.5, b = 0.5 the corrected value is 1
        recs, ifm = ideal_records(30_000)
        report = analyze_records(recs, AnalysisParams(p_readout_click=1.0), ifm)
        report = subtract_background(report, 0.5)
        c_zz_corr, c_xx_corr = report.c_zz / (1 - 0.5), report.c_xx / (1 - 0.5)
        assert abs(c_zz_corr - 2 * report.c_zz) < 1e-12
        assert report.f_bound_corrected > report.f_bound_raw

    def test_estimator_recovers_injected_fraction(self):
        rng = np.random.default_rng(7)
        for b in (0.1, 0.3, 0.5):
            recs, ifm = ideal_records(30_000, seed=int(100 * b))
            merged = inject_uniform_background(recs, b, ifm, rng)
            b_hat, sigma = estimate_background_fraction(merged, ifm)
            assert abs(b_hat - b) <= 4 * sigma + 0.01

    def test_subtract_undoes_injection(self):
        rng = np.random.default_rng(8)
        params = AnalysisParams(p_readout_click=1.0)
        for b in (0.1, 0.3, 0.5):
            recs, ifm = ideal_records(60_000, seed=int(17 + 100 * b))
            merged = inject_uniform_background(recs, b, ifm, rng)
            report = analyze_records(merged, params, ifm, auto_background=True)
            raw = analyze_records(merged, params, ifm)
            assert abs(raw.c_xx - (1 - b)) <= 3 * raw.c_xx_err + 0.02
            assert abs(report.c_xx_corrected - 1.0) <= 4 * report.c_xx_corrected_err + 0.03

    def test_invalid_fraction_rejected(self):
        recs, ifm = ideal_records(5_000)
        report = analyze_records(recs, AnalysisParams(p_readout_click=1.0), ifm)
        with pytest.raises(AnalysisError):
            subtract_background(report, 1.0)


class TestFidelityBound:
    def test_ideal_bell_diagonals(self):
        assert abs(fidelity_bound((0.0, 0.5, 0.5, 0.0), 1.0) - 1.0) < 1e-12

    def test_maximally_mixed(self):
        assert abs(fidelity_bound((0.25, 0.25, 0.25, 0.25), 0.0)) < 1e-12

    def test_no_clamping_of_negative_values(self):
        assert fidelity_bound((0.5, 0.0, 0.0, 0.5), -1.0) < -0.9

    def test_sound_on_ginibre_samples(self):
        # bound <= <psi+|rho|psi+> with exact diagonals and exact Cxx; the slack
        # is |rho14| - sqrt(rho11 rho44) <= 0 by positivity
        rng = np.random.default_rng(123)
        psi = np.zeros(4, dtype=complex)
        psi[1] = psi[2] = 1 / np.sqrt(2)
        sx = np.array([[0, 1], [1, 0]])
        xx = np.kron(sx, sx)
        worst = np.inf
        for _ in range(2_000):
            g = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
            rho = g @ g.conj().T
            rho /= np.trace(rho).real
            diagonals = tuple(np.real(np.diag(rho)))
            c_xx = float(np.real(np.trace(rho @ xx)))
            bound = fidelity_bound(diagonals, c_xx)
            exact = float(np.real(psi.conj() @ rho @ psi))
            worst = min(worst, exact - bound)
        assert worst >= -1e-10

    def test_equality_cases(self):
        # rho14 = 0 and rho11 rho44 = 0 with real positive rho23 saturate the bound
        rng = np.random.default_rng(5)
        for _ in range(50):
            p = rng.uniform(0.2, 0.8)
            c = rng.uniform(0.0, 1.0) * np.sqrt(p * (1 - p))
            rho = np.zeros((4, 4), dtype=complex)
            rho[1, 1], rho[2, 2] = p, 1 - p
            rho[1, 2] = rho[2, 1] = c
            eigs = np.linalg.eigvalsh(rho)
            assert eigs.min() > -1e-12
            diagonals = tuple(np.real(np.diag(rho)))
            sx = np.array([[0, 1], [1, 0]])
            c_xx = float(np.real(np.trace(rho @ np.kron(sx, sx))))
            psi = np.zeros(4, dtype=complex)
            psi[1] = psi[2] = 1 / np.sqrt(2)
            exact = float(np.real(psi.conj() @ rho @ psi))
            assert abs(fidelity_bound(diagonals, c_xx) - exact) < 1e-9


class TestErrors:
    def test_published_significances(self):
        assert abs(significance(0.647, 0.013) - 11.3) < 0.01
        assert abs(significance(0.560, 0.009) - 6.67) < 0.01

    def test_binomial_error_example(self):
        from tpcsim.analysis import binomial_sigma

        assert abs(binomial_sigma(0.5, 10_000) - 0.005) < 1e-12

    def test_zero_counts_rejected(self):
        from tpcsim.analysis import binomial_sigma

        with pytest.raises(AnalysisError):
            binomial_sigma(0.5, 0)


class TestPipeline:
    def test_full_report_fields(self):
        recs, ifm = ideal_records(40_000)
        report = analyze_records(recs, AnalysisParams(p_readout_click=1.0), ifm)
        text = report.to_text()
        for key in ("c_zz", "c_xx", "f_bound_raw", "f_bound_corrected", "significance_raw"):
            assert key in text
        assert abs(sum(report.diagonals) - 1.0) < 1e-9
        assert abs(report.c_zz) <= 1.0 + 1e-9
        assert report.f_bound_raw > 0.95

    def test_multiclick_cycles_rejected(self):
        rows = [
            (0, "D", "Erased", 0.0, 0.1, "minus", 1),
            (0, "A", "EarlyRevealing", 10.0, 0.1, "minus", 1),
        ]
        recs, ifm = ideal_records(20_000)
        merged = np.concatenate([make_records(rows), recs])
        merged["cycle_id"][:2] = -1  # keep sorted order with a shared leading cycle
        report = analyze_records(merged, AnalysisParams(p_readout_click=1.0), ifm)
        assert report.n_rejected_cycles == 1
