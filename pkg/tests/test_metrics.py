import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pivuq.errors import DegenerateInputError, DimensionError, ParameterError
from pivuq.flowdata import ErrorField, FlowField, UncertaintyField
from pivuq.metrics import (
    SparsificationCurve,
    auc,
    average_ranks,
    coverage,
    coverage_per_component,
    curve_to_csv,
    curve_to_svg,
    evaluate_fields,
    oracle_auc,
    report_to_json,
    sparsification,
    spearman_cc,
)


def fields_from(e, sigma):
    e = np.asarray(e, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    err = ErrorField(e_u=e, e_v=e, epe=np.sqrt(2 * e**2))
    unc = UncertaintyField(sigma_u=sigma, sigma_v=sigma)
    return err, unc


def closed_form_spearman(x, y):
    # Eq-style closed form 1 - 6 sum d^2 / (N (N^2 - 1)); valid without ties
    rx = np.argsort(np.argsort(x)) + 1.0
    ry = np.argsort(np.argsort(y)) + 1.0
    n = len(x)
    return 1.0 - 6.0 * np.sum((rx - ry) ** 2) / (n * (n**2 - 1.0))


class TestCoverage:
    def test_zero_error_full_coverage(self):
        err, unc = fields_from(np.zeros((10, 10)), np.full((10, 10), 0.5))
        assert coverage(err, unc, k=2.0) == 1.0

    def test_gaussian_two_sigma_mass(self):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(1)))
        e = rng.normal(0, 1, (250, 200))
        err, unc = fields_from(e, np.ones((250, 200)))
        assert abs(coverage(err, unc, k=2.0) - 0.9545) < 0.005
        assert abs(coverage(err, unc, k=1.0) - 0.6827) < 0.005

    @given(st.integers(0, 2**31 - 1), st.floats(0.1, 3.0), st.floats(0.05, 2.0))
    @settings(max_examples=25)
    def test_monotone_in_k(self, seed, k, dk):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        err, unc = fields_from(rng.normal(0, 1, (20, 20)), rng.uniform(0.2, 2, (20, 20)))
        assert coverage(err, unc, k + dk) >= coverage(err, unc, k)

    def test_pooled_is_mean_of_components(self):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(2)))
        e_u = rng.normal(0, 1, (8, 8))
        e_v = rng.normal(0, 2, (8, 8))
        err = ErrorField(e_u=e_u, e_v=e_v, epe=np.sqrt(e_u**2 + e_v**2))
        unc = UncertaintyField(sigma_u=rng.uniform(0.5, 2, (8, 8)), sigma_v=rng.uniform(0.5, 2, (8, 8)))
        cov_u, cov_v = coverage_per_component(err, unc, 2.0)
        assert abs(coverage(err, unc, 2.0) - 0.5 * (cov_u + cov_v)) < 1e-12

    def test_k_must_be_positive(self):
        err, unc = fields_from(np.zeros((4, 4)), np.ones((4, 4)))
        with pytest.raises(ParameterError):
            coverage(err, unc, k=0.0)


class TestSpearman:
    def test_perfect_monotone(self):
        x = np.arange(50, dtype=np.float64)
        assert spearman_cc(x, np.exp(x / 10)) == 1.0

    def test_perfect_antimonotone(self):
        x = np.arange(50, dtype=np.float64)
        assert spearman_cc(x, -x) == -1.0

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30)
    def test_matches_closed_form_without_ties(self, seed):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        x = rng.normal(0, 1, 300)
        y = rng.normal(0, 1, 300)
        assert abs(spearman_cc(x, y) - closed_form_spearman(x, y)) < 1e-12

    def test_matches_scipy_with_ties(self):
        scipy_stats = pytest.importorskip("scipy.stats")
        rng = np.random.Generator(np.random.Philox(key=np.uint64(7)))
        x = rng.integers(0, 8, 500).astype(np.float64)
        y = x + rng.integers(0, 4, 500)
        expected = scipy_stats.spearmanr(x, y).statistic
        assert abs(spearman_cc(x, y) - expected) < 1e-12

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=20)
    def test_invariant_under_increasing_transforms(self, seed):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        x = rng.normal(0, 1, 200)
        y = rng.normal(0, 1, 200)
        base = spearman_cc(x, y)
        assert abs(spearman_cc(np.exp(x), y) - base) < 1e-12
        assert abs(spearman_cc(x, 3.0 * y + 11.0) - base) < 1e-12

    def test_constant_side_is_degenerate(self):
        with pytest.raises(DegenerateInputError):
            spearman_cc(np.ones(10), np.arange(10, dtype=np.float64))

    def test_average_ranks_handles_ties(self):
        np.testing.assert_array_equal(
            average_ranks(np.array([10.0, 20.0, 20.0, 30.0])), [1.0, 2.5, 2.5, 4.0]
        )


class TestSparsification:
    def test_epe_identical_ordering_matches_oracle(self):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(3)))
        epe = rng.uniform(0, 5, 500)
        curve = sparsification(epe, epe.copy(), n_fractions=50)
        np.testing.assert_array_equal(curve.normalized_error, curve.oracle_error)

    def test_constant_epe_gives_unit_curve(self):
        curve = sparsification(np.full(200, 3.0), np.arange(200, dtype=np.float64), 50)
        np.testing.assert_allclose(curve.normalized_error, 1.0, atol=1e-12)
        np.testing.assert_allclose(curve.oracle_error, 1.0, atol=1e-12)

    def test_random_scores_stay_near_unity(self):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(4)))
        epe = np.abs(rng.normal(0, 1, 100_000))
        scores = rng.uniform(0, 1, 100_000)
        curve = sparsification(epe, scores, 50)
        mask = curve.fractions >= 0.1
        assert np.abs(curve.normalized_error[mask] - 1.0).max() < 0.05

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25)
    def test_oracle_auc_never_exceeds_predicted(self, seed):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        epe = np.abs(rng.normal(0, 1, 400)) + 1e-6
        scores = np.abs(epe + rng.normal(0, rng.uniform(0.01, 3), 400))
        curve = sparsification(epe, scores, 40)
        assert oracle_auc(curve) <= auc(curve) + 1e-9
        assert np.all(curve.oracle_error <= curve.normalized_error + 1e-9)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=15)
    def test_permutation_invariance(self, seed):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        epe = np.abs(rng.normal(0, 1, 300)) + 1e-9
        scores = rng.uniform(0, 1, 300)
        curve1 = sparsification(epe, scores, 30)
        perm = rng.permutation(300)
        curve2 = sparsification(epe[perm], scores[perm], 30)
        np.testing.assert_allclose(curve1.normalized_error, curve2.normalized_error, atol=1e-12)
        assert abs(spearman_cc(epe, scores) - spearman_cc(epe[perm], scores[perm])) < 1e-12

    def test_zero_mean_epe_degenerate(self):
        with pytest.raises(DegenerateInputError):
            sparsification(np.zeros(100), np.arange(100, dtype=np.float64), 10)

    def test_too_few_points_rejected(self):
        with pytest.raises(ParameterError):
            sparsification(np.ones(10), np.ones(10), 50)


class TestAuc:
    def test_ause_is_auc_gap_and_nonnegative(self):
        from pivuq.metrics import ause

        rng = np.random.Generator(np.random.Philox(key=np.uint64(12)))
        epe = np.abs(rng.normal(0, 1, 2000)) + 1e-9
        scores = np.abs(epe + rng.normal(0, 0.5, 2000))
        curve = sparsification(epe, scores, 40)
        assert abs(ause(curve) - (auc(curve) - oracle_auc(curve))) < 1e-15
        assert ause(curve) >= 0.0

    def test_unit_curve_has_unit_area(self):
        k = 50
        f = np.arange(1, k + 1) / k
        curve = SparsificationCurve(fractions=f, normalized_error=np.ones(k), oracle_error=np.ones(k))
        assert abs(auc(curve) - 1.0) < 1e-12

    def test_correlated_sigma_beats_random_sigma(self):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(6)))
        e = np.abs(rng.normal(0, 1, 50_000)) + 1e-6
        good = e * (1.0 + 0.1 * rng.normal(0, 1, 50_000))
        rand = rng.uniform(0.1, 1.0, 50_000)
        auc_good = auc(sparsification(e, np.abs(good) + 1e-9, 50))
        auc_rand = auc(sparsification(e, rand, 50))
        assert auc_good < auc_rand


class TestEvaluateAndExports:
    def _fixture(self):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(8)))
        gt = FlowField(u=rng.normal(0, 2, (40, 40)), v=rng.normal(0, 2, (40, 40)))
        pred = FlowField(u=gt.u + rng.normal(0, 0.3, (40, 40)), v=gt.v + rng.normal(0, 0.3, (40, 40)))
        unc = UncertaintyField(sigma_u=rng.uniform(0.1, 1, (40, 40)), sigma_v=rng.uniform(0.1, 1, (40, 40)))
        return pred, gt, unc

    def test_report_fields(self):
        pred, gt, unc = self._fixture()
        report, curve = evaluate_fields(pred, gt, unc, k_sigma=2.0, n_fractions=40)
        assert 0.0 <= report.coverage <= 1.0
        assert -1.0 <= report.cc <= 1.0
        assert report.auc > 0.0
        assert report.n_points == 2 * 40 * 40
        assert report.k_sigma == 2.0
        assert curve.n_fractions == 40

    def test_csv_export_round_trip(self, tmp_path):
        pred, gt, unc = self._fixture()
        _, curve = evaluate_fields(pred, gt, unc)
        path = tmp_path / "curve.csv"
        curve_to_csv(curve, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "fraction,normalized_error,oracle_error"
        assert len(lines) == 1 + curve.n_fractions
        last = lines[-1].split(",")
        assert float(last[0]) == 1.0 and float(last[1]) == 1.0

    def test_json_export_keys(self, tmp_path):
        import json

        pred, gt, unc = self._fixture()
        report, _ = evaluate_fields(pred, gt, unc)
        path = tmp_path / "report.json"
        report_to_json(report, path)
        data = json.loads(path.read_text())
        assert set(data) == {
            "coverage", "cc", "auc", "n_points", "k_sigma", "coverage_u", "coverage_v",
        }

    def test_svg_export_is_self_contained(self, tmp_path):
        pred, gt, unc = self._fixture()
        _, curve = evaluate_fields(pred, gt, unc)
        path = tmp_path / "curve.svg"
        curve_to_svg(curve, path, title="fixture")
        text = path.read_text()
        assert text.startswith("<svg")
        assert text.count("<polyline") == 2
        assert "http" not in text.replace("http://www.w3.org/2000/svg", "")

    def test_shape_mismatch_rejected(self):
        pred, gt, unc = self._fixture()
        bad = UncertaintyField(sigma_u=np.ones((10, 10)), sigma_v=np.ones((10, 10)))
        with pytest.raises(DimensionError):
            evaluate_fields(pred, gt, bad)
