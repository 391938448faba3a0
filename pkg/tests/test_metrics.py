import math

import numpy as np
import pytest

from mandicast.metrics import (
    EvalPairs,
    EvalReport,
    MetricError,
    build_report,
    cov,
    mae,
    pearson,
    r2,
    read_report_csv,
    rmse,
    write_report_csv,
)


# independent brute-force evaluations of the printed formulas, pure python
def mae_oracle(y, x):
    return sum(abs(yi - xi) for yi, xi in zip(y, x)) / len(y)


def rmse_oracle(y, x):
    return math.sqrt(sum((yi - xi) ** 2 for yi, xi in zip(y, x)) / len(y))


def cov_oracle(y, x):
    return 100.0 * rmse_oracle(y, x) / (sum(x) / len(x))


def r2_oracle(y, x):
    y_bar = sum(y) / len(y)
    return 1.0 - sum((yi - xi) ** 2 for yi, xi in zip(y, x)) / sum((yi - y_bar) ** 2 for yi in y)


def pearson_oracle(y, x):
    n = len(y)
    x_bar, y_bar = sum(x) / n, sum(y) / n
    num = sum((xi - x_bar) * (yi - y_bar) for xi, yi in zip(x, y))
    dx = math.sqrt(sum((xi - x_bar) ** 2 for xi in x))
    dy = math.sqrt(sum((yi - y_bar) ** 2 for yi in y))
    return num / (dx * dy)


def random_pairs(rng, n=20):
    x = rng.uniform(500, 3000, n)
    y = x + rng.normal(0, 250, n)
    return EvalPairs(y, x)


class TestAgainstOracles:
    def test_hand_examples(self):
        assert mae(EvalPairs([2, 4], [1, 2])) == pytest.approx(1.5)
        assert rmse(EvalPairs([3], [1])) == pytest.approx(2.0)
        assert cov(EvalPairs([110], [100])) == pytest.approx(10.0)
        assert mae(EvalPairs([1, 1], [1, 1])) == 0.0
        assert rmse(EvalPairs([0, 0], [1, 3])) == pytest.approx(math.sqrt(5.0))

    def test_100_random_instances_match_brute_force(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            pairs = random_pairs(rng, n=int(rng.integers(2, 40)))
            y, x = pairs.predicted.tolist(), pairs.actual.tolist()
            assert mae(pairs) == pytest.approx(mae_oracle(y, x), abs=1e-9)
            assert rmse(pairs) == pytest.approx(rmse_oracle(y, x), abs=1e-9)
            assert cov(pairs) == pytest.approx(cov_oracle(y, x), abs=1e-9)
            assert r2(pairs) == pytest.approx(r2_oracle(y, x), abs=1e-9)
            assert pearson(pairs) == pytest.approx(pearson_oracle(y, x), abs=1e-9)


class TestAlgebraicInvariants:
    def test_fuzz_invariants(self):
        rng = np.random.default_rng(99)
        for _ in range(1000):
            pairs = random_pairs(rng, n=int(rng.integers(2, 25)))
            m, r = mae(pairs), rmse(pairs)
            assert 0.0 <= m <= r + 1e-12
            assert abs(pearson(pairs)) <= 1.0 + 1e-12
            assert cov(pairs) >= 0.0
            # CoV is invariant under positive rescaling of both series
            c = float(rng.uniform(0.1, 10.0))
            scaled = EvalPairs(pairs.predicted * c, pairs.actual * c)
            assert cov(scaled) == pytest.approx(cov(pairs), rel=1e-9)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        pairs = random_pairs(rng, 30)
        perm = rng.permutation(30)
        shuffled = EvalPairs(pairs.predicted[perm], pairs.actual[perm])
        assert mae(shuffled) == pytest.approx(mae(pairs), rel=1e-12)
        assert rmse(shuffled) == pytest.approx(rmse(pairs), rel=1e-12)
        assert r2(shuffled) == pytest.approx(r2(pairs), rel=1e-12)
        assert pearson(shuffled) == pytest.approx(pearson(pairs), rel=1e-12)

    def test_mae_translation_invariant(self):
        rng = np.random.default_rng(2)
        pairs = random_pairs(rng)
        moved = EvalPairs(pairs.predicted + 500, pairs.actual + 500)
        assert mae(moved) == pytest.approx(mae(pairs), rel=1e-12)

    def test_pearson_affine_invariance(self):
        rng = np.random.default_rng(3)
        pairs = random_pairs(rng)
        scaled = EvalPairs(2.0 * pairs.predicted + 3.0, pairs.actual)
        assert pearson(scaled) == pytest.approx(pearson(pairs), rel=1e-9)


class TestDefinitions:
    def test_perfect_prediction(self):
        pairs = EvalPairs([10.0, 20, 30], [10.0, 20, 30])
        assert rmse(pairs) == mae(pairs) == cov(pairs) == 0.0
        assert r2(pairs) == 1.0
        assert pearson(pairs) == pytest.approx(1.0)

    def test_linear_relations(self):
        x = np.array([1.0, 2, 3, 4])
        assert pearson(EvalPairs(2 * x + 3, x)) == pytest.approx(1.0)
        assert pearson(EvalPairs(-x, x)) == pytest.approx(-1.0)

    def test_r2_uses_predicted_variance_denominator(self):
        y = [1.0, 2.0, 4.0]
        x = [1.0, 2.0, 3.0]
        assert r2(EvalPairs(y, x)) == pytest.approx(r2_oracle(y, x), abs=1e-12)
        # conventional flag switches to the actual-variance denominator
        y_bar, x_bar = 7 / 3, 2.0
        conventional = 1 - 1.0 / sum((xi - x_bar) ** 2 for xi in x)
        assert r2(EvalPairs(y, x), conventional=True) == pytest.approx(conventional, abs=1e-12)

    def test_zero_residual_boundary(self):
        # residual sum equals denominator sum -> exactly 0
        y = [0.0, 2.0]
        x = [1.0, 1.0]  # residuals 1,1 sum 2; y variance sum 2
        assert r2(EvalPairs(y, x)) == pytest.approx(0.0, abs=1e-12)


class TestErrors:
    def test_empty_pairs(self):
        with pytest.raises(MetricError, match="empty"):
            EvalPairs([], [])

    def test_length_mismatch(self):
        with pytest.raises(MetricError, match="mismatch"):
            EvalPairs([1.0], [1.0, 2.0])

    def test_non_finite(self):
        with pytest.raises(MetricError, match="non-finite"):
            EvalPairs([np.nan], [1.0])

    def test_cov_zero_mean(self):
        with pytest.raises(MetricError, match="mean"):
            cov(EvalPairs([1.0, 2.0], [1.0, -1.0]))

    def test_r2_zero_denominator(self):
        with pytest.raises(MetricError, match="variance"):
            r2(EvalPairs([5.0, 5.0], [1.0, 2.0]))

    def test_pearson_zero_variance(self):
        with pytest.raises(MetricError, match="variance"):
            pearson(EvalPairs([1.0, 2.0], [3.0, 3.0]))


class TestReport:
    def test_perfect_report(self):
        pairs = EvalPairs([10.0, 20, 30], [10.0, 20, 30])
        report = build_report({4: pairs})
        row = report.rows[4]
        assert row.rmse == row.mae == row.cov_percent == 0.0
        assert row.r2 == 1.0 and row.pearson == pytest.approx(1.0)

    def test_single_horizon(self):
        rng = np.random.default_rng(4)
        report = build_report({4: random_pairs(rng)})
        assert list(report.rows) == [4]

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        report = build_report({n: random_pairs(rng) for n in (4, 6, 9, 15, 30)})
        path = tmp_path / "report.csv"
        write_report_csv(path, report)
        back = read_report_csv(path)
        assert back.rows == report.rows
        header = path.read_text().splitlines()[0]
        assert header == "horizon_days,rmse,mae,cov_percent,r2,pearson"
