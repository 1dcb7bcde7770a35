import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groupcal import (BinningScheme, Dataset, Group, Grouping, KernelSpec, ValidationError,
                      ace, brier, brier_decomposition, ece, global_score, kernel_distributions,
                      knn_groups, local_errors, maximum, mce, mean, mlce, prediction_bins,
                      range_dev, std_dev, superquantile_dev, cvar)

from conftest import random_dataset

TWO = BinningScheme(2)


class TestBinnedScores:
    def test_four_point_values(self, four_point):
        assert ece(four_point, TWO).value == pytest.approx(0.25, abs=1e-15)
        assert ace(four_point, TWO).value == pytest.approx(0.25, abs=1e-15)
        assert mce(four_point, TWO).value == pytest.approx(0.3, abs=1e-15)

    def test_single_bin(self, four_point):
        assert ece(four_point, BinningScheme(1)).value == pytest.approx(0.25, abs=1e-15)

    def test_perfect_predictor(self):
        ds = Dataset([[0.0], [1.0], [2.0]], [0, 1, 1], [0.0, 1.0, 1.0])
        for f in (ece, ace, mce):
            assert f(ds, BinningScheme(5)).value == 0.0

    def test_ace_weighs_bins_equally(self):
        # bin [0, .5) holds 3 points with error 0.3, bin [.5, 1] one point with error 0.2
        ds = Dataset([[0.0], [1.0], [2.0], [3.0]], [0, 0, 0, 1], [0.3, 0.3, 0.3, 0.8])
        assert ece(ds, TWO).value == pytest.approx(0.75 * 0.3 + 0.25 * 0.2, abs=1e-15)
        assert ace(ds, TWO).value == pytest.approx(0.5 * 0.3 + 0.5 * 0.2, abs=1e-15)

    def test_report_table(self, four_point):
        rep = ece(four_point, TWO)
        assert [r.size for r in rep.groups] == [2, 2]
        assert [r.signed for r in rep.groups] == pytest.approx([-0.2, -0.3], abs=1e-15)
        assert [r.absolute for r in rep.groups] == pytest.approx([0.2, 0.3], abs=1e-15)
        assert rep.grouping["edges"] == [0.0, 0.5, 1.0]
        assert rep.dataset["n"] == 4
        assert rep.recompute() == pytest.approx(rep.value, abs=1e-9)

    def test_preset_matches_general_entry_point(self, four_point):
        g = prediction_bins(four_point, TWO, measure="empirical")
        assert global_score(four_point, g, "absolute", mean()).value == ece(four_point, TWO).value


class TestGlobalScore:
    def test_fairness_range(self, four_point):
        g = prediction_bins(four_point, TWO)
        rep = global_score(four_point, g, "signed", range_dev())
        assert rep.value == pytest.approx(0.1, abs=1e-15)

    def test_constant_errors(self):
        ds = Dataset([[0.0], [1.0], [2.0], [3.0]], [0, 1, 0, 1], [0.1, 0.9, 0.1, 0.9])
        g = Grouping("partition", (Group((0, 1)), Group((2, 3))), 4)
        for agg in (std_dev(), range_dev(), superquantile_dev(0.5)):
            assert global_score(ds, g, "signed", agg).value == 0.0
        for agg in (mean(), maximum(), cvar(0.4)):
            assert global_score(ds, g, "signed", agg).value == pytest.approx(0.0, abs=1e-15)

    def test_signedness_validated(self, four_point):
        with pytest.raises(ValidationError):
            global_score(four_point, prediction_bins(four_point, TWO), "both", mean())

    def test_weighted_rows_have_no_size(self, four_point):
        g = kernel_distributions(four_point, KernelSpec("gaussian", 0.5))
        rep = global_score(four_point, g, "signed", std_dev())
        assert all(r.size is None for r in rep.groups)
        assert [r.anchor for r in rep.groups] == [0, 1, 2, 3]
        assert rep.recompute() == pytest.approx(rep.value, abs=1e-9)


class TestBrier:
    def test_values(self, four_point):
        assert brier(four_point) == pytest.approx(0.15, abs=1e-15)
        ds = Dataset([[0.0], [1.0]], [0, 1], [0.5, 0.5])
        assert brier(ds) == 0.25
        assert brier(Dataset([[0.0], [1.0]], [0, 1], [0.0, 1.0])) == 0.0

    def test_distinct_inputs(self, four_point):
        cal, ref = brier_decomposition(four_point, "inputs")
        assert cal == pytest.approx(brier(four_point), abs=1e-15) and ref == 0.0

    def test_bayes_matching_predictor(self):
        ds = Dataset([[0.0], [0.0], [0.0], [1.0]], [0, 1, 1, 1], [2 / 3, 2 / 3, 2 / 3, 1.0])
        cal, ref = brier_decomposition(ds, "inputs")
        assert cal == pytest.approx(0.0, abs=1e-15)
        assert ref == pytest.approx(brier(ds), abs=1e-15)

    def test_duplicate_pair(self):
        cal, ref = brier_decomposition(Dataset([[1.0], [1.0]], [0, 1], [0.5, 0.5]), "inputs")
        assert (cal, ref) == (0.0, 0.25)

    def test_unknown_key(self, four_point):
        with pytest.raises(ValidationError):
            brier_decomposition(four_point, "labels")


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["inputs", "predictions"]))
def test_brier_identity(seed, by):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, dup_frac=0.4, levels=5)
    cal, ref = brier_decomposition(ds, by)
    assert cal + ref == pytest.approx(brier(ds), rel=1e-10, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10))
def test_ordering_and_permutation_invariance(seed, K):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng)
    scheme = BinningScheme(K)
    e, m = ece(ds, scheme).value, mce(ds, scheme).value
    assert m >= e - 1e-15 and e >= 0
    perm = rng.permutation(ds.n)
    shuffled = Dataset(ds.features[perm], ds.labels[perm], ds.predictions[perm])
    assert ece(shuffled, scheme).value == pytest.approx(e, abs=1e-12)


class TestLocalErrors:
    def test_huge_bandwidth(self, four_point):
        g = kernel_distributions(four_point, KernelSpec("boxcar", 1e3))
        errs = [e for _, e in local_errors(four_point, g)]
        np.testing.assert_allclose(errs, -0.25, atol=1e-12)

    def test_single_neighbour(self, four_point):
        out = local_errors(four_point, knn_groups(four_point, 1))
        assert out == [(i, pytest.approx(four_point.residuals[i], abs=1e-15)) for i in range(4)]

    def test_all_neighbours(self, four_point):
        errs = [e for _, e in local_errors(four_point, knn_groups(four_point, 4))]
        np.testing.assert_allclose(errs, -0.25, atol=1e-15)

    def test_partition_rejected(self, four_point):
        with pytest.raises(ValidationError):
            local_errors(four_point, prediction_bins(four_point, TWO))


class TestMlce:
    def test_signed_max_of_bin_means(self, four_point):
        rep = mlce(four_point, KernelSpec("gaussian", 1e6), TWO)
        assert rep.value == pytest.approx(-0.2, abs=1e-9)
        assert rep.notes == {"absolute_variant": False}

    def test_absolute_variant(self, four_point):
        rep = mlce(four_point, KernelSpec("gaussian", 1e6), BinningScheme(1), absolute=True)
        assert rep.value == pytest.approx(0.25, abs=1e-9)
        assert rep.notes["absolute_variant"] is True

    def test_perfect_predictor(self):
        ds = Dataset([[0.0], [1.0], [2.0]], [0, 1, 1], [0.0, 1.0, 1.0])
        assert mlce(ds, KernelSpec("gaussian", 0.7), TWO).value == 0.0
