import numpy as np
import pytest

from shiftscan.binning import QuantileBinner, bin_index
from shiftscan.errors import EmptyTableError, FitError

from conftest import make_schema, make_table


def quantile_oracle(values, p):
    """Independent linear-interpolated quantile on sorted order statistics."""
    xs = sorted(values)
    h = (len(xs) - 1) * p
    lo = int(np.floor(h))
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


SCHEMA = make_schema(("x", "numeric"))


def fit_on(values, n_bins=4):
    return QuantileBinner(n_bins=n_bins, attributes=["x"]).fit(make_table(SCHEMA, x=values))


class TestFit:
    def test_octave_quartiles(self):
        values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
        binner = fit_on(values)
        expected = [quantile_oracle(values, p) for p in (0.25, 0.5, 0.75)]
        assert expected == [2.75, 4.5, 6.25]
        assert binner.edges_["x"].tolist() == expected
        assert bin_index(binner.edges_["x"], [5.0])[0] == 2

    def test_constant_column_single_bin(self):
        binner = fit_on([7.0, 7.0, 7.0])
        assert binner.edges_["x"].tolist() == []
        assert binner.n_categories("x") == 1

    def test_two_point_median(self):
        binner = fit_on([0.0, 100.0], n_bins=2)
        assert binner.edges_["x"].tolist() == [quantile_oracle([0.0, 100.0], 0.5)] == [50.0]
        assert bin_index(binner.edges_["x"], [49.0, 51.0]).tolist() == [0, 1]

    def test_all_missing_column(self):
        with pytest.raises(FitError, match="x"):
            fit_on([np.nan, np.nan])

    def test_empty_table(self):
        with pytest.raises(EmptyTableError):
            QuantileBinner(attributes=["x"]).fit(make_table(SCHEMA, x=[]))

    def test_too_few_bins(self):
        with pytest.raises(ValueError):
            fit_on([1.0, 2.0], n_bins=1)


class TestTransform:
    def test_below_and_above_edges(self):
        binner = fit_on([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
        out = binner.transform(make_table(SCHEMA, x=[1.0, 10.0]))
        assert out.column("x").tolist() == ["b0", "b3"]
        assert out.schema["x"].kind == "categorical"

    def test_empty_table_identity(self):
        binner = fit_on([1.0, 2.0, 3.0, 4.0])
        out = binner.transform(make_table(SCHEMA, x=[]))
        assert len(out) == 0
        assert out.schema["x"].kind == "categorical"

    def test_missing_to_na_token(self):
        binner = fit_on([1.0, 2.0, 3.0, 4.0])
        out = binner.transform(make_table(SCHEMA, x=[np.nan]))
        assert out.column("x").tolist() == ["NA"]

    def test_monotone(self, rng):
        values = rng.normal(size=200)
        binner = fit_on(values)
        xs = np.sort(rng.normal(size=500))
        bins = bin_index(binner.edges_["x"], xs)
        assert (np.diff(bins) >= 0).all()

    def test_balanced_population(self, rng):
        n = 400
        values = rng.permutation(np.linspace(0, 1, n))  # distinct values
        binner = fit_on(values)
        out = binner.transform(make_table(SCHEMA, x=values))
        tokens, counts = np.unique(out.column("x"), return_counts=True)
        assert len(tokens) == 4
        assert all(abs(c - n / 4) <= 1 for c in counts)


def test_json_round_trip(tmp_path):
    binner = fit_on([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
    path = tmp_path / "spec.json"
    binner.save(path)
    back = QuantileBinner.load(path)
    assert back.edges_["x"].tolist() == binner.edges_["x"].tolist()
