import numpy as np
import pandas as pd
import pytest

from shiftscan.errors import EmptyTableError, ParseError, SchemaError
from shiftscan.tables import (
    Attribute,
    TableSchema,
    concat_tables,
    load_schema,
    load_table,
    save_schema,
    save_table,
    split_by_timestamp,
)

from conftest import csv_stream, make_schema, make_table

FIVE_FEATURES = make_schema(
    ("AdvancedPurchase", "numeric"),
    ("LengthOfStay", "numeric"),
    ("GroupSize", "numeric"),
    ("TotalDuration", "numeric"),
    ("TripType", "categorical"),
    ("y", "numeric", "outcome"),
)


class TestSchema:
    def test_duplicate_names_rejected(self):
        with pytest.raises(SchemaError, match="duplicate"):
            make_schema(("a", "numeric"), ("a", "categorical"))

    def test_two_outcomes_rejected(self):
        with pytest.raises(SchemaError, match="outcome"):
            make_schema(("a", "numeric", "outcome"), ("b", "numeric", "outcome"))

    def test_unknown_kind_rejected(self):
        with pytest.raises(SchemaError):
            Attribute("a", "integer")

    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "schema.json"
        save_schema(FIVE_FEATURES, path)
        assert load_schema(path) == FIVE_FEATURES

    def test_role_accessors(self):
        schema = make_schema(("t", "categorical", "timestamp"), ("id", "categorical", "identifier"),
                             ("x", "numeric"), ("y", "numeric", "outcome"))
        assert schema.timestamp.name == "t"
        assert schema.identifier.name == "id"
        assert schema.outcome.name == "y"
        assert schema.feature_names() == ["x"]


class TestLoadTable:
    def test_three_line_file(self):
        schema = make_schema(("AdvancedPurchase", "numeric"), ("y", "numeric", "outcome"))
        table = load_table(csv_stream("AdvancedPurchase,y\n1,0\n2,1\n3,0\n"), schema)
        assert len(table) == 3
        assert table.column("AdvancedPurchase").tolist() == [1.0, 2.0, 3.0]

    def test_missing_column_named(self):
        with pytest.raises(SchemaError, match="GroupSize"):
            load_table(csv_stream("AdvancedPurchase,LengthOfStay,TotalDuration,TripType,y\n1,2,3,OneWay,0\n"),
                       FIVE_FEATURES)

    def test_unparseable_numeric_cites_row(self):
        schema = make_schema(("AdvancedPurchase", "numeric"), ("y", "numeric", "outcome"))
        with pytest.raises(ParseError, match="row 2"):
            load_table(csv_stream("AdvancedPurchase,y\n1,0\nabc,1\n"), schema)

    def test_empty_body(self):
        schema = make_schema(("a", "numeric"))
        with pytest.raises(EmptyTableError):
            load_table(csv_stream("a\n"), schema)

    def test_missing_markers(self):
        schema = make_schema(("a", "numeric"), ("b", "categorical"))
        table = load_table(csv_stream("a,b\nNA,NA\n1,x\n"), schema)
        assert np.isnan(table.column("a")[0])
        assert table.column("b")[0] == "NA"

    def test_extra_columns_ignored(self):
        schema = make_schema(("a", "numeric"))
        table = load_table(csv_stream("a,junk\n1,zzz\n"), schema)
        assert table.schema.names == ["a"]


class TestRoundTrip:
    def test_csv_round_trip_exact(self, tmp_path, rng):
        n = 64
        table = make_table(
            FIVE_FEATURES,
            AdvancedPurchase=rng.uniform(0, 300, n),
            LengthOfStay=rng.integers(0, 30, n).astype(float),
            GroupSize=rng.integers(1, 9, n).astype(float),
            TotalDuration=rng.uniform(40, 900, n),
            TripType=rng.choice(["OneWay", "RoundTrip"], n),
            y=rng.integers(0, 2, n).astype(float),
        )
        path = tmp_path / "t.csv"
        save_table(table, path)
        back = load_table(path, FIVE_FEATURES)
        for attr in FIVE_FEATURES:
            a, b = table.column(attr.name), back.column(attr.name)
            if attr.kind == "numeric":
                assert (a == b).all(), attr.name
            else:
                assert (a == b).all(), attr.name

    def test_round_trip_with_missing(self, tmp_path):
        schema = make_schema(("a", "numeric"), ("b", "categorical"))
        table = make_table(schema, a=[1.5, np.nan], b=["x", "NA"])
        path = tmp_path / "m.csv"
        save_table(table, path)
        back = load_table(path, schema)
        assert np.isnan(back.column("a")[1])
        assert back.column("b").tolist() == ["x", "NA"]


class TestSplitByTimestamp:
    schema = make_schema(("t", "categorical", "timestamp"), ("x", "numeric"))

    def test_boundary_splits(self):
        table = make_table(self.schema, t=["2020-01-05", "2020-03-02", "2020-09-15"], x=[1.0, 2.0, 3.0])
        before, after = split_by_timestamp(table, "2020-03-01")
        assert before.column("x").tolist() == [1.0]
        assert after.column("x").tolist() == [2.0, 3.0]

    def test_all_before(self):
        table = make_table(self.schema, t=["2020-01-05", "2020-02-01"], x=[1.0, 2.0])
        before, after = split_by_timestamp(table, "2021-01-01")
        assert len(before) == 2 and len(after) == 0

    def test_boundary_at_earliest(self):
        table = make_table(self.schema, t=["2020-01-05", "2020-02-01"], x=[1.0, 2.0])
        before, after = split_by_timestamp(table, "2020-01-05")
        assert len(before) == 0 and len(after) == 2

    def test_no_timestamp_attr(self):
        table = make_table(make_schema(("x", "numeric")), x=[1.0])
        with pytest.raises(SchemaError, match="timestamp"):
            split_by_timestamp(table, "2020-01-01")

    def test_partition_property(self, rng):
        n = 50
        days = rng.integers(1, 28, n)
        table = make_table(self.schema,
                           t=[f"2020-{1 + int(d) % 12:02d}-{1 + int(d):02d}" for d in days],
                           x=np.arange(n, dtype=float))
        before, after = split_by_timestamp(table, "2020-06-15")
        assert len(before) + len(after) == n
        merged = sorted(before.column("x").tolist() + after.column("x").tolist())
        assert merged == list(np.arange(n, dtype=float))


def test_concat_requires_same_schema():
    a = make_table(make_schema(("x", "numeric")), x=[1.0])
    b = make_table(make_schema(("z", "numeric")), z=[1.0])
    with pytest.raises(SchemaError):
        concat_tables([a, b])


def test_record_ids_from_identifier():
    schema = make_schema(("id", "categorical", "identifier"), ("x", "numeric"))
    table = make_table(schema, id=["r1", "r2"], x=[0.0, 1.0])
    assert table.record_ids == ["r1", "r2"]
