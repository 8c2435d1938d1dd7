import io

import numpy as np
import pandas as pd
import pytest

from shiftscan.tables import Attribute, ObservationTable, TableSchema


def make_schema(*specs):
    """specs like ("f1", "numeric") or ("y", "numeric", "outcome")."""
    return TableSchema([Attribute(*s) for s in specs])


def make_table(schema, **columns):
    return ObservationTable(schema, pd.DataFrame(columns))


def categorical_table(column_values: dict):
    schema = make_schema(*[(name, "categorical") for name in column_values])
    return make_table(schema, **column_values)


def csv_stream(text: str) -> io.StringIO:
    return io.StringIO(text)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
