"""Synthetic customer / ancillary interaction data with controllable shift.

Customers arrive per flight by a non-homogeneous Poisson process
(thinning), see a price drawn uniformly from the flight's band, and
buy with binary-logit probability sigma(b0 + bp * price + bt * time_to_
departure). Each flight tracks cumulative seats sold; once capacity is
reached the purchase outcome is forced to 0. The recorded
AdvancedPurchase value is the time remaining before departure at the
arrival instant, so shifting the arrival intensity moves its
distribution and creates labelled covariate shift between generated
train and test sets.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import pandas as pd

from .errors import SchemaError
from .tables import Attribute, ObservationTable, TableSchema


@dataclass(frozen=True)
class FlightConfig:
    flight_id: str
    capacity: int
    price_min: float
    price_max: float
    horizon: float

    def __post_init__(self):
        if not 0 < self.price_min <= self.price_max:
            raise ValueError(f"need 0 < price_min <= price_max, got [{self.price_min}, {self.price_max}]")
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")


@dataclass(frozen=True)
class IntensityFunction:
    """Piecewise-constant arrival rate over [0, horizon].

    ``rates[i]`` applies on [breakpoints[i], breakpoints[i+1]); the rate
    is 0 outside the covered range.
    """

    breakpoints: tuple
    rates: tuple

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        rt = tuple(float(r) for r in self.rates)
        if len(bp) != len(rt) + 1:
            raise ValueError("need len(breakpoints) == len(rates) + 1")
        if any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if any(not np.isfinite(r) or r < 0 for r in rt):
            raise ValueError("rates must be finite and >= 0")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "rates", rt)

    @property
    def lambda_max(self) -> float:
        return max(self.rates) if self.rates else 0.0

    def rate_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        inside = (idx >= 0) & (idx < len(self.rates)) & (t < self.breakpoints[-1])
        return np.where(inside, np.asarray(self.rates + (0.0,))[np.clip(idx, 0, len(self.rates))], 0.0)

    def integral(self, a: float, b: float) -> float:
        """Exact integral of the rate over [a, b]."""
        total = 0.0
        for lo, hi, r in zip(self.breakpoints, self.breakpoints[1:], self.rates):
            total += r * max(0.0, min(b, hi) - max(a, lo))
        return total


@dataclass(frozen=True)
class ChoiceParams:
    """Binary-logit purchase model coefficients."""

    beta_0: float = 1.0
    beta_price: float = -0.02
    beta_time: float = -0.0002

    def utility(self, price, time_to_departure):
        return self.beta_0 + self.beta_price * np.asarray(price) + self.beta_time * np.asarray(time_to_departure)

    def purchase_probability(self, price, time_to_departure):
        return 1.0 / (1.0 + np.exp(-self.utility(price, time_to_departure)))


def simulate_arrivals(intensity: IntensityFunction, horizon: float, rng) -> np.ndarray:
    """Arrival times on [0, horizon] by Lewis-Shedler thinning.

    Candidates come from a homogeneous process at the maximum rate; each
    is kept with probability rate(t) / max rate. Returns sorted times;
    a zero intensity yields an empty array.
    """
    rng = np.random.default_rng(rng)
    lam_max = intensity.lambda_max
    if lam_max <= 0:
        return np.empty(0)
    times = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / lam_max)
        if t > horizon:
            break
        if rng.random() * lam_max < float(intensity.rate_at(t)):
            times.append(t)
    return np.asarray(times)


def sample_price(flight: FlightConfig, rng) -> float:
    """Uniform draw from the flight's allowed price band."""
    return float(np.random.default_rng(rng).uniform(flight.price_min, flight.price_max))


def simulate_choice(params: ChoiceParams, price: float, time_to_departure: float, rng) -> int:
    """Bernoulli purchase decision from the logit utility."""
    p = float(params.purchase_probability(price, time_to_departure))
    return int(np.random.default_rng(rng).random() < p)


SIM_COLUMNS = ("record_id", "flight_id", "AdvancedPurchase", "Sold", "Price", "y")


def sim_schema() -> TableSchema:
    """Schema of generated tables (all simulator columns)."""
    return TableSchema([
        Attribute("record_id", "categorical", "identifier"),
        Attribute("flight_id", "categorical", "feature"),
        Attribute("AdvancedPurchase", "numeric", "feature"),
        Attribute("Sold", "numeric", "feature"),
        Attribute("Price", "numeric", "feature"),
        Attribute("y", "numeric", "outcome"),
    ])


def analysis_schema() -> TableSchema:
    """Detector-facing schema: the features the study scans and models."""
    return TableSchema([
        Attribute("record_id", "categorical", "identifier"),
        Attribute("AdvancedPurchase", "numeric", "feature"),
        Attribute("Sold", "numeric", "feature"),
        Attribute("y", "numeric", "outcome"),
    ])


def _flight_rng(seed: int, flight_id: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, zlib.crc32(flight_id.encode())]))


def generate_dataset(flights, intensity: IntensityFunction, choice: ChoiceParams,
                     seed: int = 0, tag: str = "") -> ObservationTable:
    """Simulate every flight and concatenate the interaction records.

    Flights are independent (each seeded from the master seed and its
    id) and processed in ascending arrival order; Sold increments on
    purchase and caps at capacity, after which y is forced to 0.
    AdvancedPurchase is the time remaining before departure.
    """
    frames = []
    for flight in flights:
        rng = _flight_rng(seed, flight.flight_id)
        arrivals = simulate_arrivals(intensity, flight.horizon, rng)
        sold = 0
        rows = []
        for t in arrivals:
            time_left = flight.horizon - t
            price = float(rng.uniform(flight.price_min, flight.price_max))
            if sold >= flight.capacity:
                y = 0
            else:
                p = float(choice.purchase_probability(price, time_left))
                y = int(rng.random() < p)
            rows.append((flight.flight_id, time_left, float(sold), price, float(y)))
            sold += y
        frames.append(pd.DataFrame(rows, columns=SIM_COLUMNS[1:]))
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=SIM_COLUMNS[1:])
    df.insert(0, "record_id", [f"{tag}{i}" for i in range(len(df))])
    return ObservationTable(sim_schema(), df, validate=False)


@dataclass
class LeakResult:
    """Treatment-training corpus built by leaking test rows into train."""

    train_augmented: ObservationTable
    leaked_positions: np.ndarray
    test: ObservationTable

    @property
    def leaked_ids(self) -> list[str]:
        ids = self.test.record_ids
        return [ids[i] for i in self.leaked_positions]


def leak_split(train: ObservationTable, test: ObservationTable,
               fraction: float, seed: int = 0) -> LeakResult:
    """Sample floor(fraction * N_test) test rows into the training corpus.

    The original test table is kept whole for evaluation; the sampled
    row positions are recorded so reports can distinguish leaked rows.
    """
    if not 0 <= fraction <= 1:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 40]))
    n_leak = int(fraction * len(test))
    positions = np.sort(rng.choice(len(test), size=n_leak, replace=False))
    if n_leak == 0:
        return LeakResult(train, positions, test)
    leaked = test.select_rows(positions)
    df = pd.concat([train.df, leaked.df], ignore_index=True)
    return LeakResult(ObservationTable(train.schema, df, validate=False), positions, test)


@dataclass
class Scenario:
    """Paired train/test generation setup with a controllable shift."""

    name: str
    flights: list
    choice: ChoiceParams
    train_intensity: IntensityFunction
    test_intensity: IntensityFunction
    test_choice: ChoiceParams | None = None
    leak_fraction: float = 0.4
    metadata: dict = field(default_factory=dict)

    def generate(self, seed: int = 0) -> tuple[ObservationTable, ObservationTable]:
        """Deterministic (train, test) tables for the given master seed."""
        train = generate_dataset(self.flights, self.train_intensity, self.choice, seed=seed, tag="tr")
        test_choice = self.test_choice if self.test_choice is not None else self.choice
        test = generate_dataset(self.flights, self.test_intensity, test_choice, seed=seed + 1, tag="te")
        return train, test

    @classmethod
    def from_json(cls, doc: dict) -> "Scenario":
        def intensity(entry):
            return IntensityFunction(tuple(entry["breakpoints"]), tuple(entry["rates"]))

        flights = [FlightConfig(**f) for f in doc["flights"]]
        test_choice = ChoiceParams(**doc["test_choice"]) if "test_choice" in doc else None
        return cls(
            name=doc.get("name", "scenario"),
            flights=flights,
            choice=ChoiceParams(**doc["choice"]),
            train_intensity=intensity(doc["train_intensity"]),
            test_intensity=intensity(doc["test_intensity"]),
            test_choice=test_choice,
            leak_fraction=float(doc.get("leak_fraction", 0.4)),
            metadata=doc.get("metadata", {}),
        )

    def to_json(self) -> dict:
        doc = {
            "name": self.name,
            "flights": [vars(f).copy() for f in self.flights],
            "choice": vars(self.choice).copy(),
            "train_intensity": {"breakpoints": list(self.train_intensity.breakpoints),
                                "rates": list(self.train_intensity.rates)},
            "test_intensity": {"breakpoints": list(self.test_intensity.breakpoints),
                               "rates": list(self.test_intensity.rates)},
            "leak_fraction": self.leak_fraction,
        }
        if self.test_choice is not None:
            doc["test_choice"] = vars(self.test_choice).copy()
        if self.metadata:
            doc["metadata"] = self.metadata
        return doc


def load_scenario(source) -> Scenario:
    """Load a scenario from a JSON path or a built-in name.

    Built-ins ship with the package: ``scenario-paper`` (arrival-rate
    shift plus a purchase-propensity shift in the test period) and
    ``scenario-null`` (test generated with the training parameters).
    """
    name = str(source)
    if name.startswith("scenario-") and not name.endswith(".json"):
        ref = resources.files("shiftscan.scenarios").joinpath(f"{name}.json")
        if not ref.is_file():
            raise SchemaError(f"unknown built-in scenario {name!r}")
        return Scenario.from_json(json.loads(ref.read_text()))
    with open(source, "r", encoding="utf-8") as fh:
        return Scenario.from_json(json.load(fh))
