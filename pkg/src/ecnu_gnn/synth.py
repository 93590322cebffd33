"""Synthetic multivariate series with a planted dependency graph and injected faults.

Root sensors follow an AR(1) process plus a sinusoid. Every other sensor is
a lagged linear combination of its drivers plus white noise. Faults are
injected into the test span only, as sensor-reporting errors: they change
what a sensor reports but never propagate to the sensors it drives.

Fault kinds:
    offset: reading shifted by ``magnitude`` train standard deviations.
    freeze: reading stuck at the last value before the segment.
    swap:   sensor reports another sensor's (``partner``) reading.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import RawSeries
from .errors import ContractError

FAULT_KINDS = ("offset", "freeze", "swap")
BURN_IN = 200


@dataclass(frozen=True)
class Dependency:
    driver: int
    driven: int
    lag: int = 1
    weight: float = 1.0


@dataclass(frozen=True)
class Fault:
    start: int
    length: int
    sensors: tuple[int, ...]
    kind: str
    magnitude: float = 3.0
    partner: int | None = None


@dataclass(frozen=True)
class SynthSpec:
    n_sensors: int
    t_train: int
    t_test: int
    edges: tuple[Dependency, ...] = ()
    noise: float = 0.05
    faults: tuple[Fault, ...] = ()
    seed: int = 0
    ar_coef: float = 0.95
    ar_noise: float = 0.1
    period_range: tuple[float, float] = (40.0, 160.0)

    def __post_init__(self):
        n = self.n_sensors
        if n < 2 or self.t_train < 1 or self.t_test < 1:
            raise ContractError("need n_sensors >= 2 and positive train/test lengths")
        if self.noise < 0 or self.ar_noise < 0:
            raise ContractError("noise levels must be non-negative")
        for e in self.edges:
            if not (0 <= e.driver < n and 0 <= e.driven < n) or e.driver == e.driven:
                raise ContractError(f"bad dependency {e}")
            if e.lag < 1:
                raise ContractError(f"dependency lag must be >= 1: {e}")
        _topological_order(n, self.edges)
        for f in self.faults:
            if f.kind not in FAULT_KINDS:
                raise ContractError(f"unknown fault kind {f.kind!r}")
            if f.start < 0 or f.length < 1 or f.start + f.length > self.t_test:
                raise ContractError(f"fault segment outside the test span: {f}")
            if not f.sensors or any(not 0 <= s < n for s in f.sensors):
                raise ContractError(f"fault sensors out of range: {f}")
            if f.kind == "swap":
                partner = f.partner
                if partner is None or not 0 <= partner < n or partner in f.sensors:
                    raise ContractError(f"swap fault needs a distinct partner sensor: {f}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SynthSpec:
        d = dict(d)
        d["edges"] = tuple(Dependency(**e) for e in d.get("edges", ()))
        d["faults"] = tuple(
            Fault(**{**f, "sensors": tuple(f["sensors"])}) for f in d.get("faults", ())
        )
        if "period_range" in d:
            d["period_range"] = tuple(d["period_range"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> SynthSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SynthData:
    train: RawSeries
    test: RawSeries
    edges: list[Dependency] = field(default_factory=list)


def _topological_order(n: int, edges) -> list[int]:
    parents = {i: set() for i in range(n)}
    for e in edges:
        parents[e.driven].add(e.driver)
    order, done = [], set()
    while len(order) < n:
        ready = [i for i in range(n) if i not in done and parents[i] <= done]
        if not ready:
            raise ContractError("dependency edges contain a cycle")
        for i in ready:
            order.append(i)
            done.add(i)
    return order


def _clean_series(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.n_sensors
    total = BURN_IN + spec.t_train + spec.t_test
    drivers: dict[int, list[Dependency]] = {i: [] for i in range(n)}
    for e in spec.edges:
        drivers[e.driven].append(e)
    # Draw every random quantity up front, in a fixed order.
    periods = rng.uniform(*spec.period_range, size=n)
    phases = rng.uniform(0.0, 2 * np.pi, size=n)
    amplitudes = rng.uniform(0.5, 1.5, size=n)
    innovations = rng.standard_normal((n, total))
    noise = rng.standard_normal((n, total))
    t = np.arange(total)
    x = np.zeros((n, total))
    for i in _topological_order(n, spec.edges):
        if not drivers[i]:
            ar = np.zeros(total)
            for step in range(1, total):
                ar[step] = spec.ar_coef * ar[step - 1] + spec.ar_noise * innovations[i, step]
            x[i] = amplitudes[i] * np.sin(2 * np.pi * t / periods[i] + phases[i]) + ar
        else:
            acc = np.zeros(total)
            for e in drivers[i]:
                acc[e.lag :] += e.weight * x[e.driver, : total - e.lag]
            x[i] = acc + spec.noise * noise[i]
    return x[:, BURN_IN:]


def inject_faults(values: np.ndarray, faults, scale: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply faults to an (N, T) test block; returns (faulty values, labels)."""
    clean = values
    out = values.copy()
    labels = np.zeros(values.shape[1], dtype=np.int64)
    for f in faults:
        seg = slice(f.start, f.start + f.length)
        for s in f.sensors:
            if f.kind == "offset":
                out[s, seg] = clean[s, seg] + f.magnitude * scale[s]
            elif f.kind == "freeze":
                out[s, seg] = clean[s, max(f.start - 1, 0)]
            else:
                out[s, seg] = clean[f.partner, seg]
        labels[seg] = 1
    return out, labels


def generate(spec: SynthSpec) -> SynthData:
    rng = np.random.default_rng(spec.seed)
    x = _clean_series(spec, rng)
    train_values = x[:, : spec.t_train]
    test_clean = x[:, spec.t_train :]
    scale = train_values.std(axis=1)
    test_values, labels = inject_faults(test_clean, spec.faults, scale)
    names = [f"s{i}" for i in range(spec.n_sensors)]
    train = RawSeries(names, train_values.copy())
    test = RawSeries(
        list(names),
        test_values,
        labels=labels,
        ticks=np.arange(spec.t_train, spec.t_train + spec.t_test, dtype=np.int64),
    )
    return SynthData(train=train, test=test, edges=list(spec.edges))


def default_spec(seed: int = 0, t_train: int = 5000, t_test: int = 2000) -> SynthSpec:
    """Ten sensors, eight planted dependencies, 5% faulty test ticks."""
    edges = (
        Dependency(0, 4, 1, 1.0),
        Dependency(1, 5, 2, -0.8),
        Dependency(2, 6, 1, 0.9),
        Dependency(0, 6, 2, 0.5),
        Dependency(3, 7, 1, 1.0),
        Dependency(4, 8, 1, 0.7),
        Dependency(5, 9, 1, 0.8),
        Dependency(3, 9, 2, -0.6),
    )
    seg = t_test * 5 // 100 // 5
    gap = t_test // 6
    faults = (
        Fault(1 * gap, seg, (4,), "offset", magnitude=3.0),
        Fault(2 * gap, seg, (6,), "freeze"),
        Fault(3 * gap, seg, (8,), "swap", partner=2),
        Fault(4 * gap, seg, (9,), "offset", magnitude=-3.0),
        Fault(5 * gap, seg, (7,), "swap", partner=1),
    )
    return SynthSpec(
        n_sensors=10, t_train=t_train, t_test=t_test, edges=edges, faults=faults,
        noise=0.02, seed=seed,
    )


def write_edges(edges, path) -> None:
    lines = ["# driver driven lag weight"]
    lines += [f"{e.driver} {e.driven} {e.lag} {e.weight!r}" for e in edges]
    Path(path).write_text("\n".join(lines) + "\n")
