"""Synthetic three-segment series on [0, 5] with known change points."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .model import DomainError, OrderedPartition, TimeSeries

T_MAX = 5.0

DEFAULT_SHAPES = {
    1: ((0.0,), (4.0,), (-2.0,)),
    2: ((0.0, 1.0), (10.0, -2.0), (-2.0, 1.0)),
}


@dataclass(frozen=True)
class SimulationSpec:
    """Generator settings.

    ``segment_shape_params`` holds one polynomial coefficient tuple per
    segment, lowest order first; ``None`` selects the situation default
    (constant levels for situation 1, affine pieces for situation 2).
    Noise is drawn from ``numpy.random.Generator(Philox(seed))``, a
    counter-based 64-bit generator, with ziggurat normals.
    """

    situation: int = 1
    n: int = 300
    change_times: tuple[float, ...] = (1.0, 3.0)
    sigmas: tuple[float, ...] = (1.0, 1.5, 2.0)
    segment_shape_params: tuple[tuple[float, ...], ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.segment_shape_params is None and self.situation in DEFAULT_SHAPES:
            object.__setattr__(self, "segment_shape_params", DEFAULT_SHAPES[self.situation])
        object.__setattr__(self, "change_times", tuple(float(c) for c in self.change_times))
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if self.segment_shape_params is not None:
            object.__setattr__(
                self, "segment_shape_params", tuple(tuple(float(c) for c in seg) for seg in self.segment_shape_params)
            )
        problems = self.validate()
        if problems:
            raise DomainError("invalid simulation spec: " + "; ".join(problems))

    def validate(self) -> list[str]:
        problems = []
        if self.situation not in (1, 2):
            problems.append(f"situation must be 1 or 2, got {self.situation}")
        if int(self.n) != self.n or self.n < 3:
            problems.append(f"n must be an integer >= 3, got {self.n}")
        ct = np.asarray(self.change_times)
        if ct.size and (np.any(np.diff(ct) <= 0) or ct[0] <= 0 or ct[-1] >= T_MAX):
            problems.append(f"change_times must be strictly increasing inside (0, {T_MAX:g})")
        n_seg = ct.size + 1
        if len(self.sigmas) != n_seg:
            problems.append(f"sigmas needs {n_seg} entries, got {len(self.sigmas)}")
        elif any(not s > 0 for s in self.sigmas):
            problems.append("sigmas must be positive")
        shapes = self.segment_shape_params
        if shapes is None or len(shapes) != n_seg:
            problems.append(f"segment_shape_params needs {n_seg} entries")
        elif any(len(s) == 0 for s in shapes):
            problems.append("every segment needs at least one mean coefficient")
        if int(self.seed) != self.seed or self.seed < 0:
            problems.append(f"seed must be a non-negative integer, got {self.seed}")
        return problems

    @property
    def K(self) -> int:
        return len(self.change_times) + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["change_times"] = list(self.change_times)
        d["sigmas"] = list(self.sigmas)
        d["segment_shape_params"] = [list(s) for s in self.segment_shape_params]
        d["generator"] = "numpy Philox (counter-based, 64-bit) + ziggurat standard normal"
        return d


@dataclass(frozen=True)
class LabeledSeries:
    series: TimeSeries
    true_partition: OrderedPartition
    spec: SimulationSpec
    mean: np.ndarray = field(repr=False, default=None)


def true_labels(t, change_times) -> np.ndarray:
    """0-based segment index: number of change times strictly before each ``t``."""
    return np.searchsorted(np.asarray(change_times, dtype=float), np.asarray(t, dtype=float), side="left")


def simulate(spec: SimulationSpec) -> LabeledSeries:
    n = int(spec.n)
    t = T_MAX * np.arange(n) / (n - 1)
    labels = true_labels(t, spec.change_times)
    mean = np.empty(n)
    for k, coefs in enumerate(spec.segment_shape_params):
        idx = labels == k
        mean[idx] = np.polynomial.polynomial.polyval(t[idx], coefs)
    rng = np.random.Generator(np.random.Philox(int(spec.seed)))
    eps = rng.standard_normal(n)
    y = mean + np.asarray(spec.sigmas)[labels] * eps
    partition = OrderedPartition.from_labels(labels, spec.K)
    return LabeledSeries(TimeSeries(t, y), partition, spec, mean)
