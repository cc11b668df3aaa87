"""Segmentation error and the error / runtime-scaling benchmark harness."""

from __future__ import annotations

import csv
import hashlib
import platform
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _accel
from .cem import CemConfig, cem_fit
from .em import EmConfig, em_fit
from .fisher import ConstantMean, Polynomial, fisher_segment
from .io import write_json
from .model import DomainError, OrderedPartition
from .simulate import SimulationSpec, simulate

ALGORITHMS = ("fisher", "em", "cem")
DEFAULT_N_LIST = (100, 300, 500, 700, 1000, 1500, 2000, 3000)
RATIO_TOLERANCE = 0.2


def segmentation_error(predicted: OrderedPartition, truth: OrderedPartition) -> float:
    """Percentage of points whose class differs; ordered labels align without matching."""
    if predicted.n != truth.n:
        raise DomainError(f"partitions cover different lengths ({predicted.n} vs {truth.n})")
    return 100.0 * float(np.mean(predicted.labels != truth.labels))


def _label_error(labels, truth: OrderedPartition) -> float:
    return 100.0 * float(np.mean(np.asarray(labels) != truth.labels))


@dataclass(frozen=True)
class BenchmarkPlan:
    """What to run. ``repeats`` datasets per (situation, n) cell.

    Situation 1 is fitted with constant means (p = 0), situation 2 with
    affine means (p = 1), both with K = 3. EM and CEM default to a single
    initialisation per trial so that timings measure one run.
    """

    n_list: tuple[int, ...] = DEFAULT_N_LIST
    situations: tuple[int, ...] = (1, 2)
    repeats: int = 20
    algorithms: tuple[str, ...] = ALGORITHMS
    em_config: EmConfig = field(default_factory=lambda: EmConfig(n_restarts=1))
    cem_config: CemConfig = field(default_factory=lambda: CemConfig(n_restarts=1))
    base_seed: int = 0
    K: int = 3
    jobs: int = 1
    timing: bool = True

    def __post_init__(self):
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "situations", tuple(int(s) for s in self.situations))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        problems = []
        if self.repeats < 1:
            problems.append("repeats must be >= 1")
        if not self.n_list or any(n < max(3, self.K) for n in self.n_list):
            problems.append(f"every n must be >= max(3, K={self.K})")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            problems.append("n_list must be strictly increasing")
        if not self.situations or any(s not in (1, 2) for s in self.situations):
            problems.append("situations must be drawn from {1, 2}")
        if not self.algorithms or any(a not in ALGORITHMS for a in self.algorithms):
            problems.append(f"algorithms must be drawn from {ALGORITHMS}")
        if self.jobs < 1:
            problems.append("jobs must be >= 1")
        if self.base_seed < 0:
            problems.append("base_seed must be non-negative")
        if problems:
            raise DomainError("invalid benchmark plan: " + "; ".join(problems))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_list"] = list(self.n_list)
        d["situations"] = list(self.situations)
        d["algorithms"] = list(self.algorithms)
        return d


@dataclass(frozen=True)
class TrialRecord:
    situation: int
    n: int
    trial: int
    algorithm: str
    seed: int
    seconds: float
    error_pct: float
    posterior_error_pct: float  # argmax-tau labels for em/cem; equals error_pct for fisher
    iterations: int
    failed: bool = False
    message: str = ""


@dataclass(frozen=True)
class CellSummary:
    situation: int
    n: int
    algorithm: str
    mean_seconds: float
    mean_error_pct: float
    std_error_pct: float
    mean_posterior_error_pct: float
    mean_iterations: float
    trials: int
    failures: int


@dataclass(frozen=True)
class BenchmarkResult:
    plan: BenchmarkPlan
    records: tuple[TrialRecord, ...]

    def cells(self) -> list[CellSummary]:
        """Aggregates recomputed from the per-trial records (failures excluded)."""
        out = []
        for s in self.plan.situations:
            for n in self.plan.n_list:
                for a in self.plan.algorithms:
                    recs = [r for r in self.records if (r.situation, r.n, r.algorithm) == (s, n, a)]
                    ok = [r for r in recs if not r.failed]
                    if ok:
                        err = np.array([r.error_pct for r in ok])
                        vals = (
                            float(np.mean([r.seconds for r in ok])),
                            float(err.mean()),
                            float(err.std(ddof=1)) if err.size > 1 else 0.0,
                            float(np.mean([r.posterior_error_pct for r in ok])),
                            float(np.mean([r.iterations for r in ok])),
                        )
                    else:
                        vals = (float("nan"),) * 5
                    out.append(CellSummary(s, n, a, *vals, trials=len(recs), failures=len(recs) - len(ok)))
        return out

    def cell(self, situation: int, n: int, algorithm: str) -> CellSummary:
        for c in self.cells():
            if (c.situation, c.n, c.algorithm) == (situation, n, algorithm):
                return c
        raise KeyError((situation, n, algorithm))


def trial_seed(base_seed: int, situation: int, n: int, trial: int) -> int:
    """``base_seed`` XOR a stable 63-bit hash of the cell coordinates."""
    h = hashlib.blake2b(f"{situation}:{n}:{trial}".encode(), digest_size=8).digest()
    return (int(base_seed) ^ int.from_bytes(h, "little")) & (2**63 - 1)


def _degree(situation: int) -> int:
    return 0 if situation == 1 else 1


def _fit(algorithm, series, K, degree, plan: BenchmarkPlan, seed: int):
    """Run one algorithm; returns (partition, posterior labels, iterations, seconds)."""
    if algorithm == "fisher":
        kind = ConstantMean() if degree == 0 else Polynomial(degree)
        t0 = time.perf_counter()
        res = fisher_segment(series, K, kind)
        dt = time.perf_counter() - t0
        return res.partition, res.partition.labels, 0, dt
    if algorithm == "em":
        cfg = EmConfig(**{**asdict(plan.em_config), "seed": seed % (2**32)})
        t0 = time.perf_counter()
        rep = em_fit(series, K, degree, cfg)
    else:
        cfg = CemConfig(**{**asdict(plan.cem_config), "seed": seed % (2**32)})
        t0 = time.perf_counter()
        rep = cem_fit(series, K, degree, cfg)
    dt = time.perf_counter() - t0
    return rep.partition, rep.posterior_labels, rep.n_iterations, dt


def _run_trial(plan: BenchmarkPlan, situation: int, n: int, trial: int) -> list[TrialRecord]:
    seed = trial_seed(plan.base_seed, situation, n, trial)
    data = simulate(SimulationSpec(situation=situation, n=n, seed=seed))
    out = []
    for a in plan.algorithms:
        try:
            part, post, its, dt = _fit(a, data.series, plan.K, _degree(situation), plan, seed)
            out.append(
                TrialRecord(
                    situation, n, trial, a, seed, dt,
                    segmentation_error(part, data.true_partition),
                    _label_error(post, data.true_partition),
                    its,
                )
            )
        except Exception as exc:  # recorded, excluded from means
            nan = float("nan")
            out.append(TrialRecord(situation, n, trial, a, seed, nan, nan, nan, 0, True, f"{type(exc).__name__}: {exc}"))
    return out


def warm_up(plan: BenchmarkPlan) -> None:
    """Trigger JIT compilation outside the timed region."""
    for s in plan.situations:
        _run_trial(BenchmarkPlan(n_list=(60,), situations=(s,), repeats=1, algorithms=plan.algorithms,
                                 em_config=plan.em_config, cem_config=plan.cem_config, K=plan.K), s, 60, 0)


def run_benchmark(plan: BenchmarkPlan | None = None, progress=None) -> BenchmarkResult:
    """Simulate ``repeats`` datasets per cell and run every algorithm on each.

    Only the fit call is timed (``time.perf_counter``). In timing mode
    trials run sequentially; otherwise ``plan.jobs`` worker processes are
    used. ``progress`` is an optional callable receiving each finished
    trial's records.
    """
    plan = plan or BenchmarkPlan()
    jobs = plan.jobs
    if plan.timing and jobs > 1:
        warnings.warn("timing mode runs trials sequentially; ignoring jobs > 1", stacklevel=2)
        jobs = 1
    tasks = [(s, n, r) for s in plan.situations for n in plan.n_list for r in range(plan.repeats)]
    warm_up(plan)
    records: list[TrialRecord] = []
    if jobs == 1:
        for s, n, r in tasks:
            recs = _run_trial(plan, s, n, r)
            records.extend(recs)
            if progress:
                progress(recs)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futures = [ex.submit(_run_trial, plan, s, n, r) for s, n, r in tasks]
            for fut in futures:
                recs = fut.result()
                records.extend(recs)
                if progress:
                    progress(recs)
    return BenchmarkResult(plan, tuple(records))


# -- scaling ------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingSummary:
    n_list: tuple[int, ...]
    slopes: dict  # algorithm -> fitted log-log slope
    ratios: dict  # "fisher/em" -> tuple of ratios over n_list
    monotone: dict  # "fisher/em" -> bool

    def to_dict(self) -> dict:
        return {
            "n_list": list(self.n_list),
            "slopes": dict(self.slopes),
            "ratios": {k: list(v) for k, v in self.ratios.items()},
            "monotone": dict(self.monotone),
        }


def loglog_slope(n_list, seconds) -> float:
    n = np.asarray(n_list, dtype=float)
    s = np.asarray(seconds, dtype=float)
    return float(np.polyfit(np.log(n), np.log(s), 1)[0])


def ratios_monotone(ratios, tolerance: float = RATIO_TOLERANCE) -> bool:
    """Non-decreasing up to noise: each ratio is at least ``1 - tolerance`` times the previous."""
    r = np.asarray(ratios, dtype=float)
    return bool(np.all(r[1:] >= (1.0 - tolerance) * r[:-1]))


def summarize_times(n_list, times: dict, tolerance: float = RATIO_TOLERANCE) -> ScalingSummary:
    """Slopes and Fisher-to-other time ratios from per-algorithm mean times over ``n_list``."""
    n_list = tuple(int(n) for n in n_list)
    if len(n_list) < 3:
        raise DomainError("scaling summary needs at least 3 values of n")
    for a, v in times.items():
        if len(v) != len(n_list):
            raise DomainError(f"{a}: {len(v)} timings for {len(n_list)} sizes")
        if not np.all(np.isfinite(v)) or np.any(np.asarray(v) <= 0):
            raise DomainError(f"{a}: timings must be finite and positive")
    slopes = {a: loglog_slope(n_list, v) for a, v in times.items()}
    ratios, mono = {}, {}
    if "fisher" in times:
        f = np.asarray(times["fisher"], dtype=float)
        for a in times:
            if a == "fisher":
                continue
            r = f / np.asarray(times[a], dtype=float)
            ratios[f"fisher/{a}"] = tuple(float(x) for x in r)
            mono[f"fisher/{a}"] = ratios_monotone(r, tolerance)
    return ScalingSummary(n_list, slopes, ratios, mono)


def scaling_summary(result: BenchmarkResult, tolerance: float = RATIO_TOLERANCE) -> dict:
    """Per situation: :class:`ScalingSummary` of the mean times."""
    out = {}
    for s in result.plan.situations:
        times = {a: [result.cell(s, n, a).mean_seconds for n in result.plan.n_list] for a in result.plan.algorithms}
        out[s] = summarize_times(result.plan.n_list, times, tolerance)
    return out


# -- outputs ------------------------------------------------------------------


def _csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_outputs(result: BenchmarkResult, outdir) -> dict:
    """Write ``errors.csv``, ``timings.csv``, ``trials.csv`` and ``metadata.json``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cells = result.cells()
    _csv(
        outdir / "errors.csv",
        ["situation", "n", "algorithm", "mean_error_pct", "std", "failures", "posterior_error_pct"],
        [[c.situation, c.n, c.algorithm, "%.6g" % c.mean_error_pct, "%.6g" % c.std_error_pct, c.failures,
          "%.6g" % c.mean_posterior_error_pct] for c in cells],
    )
    summaries = {}
    if len(result.plan.n_list) >= 3:
        try:
            summaries = scaling_summary(result)
        except DomainError:
            summaries = {}
    _csv(
        outdir / "timings.csv",
        ["situation", "n", "algorithm", "mean_seconds", "slope"],
        [[c.situation, c.n, c.algorithm, "%.6g" % c.mean_seconds,
          "%.4f" % summaries[c.situation].slopes[c.algorithm] if c.situation in summaries else ""] for c in cells],
    )
    _csv(
        outdir / "trials.csv",
        list(TrialRecord.__dataclass_fields__),
        [[getattr(r, f) for f in TrialRecord.__dataclass_fields__] for r in result.records],
    )
    meta = {
        "plan": result.plan.to_dict(),
        "degrees": {str(s): _degree(s) for s in result.plan.situations},
        "generator": {
            str(s): SimulationSpec(situation=s).to_dict() for s in result.plan.situations
        },
        "trial_seeds": {
            f"{s}:{n}:{r}": trial_seed(result.plan.base_seed, s, n, r)
            for s in result.plan.situations for n in result.plan.n_list for r in range(result.plan.repeats)
        },
        "backend": _accel.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scaling": {str(s): v.to_dict() for s, v in summaries.items()},
    }
    write_json(outdir / "metadata.json", meta)
    return meta
