"""Command-line front end: ``simulate``, ``segment``, ``benchmark``, ``curves``.

Exit codes: 0 success, 1 usage or validation failure, 2 I/O failure.
Settings come from defaults, then an optional ``--config`` JSON file, then
explicit flags (later wins).
"""

from __future__ import annotations

import argparse
import json
import secrets
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import _accel
from .bench import BenchmarkPlan, run_benchmark, write_outputs
from .cem import C_STEP_RULES, CemConfig, cem_fit
from .em import EmConfig, em_fit
from .fisher import ConstantMean, Polynomial, fisher_segment
from .io import CsvFormatError, format_series_csv, read_series_csv, write_json
from .logistic import LogisticParams, write_curves_csv
from .model import DomainError, EmptyClassError
from .simulate import SimulationSpec, simulate

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 1, 2
QUICK_N_LIST = (100, 300, 500)
QUICK_REPEATS = 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def load_schema(name: str) -> dict:
    return json.loads(resources.files("ordseg").joinpath("schemas", f"{name}.schema.json").read_text("utf-8"))


def validate_json(doc: dict, name: str) -> None:
    jsonschema.validate(doc, load_schema(name))


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# per-subcommand defaults; flags use argparse.SUPPRESS so that only explicit
# flags override the config file
DEFAULTS = {
    "simulate": dict(situation=None, n=None, seed=None, out=None, change_times=None, sigmas=None, shapes=None),
    "segment": dict(algo=None, k=None, degree=0, input=None, seed=None, restarts=None, tol=None, max_iter=None,
                    c_step_rule=None, out=None),
    "benchmark": dict(quick=False, n_list=None, repeats=None, situations=None, algorithms=None, seed=None,
                      restarts=1, jobs=1, out_dir="bench-out", errors_only=False),
    "curves": dict(k=None, params=None, t_min=0.0, t_max=5.0, steps=500, out=None),
}
REQUIRED = {
    "simulate": ("situation", "n", "out"),
    "segment": ("algo", "k", "input"),
    "benchmark": (),
    "curves": ("k", "params"),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ordseg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    S = argparse.SUPPRESS

    s = sub.add_parser("simulate", help="write a simulated series as CSV", argument_default=S)
    s.add_argument("--situation", type=int, choices=(1, 2))
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--change-times", type=_float_list)
    s.add_argument("--sigmas", type=_float_list)
    s.add_argument("--config")

    g = sub.add_parser("segment", help="segment a CSV series", argument_default=S)
    g.add_argument("--algo", choices=("fisher", "em", "cem"))
    g.add_argument("--k", type=int)
    g.add_argument("--degree", type=int)
    g.add_argument("--input")
    g.add_argument("--seed", type=int)
    g.add_argument("--restarts", type=int)
    g.add_argument("--tol", type=float)
    g.add_argument("--max-iter", type=int)
    g.add_argument("--c-step-rule", choices=C_STEP_RULES)
    g.add_argument("--out")
    g.add_argument("--config")

    b = sub.add_parser("benchmark", help="error and runtime-scaling benchmark", argument_default=S)
    b.add_argument("--quick", action="store_true", help=f"n in {QUICK_N_LIST}, {QUICK_REPEATS} repeats")
    b.add_argument("--n-list", type=_int_list)
    b.add_argument("--repeats", type=int)
    b.add_argument("--situations", type=_int_list)
    b.add_argument("--algorithms", type=lambda x: tuple(a for a in x.split(",") if a))
    b.add_argument("--seed", type=int, help="base seed")
    b.add_argument("--restarts", type=int, help="EM/CEM initialisations per trial (default 1)")
    b.add_argument("--jobs", type=int, help="worker processes; only used with --errors-only")
    b.add_argument("--errors-only", action="store_true", help="allow parallel trials (timings not meaningful)")
    b.add_argument("--out-dir")
    b.add_argument("--config")

    c = sub.add_parser("curves", help="logistic proportions over a time grid", argument_default=S)
    c.add_argument("--k", type=int)
    c.add_argument("--params", help="JSON text or path: {\"coef\": [[a, b], ...]} or {\"lambda\": [...], \"gamma\": [...]}")
    c.add_argument("--t-min", type=float)
    c.add_argument("--t-max", type=float)
    c.add_argument("--steps", type=int)
    c.add_argument("--out")
    c.add_argument("--config")
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < flags, then check required settings."""
    cmd = args.command
    opts = dict(DEFAULTS[cmd])
    given = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        try:
            cfg = json.loads(Path(cfg_path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise OSError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - set(opts))
        if unknown:
            raise UsageError(f"unknown config keys for {cmd}: {', '.join(unknown)}")
        opts.update(cfg)
    opts.update(given)
    missing = [k for k in REQUIRED[cmd] if opts.get(k) is None]
    if missing:
        raise UsageError("missing required settings: " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return opts


def _seed(opts: dict) -> int:
    if opts.get("seed") is None:
        opts["seed"] = secrets.randbits(31)
        print(f"seed: {opts['seed']}", file=sys.stderr)
    return int(opts["seed"])


# -- subcommands ----------------------------------------------------------------


def cmd_simulate(opts: dict) -> int:
    seed = _seed(opts)
    kw = dict(situation=int(opts["situation"]), n=int(opts["n"]), seed=seed)
    if opts.get("change_times") is not None:
        kw["change_times"] = tuple(opts["change_times"])
    if opts.get("sigmas") is not None:
        kw["sigmas"] = tuple(opts["sigmas"])
    if opts.get("shapes") is not None:
        kw["segment_shape_params"] = tuple(tuple(s) for s in opts["shapes"])
    data = simulate(SimulationSpec(**kw))
    out = Path(opts["out"])
    text = format_series_csv(data.series.t, data.series.y, data.true_partition.labels)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    meta = data.spec.to_dict()
    meta["csv"] = out.name
    validate_json(meta, "simulation_meta")
    write_json(f"{out}.meta.json", meta)
    return EXIT_OK


def _change_times(t: np.ndarray, boundaries) -> list:
    out = []
    for b in boundaries[1:-1]:
        b = int(b)
        out.append(0.5 * (float(t[b - 1]) + float(t[b])) if 0 < b < t.size else None)
    return out


def segment_document(series, opts: dict) -> dict:
    """Run the requested algorithm and build the JSON result document."""
    algo, K, degree = opts["algo"], int(opts["k"]), int(opts["degree"])
    if not 1 <= K <= series.n:
        raise DomainError(f"need 1 <= K <= n, got K={K}, n={series.n}")
    config = {"k": K, "degree": degree, "input": str(opts["input"])}
    doc = {"algorithm": algo, "n": series.n, "K": K, "degree": degree, "backend": _accel.BACKEND}
    if algo == "fisher":
        kind = ConstantMean() if degree == 0 else Polynomial(degree)
        t0 = time.perf_counter()
        res = fisher_segment(series, K, kind)
        secs = time.perf_counter() - t0
        part, fits = res.partition, res.per_segment_fits
        doc.update(loglik=None, total_cost=res.total_cost, iterations=0, converged=None,
                   restart_selected=None, logistic=None, irls_iterations=[])
    else:
        seed = _seed(opts)
        base = dict(seed=seed)
        if opts.get("restarts") is not None:
            base["n_restarts"] = int(opts["restarts"])
        if opts.get("tol") is not None:
            base["rel_tol"] = float(opts["tol"])
        if opts.get("max_iter") is not None:
            base["max_iterations"] = int(opts["max_iter"])
        if algo == "em":
            cfg = EmConfig(**base)
            fit = em_fit
        else:
            if opts.get("c_step_rule") is not None:
                base["c_step_rule"] = opts["c_step_rule"]
            cfg = CemConfig(**base)
            fit = cem_fit
        t0 = time.perf_counter()
        rep = fit(series, K, degree, cfg)
        secs = time.perf_counter() - t0
        part, fits = rep.partition, rep.params.classes
        config.update({k: v for k, v in vars(cfg).items()})
        doc.update(loglik=rep.final_value, total_cost=None, iterations=rep.n_iterations,
                   converged=rep.converged, restart_selected=rep.restart_index_selected,
                   logistic=rep.params.logistic.to_dict(), irls_iterations=list(rep.irls_iteration_counts))
    doc["config"] = config
    doc["segments"] = [
        {"start": int(s), "stop": int(e), "beta": [float(b) for b in f.beta], "sigma2": float(f.sigma2)}
        for (s, e), f in zip(part.segments, fits)
    ]
    doc["change_times"] = _change_times(series.t, part.boundaries)
    doc["seconds"] = secs
    return doc


def cmd_segment(opts: dict) -> int:
    series, _ = read_series_csv(opts["input"])
    doc = segment_document(series, opts)
    validate_json(doc, "segment")
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if opts.get("out"):
        with open(opts["out"], "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_benchmark(opts: dict) -> int:
    kw = {}
    if opts.get("quick"):
        kw.update(n_list=QUICK_N_LIST, repeats=QUICK_REPEATS)
    for key, name in (("n_list", "n_list"), ("repeats", "repeats"), ("situations", "situations"),
                      ("algorithms", "algorithms")):
        if opts.get(key) is not None:
            kw[name] = opts[key]
    kw["base_seed"] = _seed(opts)
    restarts = int(opts["restarts"])
    kw["em_config"] = EmConfig(n_restarts=restarts)
    kw["cem_config"] = CemConfig(n_restarts=restarts)
    kw["jobs"] = int(opts["jobs"])
    kw["timing"] = not opts.get("errors_only")
    plan = BenchmarkPlan(**kw)
    result = run_benchmark(plan)
    meta = write_outputs(result, opts["out_dir"])
    validate_json(meta, "benchmark_meta")
    failures = sum(r.failed for r in result.records)
    print(f"wrote {opts['out_dir']}/errors.csv, timings.csv, trials.csv, metadata.json "
          f"({len(result.records)} trials, {failures} failed)", file=sys.stderr)
    return EXIT_OK


def _logistic_from_json(text: str, K: int) -> LogisticParams:
    src = text
    if not text.lstrip().startswith(("{", "[")):
        src = Path(text).read_text(encoding="utf-8")
    try:
        d = json.loads(src)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--params is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise UsageError("--params must be a JSON object")
    try:
        if "coef" in d:
            coef = np.asarray(d["coef"], dtype=float)
            if coef.shape == (K - 1, 2):
                coef = np.vstack([coef, np.zeros((1, 2))])
            if coef.shape != (K, 2):
                raise UsageError(f"coef needs {K} (or {K - 1}) rows of [intercept, slope]")
            return LogisticParams.from_unpinned(coef)
        if "lambda" in d and "gamma" in d:
            lam = np.asarray(d["lambda"], dtype=float).reshape(-1)
            gam = np.asarray(d["gamma"], dtype=float).reshape(-1)
            if lam.size != gam.size or lam.size not in (K - 1, K):
                raise UsageError(f"lambda and gamma need {K - 1} or {K} entries each")
            if lam.size == K - 1:
                lam, gam = np.append(lam, 0.0), np.append(gam, 0.0)
            return LogisticParams.from_lambda_gamma(lam, gam)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"malformed --params: {exc}") from exc
    raise UsageError("--params needs 'coef' or both 'lambda' and 'gamma'")


def cmd_curves(opts: dict) -> int:
    K, steps = int(opts["k"]), int(opts["steps"])
    if K < 1:
        raise UsageError("--k must be >= 1")
    if steps < 1:
        raise UsageError("--steps must be >= 1")
    t_min, t_max = float(opts["t_min"]), float(opts["t_max"])
    if not t_max > t_min:
        raise UsageError("--t-max must exceed --t-min")
    params = _logistic_from_json(str(opts["params"]), K)
    grid = np.linspace(t_min, t_max, steps + 1)
    text = write_curves_csv(params, grid)
    if opts.get("out"):
        with open(opts["out"], "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "segment": cmd_segment, "benchmark": cmd_benchmark, "curves": cmd_curves}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except (UsageError, DomainError, CsvFormatError, EmptyClassError, jsonschema.ValidationError) as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
        print(f"ordseg {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"ordseg {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
