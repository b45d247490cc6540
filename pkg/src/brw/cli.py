"""Experiment harness: config ingestion, seeded orchestration, CSV output.

Every run is driven by an ExperimentConfig (JSON file or command-line
flags), a required 64-bit master seed, and an output directory.  Replica
work is keyed on (task label, replica index) through counter-based
substreams, so the worker count never changes any output byte: a replica
draws from its own stream no matter which worker runs it, and merges are
sorted reductions.  Floats are rendered with 17 significant digits, which
round-trips IEEE doubles and makes the byte-identical rerun contract
checkable with a plain diff.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .laws import LawError, OffspringLaw, law_from_spec
from .streams import substream, task_key
from .walk import (RenewalFunction, derive_step_law, estimate_renewal,
                   default_grid, exact_lattice_R, LATTICE_H)
from .forest import simulate_martingales
from .conditioned import (MonotoneTable, sample_conditioned,
                          series_diagnostic, verify_h_transform)
from .spine import sample_spine_path, verify_spine_law
from .criterion import (dichotomy_experiment, renewal_handle,
                        run_criterion_series)

__all__ = ["ParseError", "ValidationError", "ExperimentConfig",
           "RunManifest", "parse_config", "validate_config", "run", "main"]

TASKS = ("simulate", "renewal", "conditioned", "spine", "criterion",
         "dichotomy", "selftest")

# allowed "params" keys per task; every count-like key must be >= 1
_TASK_PARAMS = {
    "simulate": {"generations", "replicas", "barrier", "cap"},
    "renewal": {"excursions", "grid_max"},
    "conditioned": {"horizon", "f_table"},
    "spine": {"horizon", "replicas"},
    "criterion": {"horizon", "paths", "y", "m_draws"},
    "dichotomy": {"horizon", "paths", "y", "m_draws", "moment_draws"},
    "selftest": set(),
}
_COUNT_KEYS = {"generations", "replicas", "horizon", "paths", "excursions",
               "m_draws", "moment_draws", "cap"}
_TOP_KEYS = {"task", "seed", "out", "workers", "law", "law_a", "law_b",
             "params"}


class ParseError(Exception):
    pass


class ValidationError(Exception):
    """Carries every violation found, not just the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ExperimentConfig:
    task: str
    seed: int
    out: str
    workers: int = 1
    law: dict | None = None
    law_a: dict | None = None
    law_b: dict | None = None
    params: dict = field(default_factory=dict)

    def canonical_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    task: str
    substreams: list
    versions: dict
    wall_clock: float
    outputs: list
    errors: list

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")


def validate_config(raw: dict) -> ExperimentConfig:
    """Validate a raw config dict; collects all violations."""
    problems = []
    if not isinstance(raw, dict):
        raise ValidationError(["config must be a JSON object"])
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        problems.append(f"unknown keys: {sorted(unknown)}")
    task = raw.get("task")
    if task not in TASKS:
        problems.append(f"task must be one of {TASKS}, got {task!r}")
    seed = raw.get("seed")
    if seed is None:
        problems.append("seed is required (no entropy default)")
    elif not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        problems.append("seed must be a 64-bit unsigned integer")
    if "out" not in raw:
        problems.append("out directory is required")
    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        problems.append("workers must be >= 1")
    params = raw.get("params", {}) or {}
    allowed = _TASK_PARAMS.get(task, set())
    bad = set(params) - allowed
    if bad and task in _TASK_PARAMS:
        problems.append(f"unknown params for {task}: {sorted(bad)}")
    for key in set(params) & _COUNT_KEYS:
        v = params[key]
        if not isinstance(v, int) or v < 1:
            problems.append(f"params.{key} must be an integer >= 1")
    if "barrier" in params and params["barrier"] is not None \
            and float(params["barrier"]) < 0:
        problems.append("params.barrier must be >= 0")
    if "y" in params:
        try:
            ys = [float(v) for v in params["y"]]
            if not ys or any(v < 1.0 for v in ys):
                problems.append("params.y entries must be >= 1")
        except (TypeError, ValueError):
            problems.append("params.y must be a list of numbers")

    def check_law(key, required):
        spec = raw.get(key)
        if spec is None:
            if required:
                problems.append(f"{key} is required for task {task}")
            return
        try:
            law_from_spec(spec)
        except LawError as e:
            problems.append(f"{key}: {e}")

    if task == "dichotomy":
        check_law("law_a", True)
        check_law("law_b", True)
    elif task == "selftest":
        pass
    else:
        check_law("law", task in TASKS)
    if problems:
        raise ValidationError(problems)
    return ExperimentConfig(task, seed, raw["out"], workers,
                            raw.get("law"), raw.get("law_a"),
                            raw.get("law_b"), dict(params))


def parse_config(path) -> ExperimentConfig:
    """Load and validate a JSON config file."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(str(e)) from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(
            f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    return validate_config(raw)


# ---------------------------------------------------------------------------
# CSV rendering

# (label, index) pairs of every substream the current run draws from;
# list.append is atomic, so worker threads may share it
_STREAMS_USED: list = []


def _sub(seed: int, label: str, index: int) -> np.random.Generator:
    _STREAMS_USED.append((label, index))
    return substream(seed, label, index)


def _stream_record() -> list:
    groups: dict = {}
    for label, index in _STREAMS_USED:
        lo, hi = groups.get(label, (index, index))
        groups[label] = (min(lo, index), max(hi, index))
    return [{"label": label, "key": task_key(label),
             "index_min": lo, "index_max": hi}
            for label, (lo, hi) in sorted(groups.items())]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return "%.17g" % float(v)


def _write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def _shard(n: int, workers: int, fn):
    """Run fn(index) for 0..n-1 sharded over workers; order-stable merge.

    Each index owns its substream, so scheduling cannot change results;
    the merge is by index regardless of completion order.
    """
    if workers <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


def _load_law(spec: dict) -> OffspringLaw:
    return law_from_spec(spec)


def _law_name(spec: dict) -> str:
    name = spec["family"]
    params = spec.get("params") or {}
    if "theta" in params:
        name += f"_theta{params['theta']:g}"
    return name


def _handle_for(law: OffspringLaw, seed: int) -> RenewalFunction:
    return renewal_handle(derive_step_law(law),
                          _sub(seed, "renewal-handle", 0))


# ---------------------------------------------------------------------------
# task runners; each returns a list of output file names

def _run_simulate(cfg: ExperimentConfig, outdir: Path) -> list:
    law = _load_law(cfg.law)
    p = cfg.params
    depth = p.get("generations", 10)
    replicas = p.get("replicas", 100)
    beta = p.get("barrier")
    cap = p.get("cap", 1_000_000)
    R = _handle_for(law, cfg.seed) if beta is not None else None

    def one(i):
        rng = _sub(cfg.seed, "simulate", i)
        batch = simulate_martingales(law, depth, 1, rng, a=0.0,
                                     beta=beta, R=R, cap=cap)
        rows = []
        for n in range(depth + 1):
            db = math.nan if batch.D_beta is None else batch.D_beta[0, n]
            rows.append((i, i, n, int(batch.population[0, n]),
                         batch.W[0, n, 0], batch.D[0, n], db))
        return rows

    rows = [r for chunk in _shard(replicas, cfg.workers, one) for r in chunk]
    out = outdir / "simulate.csv"
    _write_csv(out, ("replica", "seed", "n", "population", "W_n_t1",
                     "D_n", "D_n_beta"), rows)
    return [out.name]


def _run_renewal(cfg: ExperimentConfig, outdir: Path) -> list:
    law = _load_law(cfg.law)
    step = derive_step_law(law)
    p = cfg.params
    grid = default_grid(step, x_max=p.get("grid_max"))
    rng = _sub(cfg.seed, "renewal", 0)
    tab = estimate_renewal(step, p.get("excursions", 100_000), grid, rng,
                           max_total_steps=2_000_000_000)
    out = outdir / "renewal.csv"
    tab.to_csv(out)
    return [out.name]


def _run_conditioned(cfg: ExperimentConfig, outdir: Path) -> list:
    law = _load_law(cfg.law)
    step = derive_step_law(law)
    p = cfg.params
    horizon = p.get("horizon", 10_000)
    rng = _sub(cfg.seed, "conditioned", 0)
    path = sample_conditioned(step, horizon, rng)
    out = outdir / "conditioned_path.csv"
    _write_csv(out, ("n", "zeta"),
               [(n, z) for n, z in enumerate(path.zeta)])
    outputs = [out.name]
    if "f_table" in p:
        data = np.loadtxt(p["f_table"], delimiter=",", skiprows=1, ndmin=2)
        F = MonotoneTable(data[:, 0], data[:, 1])
        diag = series_diagnostic(F, path, horizon)
        out2 = outdir / "conditioned_series.csv"
        _write_csv(out2, ("checkpoint", "partial_sum"),
                   list(zip(diag.checkpoints, diag.partial_sums)))
        out3 = outdir / "conditioned_class.txt"
        out3.write_text(f"{diag.series_class}\n{diag.integral_class}\n")
        outputs += [out2.name, out3.name]
    return outputs


def _run_spine(cfg: ExperimentConfig, outdir: Path) -> list:
    law = _load_law(cfg.law)
    p = cfg.params
    horizon = p.get("horizon", 10)
    replicas = p.get("replicas", 100)
    step = derive_step_law(law)
    R = (RenewalFunction.from_lattice(step.span) if step.kind == "lattice"
         else _handle_for(law, cfg.seed))

    def one(i):
        rng = _sub(cfg.seed, "spine", i)
        real = sample_spine_path(law, horizon, rng, R)
        return [(i, n, real.positions[n],
                 0 if n == 0 else len(real.siblings[n - 1]))
                for n in range(horizon + 1)]

    rows = [r for chunk in _shard(replicas, cfg.workers, one) for r in chunk]
    out = outdir / "spine.csv"
    _write_csv(out, ("replica", "n", "spine_position", "n_siblings"), rows)
    return [out.name]


def _criterion_rows(cfg, law_spec, horizon, paths, y, m_draws, label_idx):
    law = _load_law(law_spec)
    R = _handle_for(law, cfg.seed + label_idx)

    def one(i):
        rng = _sub(cfg.seed, f"criterion-{label_idx}", i)
        return run_criterion_series(law, horizon, 1, y, rng, R=R,
                                    m_draws=m_draws)
    singles = _shard(paths, cfg.workers, one)
    pa = np.concatenate([s.path_summand_capped for s in singles])
    pa_se = np.concatenate([s.path_se_capped for s in singles])
    pb = np.concatenate([s.path_summand_tail for s in singles])
    pb_se = np.concatenate([s.path_se_tail for s in singles])
    from .criterion import CriterionSeries
    series = CriterionSeries(singles[0].n_vals, singles[0].y_vals,
                             pa, pa_se, pb, pb_se, m_draws)
    return series, series.rows(_law_name(law_spec))


def _run_criterion(cfg: ExperimentConfig, outdir: Path) -> list:
    p = cfg.params
    series, rows = _criterion_rows(
        cfg, cfg.law, p.get("horizon", 10_000), p.get("paths", 5),
        p.get("y", [1.0, 2.0, 8.0]), p.get("m_draws", 64), 0)
    out = outdir / "criterion.csv"
    _write_csv(out, ("law", "series", "n", "summand", "partial_sum", "se"),
               rows)
    out2 = outdir / "criterion_class.txt"
    out2.write_text(
        f"capped {series.label_capped}\n"
        + "".join(f"tail-y{y:g} {lab}\n"
                  for y, lab in zip(series.y_vals, series.label_tail))
        + f"verdict {series.verdict}\n")
    return [out.name, out2.name]


def _run_dichotomy(cfg: ExperimentConfig, outdir: Path) -> list:
    p = cfg.params
    rows = []
    lines = []
    for idx, spec in enumerate((cfg.law_a, cfg.law_b)):
        series, r = _criterion_rows(
            cfg, spec, p.get("horizon", 10_000), p.get("paths", 5),
            p.get("y", [1.0, 2.0, 8.0]), p.get("m_draws", 64), idx)
        rows.extend(r)
        lines.append(f"{_law_name(spec)} {series.verdict}")
    out = outdir / "dichotomy.csv"
    _write_csv(out, ("law", "series", "n", "summand", "partial_sum", "se"),
               rows)
    out2 = outdir / "dichotomy_verdicts.txt"
    out2.write_text("\n".join(lines) + "\n")
    return [out.name, out2.name]


def _run_selftest(cfg: ExperimentConfig, outdir: Path) -> list:
    """Exact-enumeration oracle checks; no Monte Carlo."""
    from .laws import lattice_binary
    rows = []
    law = lattice_binary()
    step = derive_step_law(law)
    rng = _sub(cfg.seed, "selftest", 0)
    for N in (4, 6):
        tv, mh, mt = verify_h_transform(step, N, mode="exact", rng=rng)
        rows.append((f"tanaka_tv_N{N}", tv, 1e-10, tv <= 1e-10))
        rows.append((f"tanaka_mass_N{N}", abs(mh - 1) + abs(mt - 1),
                     1e-9, abs(mh - 1) + abs(mt - 1) <= 1e-9))
    R = RenewalFunction.from_lattice(LATTICE_H)
    for N in (3, 5):
        tv, ms, mh = verify_spine_law(law, N, mode="exact", rng=rng, R=R)
        rows.append((f"spine_tv_N{N}", tv, 1e-10, tv <= 1e-10))
    # harmonicity of the closed-form lattice R at x = 1.5h:
    # (R(2.5h) + R(0.5h)) / 2 = R(1.5h)
    h = LATTICE_H
    lhs = 0.5 * (exact_lattice_R(2.5 * h) + exact_lattice_R(0.5 * h))
    gap = abs(lhs - exact_lattice_R(1.5 * h))
    rows.append(("lattice_harmonic_1p5h", gap, 1e-12, gap <= 1e-12))
    out = outdir / "selftest.csv"
    _write_csv(out, ("check", "value", "bound", "passed"),
               [(c, v, b, int(ok)) for c, v, b, ok in rows])
    if not all(ok for _, _, _, ok in rows):
        raise RuntimeError("selftest failed; see selftest.csv")
    return [out.name]


_RUNNERS = {
    "simulate": _run_simulate,
    "renewal": _run_renewal,
    "conditioned": _run_conditioned,
    "spine": _run_spine,
    "criterion": _run_criterion,
    "dichotomy": _run_dichotomy,
    "selftest": _run_selftest,
}


def run(cfg: ExperimentConfig) -> RunManifest:
    """Execute a validated config; always writes a manifest.

    Module errors are recorded in the manifest and partial outputs are
    kept on disk for inspection.
    """
    t0 = time.time()
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = []
    errors = []
    _STREAMS_USED.clear()
    try:
        outputs = _RUNNERS[cfg.task](cfg, outdir)
    except Exception as e:                      # noqa: BLE001
        errors.append(f"{type(e).__name__}: {e}")
        outputs = sorted(f.name for f in outdir.glob("*.csv"))
    manifest = RunManifest(
        config_hash=cfg.digest(),
        task=cfg.task,
        substreams=_stream_record(),
        versions={"package": __version__, "numpy": np.__version__,
                  "python": sys.version.split()[0]},
        wall_clock=time.time() - t0,
        outputs=list(outputs),
        errors=errors,
    )
    manifest.write(outdir / "manifest.json")
    return manifest


# ---------------------------------------------------------------------------
# argv interface

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="brw", description="boundary-case branching random walk harness")
    ap.add_argument("--config", help="JSON config file; flags override")
    sub = ap.add_subparsers(dest="task")
    for task in TASKS:
        sp = sub.add_parser(task)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out")
        if task == "dichotomy":
            sp.add_argument("--law-a", dest="law_a")
            sp.add_argument("--law-b", dest="law_b")
        elif task != "selftest":
            sp.add_argument("--law")
        if task == "simulate":
            sp.add_argument("--generations", type=int)
            sp.add_argument("--replicas", type=int)
            sp.add_argument("--barrier", type=float)
            sp.add_argument("--cap", type=int)
        elif task == "renewal":
            sp.add_argument("--excursions", type=int)
            sp.add_argument("--grid-max", dest="grid_max", type=float)
        elif task == "conditioned":
            sp.add_argument("--horizon", type=int)
            sp.add_argument("--F", dest="f_table")
        elif task == "spine":
            sp.add_argument("--horizon", type=int)
            sp.add_argument("--replicas", type=int)
        elif task in ("criterion", "dichotomy"):
            sp.add_argument("--horizon", type=int)
            sp.add_argument("--paths", type=int)
            sp.add_argument("--y")
            sp.add_argument("--m-draws", dest="m_draws", type=int)
    return ap


def _load_law_arg(value):
    """A law flag is a JSON file path or an inline JSON object."""
    if value is None:
        return None
    text = value.strip()
    try:
        if not text.startswith("{"):
            text = Path(value).read_text()
        return json.loads(text)
    except OSError as e:
        raise ParseError(str(e)) from e
    except json.JSONDecodeError as e:
        raise ParseError(
            f"law spec: line {e.lineno} column {e.colno}: {e.msg}") from e


def config_from_argv(argv) -> ExperimentConfig:
    ap = _build_parser()
    ns = ap.parse_args(argv)
    raw = {}
    if ns.config:
        try:
            raw = json.loads(Path(ns.config).read_text())
        except OSError as e:
            raise ParseError(str(e)) from e
        except json.JSONDecodeError as e:
            raise ParseError(
                f"{ns.config}: line {e.lineno} column {e.colno}: {e.msg}")
    if ns.task:
        raw["task"] = ns.task
        params = raw.setdefault("params", {})
        for key, val in vars(ns).items():
            if val is None or key in ("task", "config"):
                continue
            if key in ("seed", "out", "workers"):
                raw[key] = val
            elif key in ("law", "law_a", "law_b"):
                raw[key] = _load_law_arg(val)
            elif key == "y":
                params["y"] = [float(v) for v in str(val).split(",")]
            else:
                params[key] = val
    return validate_config(raw)


def main(argv=None) -> int:
    try:
        cfg = config_from_argv(sys.argv[1:] if argv is None else argv)
    except (ParseError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    manifest = run(cfg)
    if manifest.errors:
        print("\n".join(manifest.errors), file=sys.stderr)
        return 1
    return 0
