"""Experiment batches: config parsing, execution, checks and reports.

Config files are YAML. A file either describes one experiment with
top-level keys, or a batch::

    paired: true          # same problem and seed for every member
    checks: true          # run invariant checkers, exit 4 on violation
    output_dir: out
    bandwidth_sweep: [1.0e6, 1.0e7, 1.0e8]
    defaults:             # merged under every experiment
      workers: 8
      iterations: 2000
      problem: {kind: quadratic, dim: 100, noise_sigma: 1.0}
    experiments:
      - {name: ds, algorithm: doublesqueeze, worker_compressor: {kind: top_k, k: 10}}
      - {name: sgd, algorithm: vanilla}

Experiment keys (``algorithm`` and ``iterations`` are required, directly
or via ``defaults``): name, algorithm, workers, iterations, gamma (number or
mapping with ``mode``), seed, problem, worker_compressor,
server_compressor, compressor (sets both), cost_model, x0,
record_analysis, parallel_workers. See README for every field.
"""

import copy
import csv
import math
import os
import re
from dataclasses import dataclass, field
from importlib import resources

import yaml

from .analysis import (
    BoundParams,
    aux_sequence_deviation,
    contraction_alpha_sq,
    residual_bound_check,
    step_oracle_deviations,
    telescoping_check,
)
from .config import CostModel, GammaSchedule, TrainConfig, compressor_from
from .errors import ConfigError, EcsgdError
from .problems import ProblemSpec
from .simulator import run_experiment, summarize, write_metrics_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_CHECK = 4

STEP_ORACLE_TOL = 1e-10
TELESCOPING_TOL = 1e-8
AUX_SEQUENCE_TOL = 1e-10

BATCH_KEYS = {"name", "paired", "checks", "output_dir", "bandwidth_sweep", "defaults", "experiments"}
EXPERIMENT_KEYS = {
    "name",
    "algorithm",
    "workers",
    "iterations",
    "gamma",
    "seed",
    "problem",
    "worker_compressor",
    "server_compressor",
    "compressor",
    "cost_model",
    "x0",
    "record_analysis",
    "parallel_workers",
}
REQUIRED_KEYS = ("algorithm", "iterations")
COMPENSATED = ("doublesqueeze", "memsgd", "vanilla")


@dataclass
class ExperimentBatch:
    configs: list
    output_dir: str = "results"
    paired: bool = True
    checks: bool = False
    bandwidth_sweep: tuple = ()
    name: str = "batch"

    def __post_init__(self):
        names = [c.name for c in self.configs]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"experiment names must be unique, repeated: {dupes}", "experiments")
        if not self.configs:
            raise ConfigError("batch has no experiments", "experiments")


# --- parsing --------------------------------------------------------------


def _plain(node, path, lines):
    """YAML node -> python data, recording the source line of every path."""
    lines.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            sub = _join(path, key)
            lines[sub] = k.start_mark.line + 1
            if key in out:
                raise ConfigError("duplicate key", sub, lines[sub])
            out[key] = _plain(v, sub, lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v, f"{path}[{i}]", lines) for i, v in enumerate(node.value)]
    return yaml.SafeLoader("").construct_object(node, deep=True)


def _join(path, key):
    return f"{path}.{key}" if path else key


_MEMBER = re.compile(r"experiments\[\d+\]\.(.+)")


def _line_for(path, lines):
    """Source line of ``path``, or of its nearest ancestor.

    Values an experiment inherits from ``defaults`` are reported where the
    default is written.
    """
    while path:
        if path in lines:
            return lines[path]
        m = _MEMBER.fullmatch(path)
        if m and f"defaults.{m.group(1)}" in lines:
            return lines[f"defaults.{m.group(1)}"]
        cut = max(path.rfind("."), path.rfind("["))
        path = path[:cut] if cut > 0 else ""
    return lines.get("")


def _num(value, path, kind=float, lines=None):
    if isinstance(value, bool):
        raise ConfigError(f"expected a number, got {value!r}", path, _line_for(path, lines or {}))
    try:
        out = float(value) if kind is float else value
        if kind is int:
            if isinstance(value, float) and value.is_integer():
                out = int(value)
            elif isinstance(value, str):
                out = int(float(value)) if float(value).is_integer() else None
            if not isinstance(out, int):
                raise ValueError
        return out
    except (TypeError, ValueError):
        expected = "an integer" if kind is int else "a number"
        raise ConfigError(f"expected {expected}, got {value!r}", path, _line_for(path, lines or {})) from None


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


_PROBLEM_FLOATS = ("noise_sigma", "heterogeneity", "condition", "l2", "shift_scale")
_PROBLEM_INTS = ("dim", "samples_per_worker", "batch_size", "hidden")


def _build_config(exp, path, lines, index):
    unknown = set(exp) - EXPERIMENT_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown key {key!r}", _join(path, key), _line_for(_join(path, key), lines))
    for key in REQUIRED_KEYS:
        if key not in exp:
            raise ConfigError("required field missing", _join(path, key), _line_for(path, lines))

    def fail(exc):
        p = _join(path, exc.path) if exc.path else path
        return ConfigError(exc.message, p, _line_for(p, lines))

    kw = {"name": str(exp.get("name", f"run{index}"))}
    if "algorithm" in exp:
        kw["algorithm"] = exp["algorithm"]
    for key, attr in (("workers", "n_workers"), ("iterations", "iterations"), ("seed", "seed"), ("parallel_workers", "parallel_workers")):
        if key in exp:
            kw[attr] = _num(exp[key], _join(path, key), int, lines)
    if "record_analysis" in exp:
        kw["record_analysis"] = bool(exp["record_analysis"])
    if "x0" in exp:
        kw["x0"] = tuple(_num(v, _join(path, f"x0[{i}]"), float, lines) for i, v in enumerate(exp["x0"]))
    try:
        if "compressor" in exp:
            spec = compressor_from(exp["compressor"], "compressor")
            kw["worker_compressor"] = spec
            kw["server_compressor"] = spec
        for key in ("worker_compressor", "server_compressor"):
            if key in exp:
                kw[key] = compressor_from(exp[key], key)
        if "gamma" in exp:
            g = exp["gamma"]
            if isinstance(g, dict):
                g = dict(g)
                for f in ("value", "L", "sigma", "epsilon", "factor"):
                    if f in g:
                        g[f] = _num(g[f], _join(path, f"gamma.{f}"), float, lines)
                for f in ("every_epochs", "iters_per_epoch"):
                    if f in g:
                        g[f] = _num(g[f], _join(path, f"gamma.{f}"), int, lines)
            elif not isinstance(g, GammaSchedule):
                g = _num(g, _join(path, "gamma"), float, lines)
            kw["gamma"] = GammaSchedule.from_value(g)
        if "problem" in exp:
            p = dict(exp["problem"])
            for f in _PROBLEM_FLOATS:
                if f in p:
                    p[f] = _num(p[f], _join(path, f"problem.{f}"), float, lines)
            for f in _PROBLEM_INTS:
                if f in p:
                    p[f] = _num(p[f], _join(path, f"problem.{f}"), int, lines)
            kw["problem"] = ProblemSpec.from_dict(p)
        if "cost_model" in exp:
            c = dict(exp["cost_model"])
            unknown = set(c) - {"server_bandwidth", "per_worker_compute", "wire_bits_per_real"}
            if unknown:
                raise ConfigError(f"unknown key(s) {sorted(unknown)}", "cost_model")
            for f in ("server_bandwidth", "per_worker_compute"):
                if f in c:
                    c[f] = _num(c[f], _join(path, f"cost_model.{f}"), float, lines)
            if "wire_bits_per_real" in c:
                c["wire_bits_per_real"] = _num(c["wire_bits_per_real"], _join(path, "cost_model.wire_bits_per_real"), int, lines)
            kw["cost_model"] = CostModel(**c)
        return TrainConfig(**kw)
    except ConfigError as exc:
        if exc.line is not None:
            raise
        raise fail(exc) from None


def _check_paired(configs):
    first = configs[0]
    for i, c in enumerate(configs[1:], start=1):
        for attr, label in (("problem", "problem"), ("seed", "seed"), ("n_workers", "workers"), ("x0", "x0")):
            if getattr(c, attr) != getattr(first, attr):
                raise ConfigError(
                    f"paired batch members must share {label}; {c.name!r} differs from {first.name!r}",
                    f"experiments[{i}].{label}",
                )


def parse_config(text, overrides=None):
    """Parse and validate config text into an ``ExperimentBatch``.

    ``overrides`` maps experiment keys (e.g. ``iterations``) to values
    applied to every member after defaults, the way CLI flags are.
    """
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {exc}", line=mark.line + 1 if mark else None) from None
    if root is None:
        raise ConfigError("empty config")
    lines = {}
    data = _plain(root, "", lines)
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", line=1)

    if "experiments" in data:
        unknown = set(data) - BATCH_KEYS
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(f"unknown key {key!r}", key, lines.get(key))
        defaults = data.get("defaults") or {}
        members = data["experiments"]
        if not isinstance(members, list) or not members:
            raise ConfigError("must be a non-empty list", "experiments", lines.get("experiments"))
        raw = [(_merge(defaults, m), f"experiments[{i}]") for i, m in enumerate(members)]
        meta = data
    else:
        meta = {k: data.pop(k) for k in list(data) if k in BATCH_KEYS - {"name"}}
        raw = [(data, "")]
    overrides = overrides or {}
    configs = []
    for i, (exp, path) in enumerate(raw):
        if not isinstance(exp, dict):
            raise ConfigError("experiment must be a mapping", path, _line_for(path, lines))
        exp = _merge(exp, overrides)
        cfg = _build_config(exp, path, lines, i)
        configs.append(cfg)

    paired = bool(meta.get("paired", True))
    if paired and len(configs) > 1:
        try:
            _check_paired(configs)
        except ConfigError as exc:
            raise ConfigError(exc.message, exc.path, _line_for(exc.path, lines)) from None
    sweep = meta.get("bandwidth_sweep") or ()
    sweep = tuple(_num(b, f"bandwidth_sweep[{i}]", float, lines) for i, b in enumerate(sweep))
    if any(b <= 0 for b in sweep):
        raise ConfigError("bandwidths must be > 0", "bandwidth_sweep", lines.get("bandwidth_sweep"))
    return ExperimentBatch(
        configs,
        output_dir=str(meta.get("output_dir", "results")),
        paired=paired,
        checks=bool(meta.get("checks", False)),
        bandwidth_sweep=sweep,
        name=str(meta.get("name", "batch")),
    )


def load_config(path, overrides=None):
    with open(path) as fh:
        return parse_config(fh.read(), overrides)


def preset_names():
    files = resources.files("ecsgd").joinpath("presets")
    return sorted(p.name[: -len(".yaml")] for p in files.iterdir() if p.name.endswith(".yaml"))


def preset_text(name):
    path = resources.files("ecsgd").joinpath("presets", f"{name}.yaml")
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {preset_names()}")
    return path.read_text()


# --- execution ------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    value: float
    limit: float
    ok: bool
    note: str = ""


@dataclass
class RunOutcome:
    config: TrainConfig
    result: object
    summary: object
    checks: list = field(default_factory=list)

    @property
    def checks_ok(self):
        return all(c.ok for c in self.checks)


def run_checks(cfg, traj):
    """Invariant checks applicable to ``cfg.algorithm`` on a recorded run."""
    out = []
    if cfg.algorithm not in COMPENSATED:
        return out
    dev = max(step_oracle_deviations(traj), default=0.0)
    out.append(CheckResult("step_oracle_max_deviation", dev, STEP_ORACLE_TOL, dev <= STEP_ORACLE_TOL))
    if len(set(traj.gammas)) <= 1:
        tel = telescoping_check(traj)
        out.append(CheckResult("telescoping_relative_residual", tel, TELESCOPING_TOL, tel <= TELESCOPING_TOL))
        aux = aux_sequence_deviation(traj)
        out.append(CheckResult("aux_sequence_max_deviation", aux, AUX_SEQUENCE_TOL, aux <= AUX_SEQUENCE_TOL))
    if cfg.algorithm in ("doublesqueeze", "memsgd"):
        d = traj.xs[0].size
        a_w = contraction_alpha_sq(cfg.worker_compressor, d)
        a_s = contraction_alpha_sq(cfg.downlink_compressor, d) if cfg.algorithm == "doublesqueeze" else 0.0
        if a_w is not None and a_s is not None:
            rep = residual_bound_check(traj, BoundParams(alpha_sq=max(a_w, a_s), sigma=cfg.problem.noise_sigma))
            if rep.vacuous:
                out.append(CheckResult("residual_bound", math.inf, math.inf, True, rep.describe()))
            else:
                ratio = max(rep.max_server_delta_sq / rep.bound, rep.max_worker_delta_sq / rep.worker_bound)
                out.append(CheckResult("residual_bound_ratio", ratio, 1.0, rep.ok, rep.describe()))
    return out


def execute_batch(batch, checks=None):
    checks = batch.checks if checks is None else checks
    outcomes = []
    for cfg in batch.configs:
        if checks and not cfg.record_analysis:
            cfg = cfg.with_(record_analysis=True)
        res = run_experiment(cfg)
        found = run_checks(cfg, res.trajectory) if checks else []
        # trajectories are only needed for the checks
        res.trajectory = None
        outcomes.append(RunOutcome(cfg, res, summarize(res.metrics), found))
    return outcomes


def sweep_table(outcomes, bandwidths):
    """Seconds per iteration for each run at each server bandwidth."""
    rows = []
    for o in outcomes:
        m = o.result.metrics
        bits = sum(r.bits_up + r.bits_down for r in m) / len(m)
        compute = o.config.cost_model.per_worker_compute
        for bw in bandwidths:
            rows.append(
                {
                    "name": o.config.name,
                    "algorithm": o.config.algorithm,
                    "bandwidth": bw,
                    "inverse_bandwidth": 1.0 / bw,
                    "bits_per_iter": bits,
                    "seconds_per_iter": compute + bits / bw,
                }
            )
    return rows


SUMMARY_COLUMNS = (
    "name",
    "algorithm",
    "worker_compressor",
    "server_compressor",
    "workers",
    "iterations",
    "final_loss",
    "theorem_metric",
    "total_bits",
    "sim_time_s",
    "max_server_delta_norm",
    "max_worker_delta_norm",
)


def _summary_row(o):
    c, s = o.config, o.summary
    server = c.downlink_compressor.label() if c.algorithm == "doublesqueeze" else "dense"
    worker = "dense" if c.algorithm == "vanilla" else c.worker_compressor.label()
    return {
        "name": c.name,
        "algorithm": c.algorithm,
        "worker_compressor": worker,
        "server_compressor": server,
        "workers": c.n_workers,
        "iterations": s.iterations,
        "final_loss": s.final_loss,
        "theorem_metric": s.theorem_metric,
        "total_bits": s.total_bits,
        "sim_time_s": s.total_sim_time_s,
        "max_server_delta_norm": s.max_server_delta_norm,
        "max_worker_delta_norm": s.max_worker_delta_norm,
    }


def _cell(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _text_table(rows, columns):
    cells = [[c for c in columns]] + [
        [format(r[c], ".6g") if isinstance(r[c], float) else str(r[c]) for c in columns] for r in rows
    ]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def emit_report(batch, outcomes, out_dir=None):
    """Write per-run metrics, summary tables and the report; return written paths."""
    if not outcomes:
        raise ValueError("no results to report")
    out_dir = out_dir or batch.output_dir
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for o in outcomes:
        p = os.path.join(out_dir, f"{o.config.name}.csv")
        write_metrics_csv(o.result.metrics, p)
        written.append(p)

    rows = [_summary_row(o) for o in outcomes]
    p = os.path.join(out_dir, "summary.csv")
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([_cell(r[c]) for c in SUMMARY_COLUMNS])
    written.append(p)
    table = _text_table(rows, SUMMARY_COLUMNS)
    p = os.path.join(out_dir, "summary.txt")
    with open(p, "w") as fh:
        fh.write(table + "\n")
    written.append(p)

    report = [f"batch: {batch.name}", f"paired: {batch.paired}", "", table, ""]
    if any(o.checks for o in outcomes):
        report.append("checks:")
        for o in outcomes:
            for c in o.checks:
                status = "ok" if c.ok else "FAIL"
                report.append(f"  {o.config.name:>16}  {c.name:<32} {c.value:.3e} (limit {c.limit:.1e})  {status}")
                if c.note:
                    report.append(f"  {'':>16}  {c.note}")
        report.append("")
    if batch.bandwidth_sweep:
        sweep = sweep_table(outcomes, batch.bandwidth_sweep)
        cols = ("name", "algorithm", "bandwidth", "inverse_bandwidth", "bits_per_iter", "seconds_per_iter")
        p = os.path.join(out_dir, "bandwidth_sweep.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in sweep:
                w.writerow([_cell(r[c]) for c in cols])
        written.append(p)
        report.append("seconds per iteration vs server bandwidth:")
        report.append(_text_table(sweep, cols))
        report.append("")
    p = os.path.join(out_dir, "report.txt")
    with open(p, "w") as fh:
        fh.write("\n".join(report))
    written.append(p)
    return written


def run_batch(batch, out_dir=None, checks=None, log=print):
    """Execute ``batch`` and write its reports; return a process exit status."""
    try:
        outcomes = execute_batch(batch, checks)
        emit_report(batch, outcomes, out_dir)
    except ConfigError as exc:
        log(f"config error: {exc}")
        return EXIT_CONFIG
    except (EcsgdError, OSError, ValueError, FloatingPointError) as exc:
        log(f"runtime error: {exc}")
        return EXIT_RUNTIME
    failed = [(o.config.name, c.name) for o in outcomes for c in o.checks if not c.ok]
    for name, check in failed:
        log(f"checker failed: {name}: {check}")
    return EXIT_CHECK if failed else EXIT_OK
