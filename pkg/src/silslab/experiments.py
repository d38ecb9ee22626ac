"""Config-driven Monte Carlo harness: recovery curves and method comparisons.

A config is a flat ``key = value`` file; grid keys (d, sigma, rho, c, n,
method) may repeat.  Each (cell, trial) pair gets its own derived seed, so
the rows do not depend on how trials are spread over workers.
"""
from __future__ import annotations

import csv
import io
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from itertools import product
from typing import Optional

import numpy as np

from . import baselines
from .exact import enumeration_size, solve_exact
from .generators import ModelSpec, generate
from .instance import as_vector, metrics, objective, top_sigma
from .rng import GAMMA, MASK64, splitmix64
from .sdp import SolverParams, recover

COLUMNS = ("model", "n", "d", "sigma", "rho", "c", "trial", "method", "recovered_any",
           "recovered_truth", "nonzeros", "tpr", "pred_err", "succ_rate", "objective", "wall_ms")
HEADER_COMMENT = ("# silslab results: one row per (cell, trial, method), then mean/min/max rows "
                  "per (cell, method); empty flag = not applicable")
METHODS = ("sdp", "lasso", "dantzig", "exact")
SAMPLE_RULES = {
    "d_log": lambda c, d, s, r: c * d * math.log(d),
    "rho2_sigma2_log": lambda c, d, s, r: c * r * r * s * s * math.log(d),
    "sigma2_rho2_log": lambda c, d, s, r: c * (s * s + r * r) * math.log(d),
    "sigma2_log": lambda c, d, s, r: c * s * s * math.log(d),
}
VERIFY_TOL = 1e-5
LIST_KEYS = ("d", "sigma", "rho", "c", "n", "method")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str = "recovery"               # recovery | comparison
    model: int = 3
    d: list = field(default_factory=lambda: [40])
    sigma: list = field(default_factory=lambda: [2])
    rho: list = field(default_factory=lambda: [0.5])
    c: list = field(default_factory=lambda: [1.0])
    n: list = field(default_factory=list)   # explicit sizes; bypass the sample rule
    n_rule: str = ""                     # empty: the rule the model's figure uses
    trials: int = 50
    method: list = field(default_factory=lambda: ["sdp"])
    param_rule: str = ""                 # cv | fixed; empty: cv for model 2, fixed otherwise
    cv_folds: int = 10
    signs: str = ""                      # empty: ones for model-2 comparisons, random otherwise
    model_c: float = 1.2
    model_c_prime: float = 1.05
    model_c_dprime: float = 1.0
    seed: int = 0
    exact_budget: int = 10 ** 6
    timing: bool = True                  # false writes wall_ms = 0 for byte-stable output
    output: str = "results.csv"
    solver: dict = field(default_factory=lambda: {"feas_tol": 1e-5})

    def __post_init__(self):
        if self.kind not in ("recovery", "comparison"):
            raise ConfigError("kind must be 'recovery' or 'comparison'")
        if self.model not in (1, 2, 3):
            raise ConfigError("model must be 1, 2 or 3")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.method:
            raise ConfigError("method list is empty")
        bad = [m for m in self.method if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
        for key in ("d", "sigma", "rho"):
            if not getattr(self, key):
                raise ConfigError(f"grid '{key}' is empty")
        if not self.n and not self.c:
            raise ConfigError("need a control grid c or explicit n values")
        if self.rule not in SAMPLE_RULES:
            raise ConfigError(f"unknown n_rule {self.n_rule!r}")
        if self.params_by not in ("cv", "fixed"):
            raise ConfigError("param_rule must be 'cv' or 'fixed'")
        try:
            SolverParams(**self.solver)
        except TypeError as exc:
            raise ConfigError(f"bad solver override: {exc}") from exc

    @property
    def rule(self) -> str:
        if self.n_rule:
            return self.n_rule
        if self.kind == "comparison":
            return "sigma2_log"
        return {1: "d_log", 2: "rho2_sigma2_log", 3: "sigma2_rho2_log"}[self.model]

    @property
    def params_by(self) -> str:
        return self.param_rule or ("cv" if self.model == 2 else "fixed")

    @property
    def sign_mode(self) -> str:
        if self.signs:
            return self.signs
        return "ones" if (self.model == 2 and self.kind == "comparison") else "random"

    def cells(self) -> list:
        """(n, d, sigma, rho, c) tuples in config order; c is nan for explicit n."""
        out = []
        for d, s, r in product(self.d, self.sigma, self.rho):
            if self.n:
                out += [(int(n), d, s, r, float("nan")) for n in self.n]
            else:
                for c in self.c:
                    n = max(1, math.ceil(SAMPLE_RULES[self.rule](c, d, s, r) - 1e-9))
                    out.append((n, d, s, r, c))
        return out


def _coerce(name: str, raw: list, ftype):
    try:
        if name in LIST_KEYS:
            conv = {"d": int, "sigma": int, "n": int, "method": str}.get(name, float)
            return [conv(v) for v in raw]
        if len(raw) > 1:
            raise ConfigError(f"key '{name}' given more than once")
        v = raw[0]
        if name == "timing":
            if v.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"timing must be a boolean, got {v!r}")
            return v.lower() in ("true", "1", "yes")
        if ftype in ("int", int):
            return int(v)
        if ftype in ("float", float):
            return float(v)
        return v
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value for '{name}': {raw}") from exc


def parse_config(text: str) -> ExperimentConfig:
    """Flat ``key = value`` lines; '#' starts a comment; ``sdp.<field>`` overrides the solver."""
    values: dict = {}
    solver: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (t.strip() for t in line.split("=", 1))
        if key.startswith("sdp."):
            solver[key[4:]] = val
            continue
        values.setdefault(key, []).append(val)
    known = {f.name: f.type for f in fields(ExperimentConfig)}
    unknown = set(values) - set(known) - {"solver"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {k: _coerce(k, v, known[k]) for k, v in values.items()}
    base = {"feas_tol": 1e-5}
    ptypes = {f.name: f.type for f in fields(SolverParams)}
    for k, v in solver.items():
        if k not in ptypes:
            raise ConfigError(f"unknown solver field 'sdp.{k}'")
        try:
            base[k] = int(v) if ptypes[k] in ("int", int) else (v if ptypes[k] in ("str", str) else float(v))
        except ValueError as exc:
            raise ConfigError(f"bad value for 'sdp.{k}': {v!r}") from exc
    kwargs["solver"] = base
    return ExperimentConfig(**kwargs)


def read_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def derive_seed(base: int, *keys: int) -> int:
    x = int(base) & MASK64
    for k in keys:
        with np.errstate(over="ignore"):
            v = np.uint64(x) + np.uint64((int(k) + 1) & MASK64) * GAMMA
        x = int(splitmix64(np.array([v]))[0])
    return x


def target_x(z_star, sigma: int) -> np.ndarray:
    """The sign vector the experiments try to recover: signs on the sigma largest |z*_i|."""
    z = as_vector(z_star)
    x = np.zeros(z.size, dtype=int)
    top = top_sigma(z, sigma)
    x[top] = np.sign(z[top]).astype(int)
    return x


def _row(cell, trial, method, **vals) -> dict:
    n, d, s, r, c = cell
    row = dict(model=None, n=n, d=d, sigma=s, rho=r, c=c, trial=trial, method=method,
               recovered_any=None, recovered_truth=None, nonzeros=math.nan, tpr=math.nan,
               pred_err=math.nan, succ_rate=math.nan, objective=math.nan, wall_ms=0.0)
    row.update(vals)
    return row


def _metric_fields(z, truth, inst):
    m = metrics(z, truth, inst.M, inst.sigma)
    return dict(nonzeros=m.nonzeros, tpr=m.tpr, pred_err=m.prediction_error,
                succ_rate=m.successful_recovery_rate)


def run_trial(cfg: ExperimentConfig, cell_index: int, trial: int) -> list:
    """All method rows of one trial.  Solver failures become rows of NaNs."""
    cell = cfg.cells()[cell_index]
    n, d, s, r, _ = cell
    seed = derive_seed(cfg.seed, cell_index, trial)
    spec = ModelSpec(cfg.model, n, d, s, noise_param=r, c=cfg.model_c, c_prime=cfg.model_c_prime,
                     c_dprime=cfg.model_c_dprime, seed=seed, signs=cfg.sign_mode)
    inst, truth = generate(spec)
    xt = target_x(truth.z_star, s)
    affordable = enumeration_size(d, s) <= cfg.exact_budget
    best = None
    if affordable and ("exact" in cfg.method or "sdp" in cfg.method):
        t0 = time.perf_counter()
        best = solve_exact(inst)
        exact_ms = 1000 * (time.perf_counter() - t0)
    rows = []
    for method in cfg.method:
        t0 = time.perf_counter()
        try:
            if method == "sdp":
                sol, x = recover(inst, SolverParams(**cfg.solver))
                ok = x is not None
                if ok and best is not None:
                    ok = objective(inst, x) <= best.best_value + VERIFY_TOL
                row = _row(cell, trial, method, recovered_any=int(ok),
                           recovered_truth=int(x is not None and np.array_equal(x.x, xt)),
                           objective=sol.objective, **_metric_fields(sol.W[1:, 0], truth, inst))
            elif method == "exact":
                if best is None:
                    raise ValueError(f"exact enumeration exceeds budget {cfg.exact_budget}")
                row = _row(cell, trial, method, recovered_any=1,
                           recovered_truth=int(np.array_equal(best.best_x.x, xt)),
                           objective=best.best_value, **_metric_fields(best.best_x, truth, inst))
            else:
                if cfg.params_by == "cv":
                    res = baselines.cross_validate(inst.M, inst.b, method, folds=min(cfg.cv_folds, n),
                                                   seed=derive_seed(seed, 1))
                elif method == "lasso":
                    res = baselines.lasso(inst.M, inst.b, baselines.lasso_rule(n, d))
                else:
                    res = baselines.dantzig(inst.M, inst.b, baselines.dantzig_rule(r, d))
                row = _row(cell, trial, method,
                           recovered_truth=int(np.array_equal(target_x(res.z, s), xt)),
                           objective=res.objective_or_l1, **_metric_fields(res.z, truth, inst))
        except Exception as exc:  # recorded, not fatal
            print(f"warning: {method} failed on cell {cell_index} trial {trial}: {exc}", file=sys.stderr)
            row = _row(cell, trial, method)
        ms = 1000 * (time.perf_counter() - t0)
        if method == "exact" and best is not None:
            ms = exact_ms
        row["wall_ms"] = ms if cfg.timing else 0.0
        row["model"] = cfg.model
        rows.append(row)
    return rows


def _workers() -> int:
    cap = os.environ.get("SILS_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def _aggregate(rows: list) -> list:
    out = []
    for stat, fn in (("mean", np.mean), ("min", np.min), ("max", np.max)):
        agg = dict(rows[0])
        agg["trial"] = stat
        for col in ("recovered_any", "recovered_truth", "nonzeros", "tpr", "pred_err",
                    "succ_rate", "objective", "wall_ms"):
            vals = [r[col] for r in rows if r[col] is not None]
            vals = [v for v in vals if not (isinstance(v, float) and math.isnan(v))]
            agg[col] = float(fn(vals)) if vals else (None if rows[0][col] is None else math.nan)
        out.append(agg)
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{float(v):.10g}"
    return str(v)


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None) -> list:
    """Trial rows then aggregates, in (cell, trial) order regardless of completion order."""
    cells = cfg.cells()
    jobs = [(ci, t) for ci in range(len(cells)) for t in range(cfg.trials)]
    workers = _workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(run_trial, [cfg] * len(jobs), *zip(*jobs)))
    else:
        results = [run_trial(cfg, ci, t) for ci, t in jobs]
    by_cell: dict = {}
    for (ci, _), rows in zip(jobs, results):
        by_cell.setdefault(ci, []).extend(rows)
    out = []
    for ci in range(len(cells)):
        rows = by_cell.get(ci, [])
        out += rows
        for m in cfg.method:
            out += _aggregate([r for r in rows if r["method"] == m])
    return out


def to_csv(rows: list) -> str:
    buf = io.StringIO()
    buf.write(HEADER_COMMENT + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in COLUMNS])
    return buf.getvalue()


def read_csv(path_or_text: str) -> list:
    """Parse a results file back into dicts of strings (comment line skipped)."""
    text = path_or_text
    if "\n" not in path_or_text:
        with open(path_or_text) as fh:
            text = fh.read()
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _run(cfg: ExperimentConfig, kind: str, out: Optional[str], workers) -> str:
    if cfg.kind != kind:
        cfg = replace(cfg, kind=kind)
    text = to_csv(run_experiment(cfg, workers))
    path = out if out is not None else cfg.output
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def run_recovery_curve(cfg: ExperimentConfig, out: Optional[str] = None, workers=None) -> str:
    return _run(cfg, "recovery", out, workers)


def run_comparison(cfg: ExperimentConfig, out: Optional[str] = None, workers=None) -> str:
    return _run(cfg, "comparison", out, workers)


def summarize(rows: list, method: str, col: str, cell: Optional[dict] = None) -> float:
    """Mean of a column over trial rows of one method (optionally filtered by cell fields)."""
    vals = []
    for r in rows:
        if r["method"] != method or str(r["trial"]) in ("mean", "min", "max"):
            continue
        if cell and any(str(r[k]) != str(v) for k, v in cell.items()):
            continue
        v = r[col]
        if v is None or v == "":
            continue
        vals.append(float(v))
    return float(np.mean(vals)) if vals else math.nan
