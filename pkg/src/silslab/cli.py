"""Command-line entry point: ``silslab <subcommand> ...``.

Exit codes: 0 success, 1 usage or input error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import fields

import numpy as np

from . import baselines, certificates, experiments, hardness
from .exact import solve_exact
from .generators import ModelSpec, generate
from .instance import read_instance, write_instance
from .sdp import SolverParams, Status, recover

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _read_vector(path: str) -> np.ndarray:
    with open(path) as fh:
        toks = [t for ln in fh for t in ln.split("#", 1)[0].split()]
    if not toks:
        raise ValueError(f"{path}: empty vector file")
    return np.array([float(t) for t in toks])


def _read_kv(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for ln in fh:
            ln = ln.split("#", 1)[0].strip()
            if ln:
                if "=" not in ln:
                    raise ValueError(f"{path}: expected key = value, got {ln!r}")
                k, v = (t.strip() for t in ln.split("=", 1))
                out[k] = v
    return out


def _solver_params(path) -> SolverParams:
    if path is None:
        return SolverParams()
    types = {f.name: f.type for f in fields(SolverParams)}
    kw = {}
    for k, v in _read_kv(path).items():
        k = k[4:] if k.startswith("sdp.") else k
        if k not in types:
            raise ValueError(f"unknown solver parameter {k!r}")
        kw[k] = int(v) if types[k] in ("int", int) else (v if types[k] in ("str", str) else float(v))
    return SolverParams(**kw)


# --- subcommands ---------------------------------------------------------------------

def cmd_generate(a) -> int:
    spec = ModelSpec(a.model, a.n, a.d, a.sigma, noise_param=a.rho, c=a.c, c_prime=a.cp,
                     c_dprime=a.cpp, seed=a.seed, signs=a.signs)
    inst, truth = generate(spec)
    write_instance(a.out, inst, truth)
    return EXIT_OK


def cmd_solve(a) -> int:
    inst, _ = read_instance(a.inp)
    sol, x = recover(inst, _solver_params(a.params))
    lines = [f"status {sol.status.value}", f"objective {_fmt(sol.objective)}",
             f"iterations {sol.iterations}", f"primal_residual {_fmt(sol.primal_residual)}",
             f"dual_residual {_fmt(sol.dual_residual)}", f"size {inst.d + 1}"]
    lines += [" ".join(_fmt(v) for v in row) for row in sol.W]
    if a.round:
        lines.append("#x")
        lines.append("none" if x is None else " ".join(str(int(v)) for v in x.x))
    _write(a.out, "\n".join(lines) + "\n")
    if sol.status is not Status.CONVERGED:
        raise NumericFailure(f"solver stopped with status {sol.status.value}")
    return EXIT_OK


def cmd_exact(a) -> int:
    inst, _ = read_instance(a.inp)
    res = solve_exact(inst)
    lines = [f"value {_fmt(res.best_value)}", f"unique {int(res.unique)}",
             f"second_value {_fmt(res.second_best_value)}", f"candidates {res.candidates}",
             "#x", " ".join(str(int(v)) for v in res.best_x.x)]
    _write(a.out, "\n".join(lines) + "\n")
    return EXIT_OK


def _grid(text):
    if text is None:
        return certificates.DELTA_GRID
    vals = [float(t) for t in text.split(",") if t.strip()]
    if not vals:
        raise ValueError("empty --delta-grid")
    return vals


def cmd_certify(a) -> int:
    inst, truth = read_instance(a.inp)
    if a.xstar == "truth":
        if truth is None:
            raise ValueError("--xstar truth needs an instance file with a #z_star section")
        x = experiments.target_x(truth.z_star, inst.sigma)
    else:
        x = _read_vector(a.xstar)
    grid = _grid(a.delta_grid)
    th = a.theorem
    if th in ("D", "E") and truth is None:
        raise ValueError(f"theorem {th} needs ground truth in the instance file")
    if th == "A":
        rep = certificates.check_thm_sparse(inst, x, grid)
    elif th == "B":
        rep = certificates.check_thm_general(inst, x, grid)
    elif th == "C":
        rep = certificates.check_cor_low_coherence(inst, x, a.Delta, grid)
    elif th == "D":
        if truth.cov is None:
            raise ValueError("theorem D needs a #cov section")
        params = certificates.StochasticParams(n=inst.n, d=inst.d, L=a.L, rho=truth.noise_param,
                                               c1=a.c1, B=a.B, B1=a.B1, B2=a.B2)
        rep = certificates.check_thm_stochastic(truth.cov, truth.z_star, x, inst.sigma, params, grid)
    elif th == "E":
        rep = certificates.check_thm_sparse_recovery(inst, truth, grid)
    else:
        rep = certificates.check_certificate_grid(inst, x, grid)
    _write(a.report, rep.to_text())
    return EXIT_OK


def cmd_baseline(a) -> int:
    inst, truth = read_instance(a.inp)
    M, b = inst.M, inst.b
    if a.param == "cv":
        res = baselines.cross_validate(M, b, a.method, folds=a.folds, seed=a.seed)
    else:
        if a.param == "paper-rule":
            if a.method == "lasso":
                t = baselines.lasso_rule(inst.n, inst.d)
            else:
                rho = a.rho if a.rho is not None else (truth.noise_param if truth else None)
                if rho is None:
                    raise ValueError("paper-rule for dantzig needs --rho or a #noise_param section")
                t = baselines.dantzig_rule(rho, inst.d)
        else:
            try:
                t = float(a.param)
            except ValueError:
                raise UsageError(f"--param must be a number, 'cv' or 'paper-rule', got {a.param!r}")
        res = baselines.lasso(M, b, t) if a.method == "lasso" else baselines.dantzig(M, b, t)
    lines = [f"method {a.method}", f"parameter {_fmt(res.parameter)}",
             f"objective {_fmt(res.objective_or_l1)}", f"kkt_violation {_fmt(res.kkt_violation)}",
             f"duality_gap {_fmt(res.duality_gap)}", f"feas_residual {_fmt(res.feas_residual)}",
             f"iterations {res.iterations}", "#z", " ".join(_fmt(v) for v in res.z)]
    _write(a.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_reduce(a) -> int:
    x3c = hardness.read_x3c(a.inp)
    write_instance(a.out, hardness.reduce_x3c(x3c))
    return EXIT_OK


def cmd_experiment(a) -> int:
    cfg = experiments.read_config(a.config)
    run = experiments.run_comparison if cfg.kind == "comparison" else experiments.run_recovery_curve
    run(cfg, out=a.out, workers=a.workers)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="silslab", description="Sparse integer least squares laboratory.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate", help="sample a synthetic instance")
    g.add_argument("--model", type=int, choices=(1, 2, 3), required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--sigma", type=int, required=True)
    g.add_argument("--rho", type=float, default=0.0)
    g.add_argument("--c", type=float, default=1.2)
    g.add_argument("--cp", type=float, default=1.05)
    g.add_argument("--cpp", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--signs", choices=("random", "ones"), default="random")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="solve the SDP relaxation")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--params", help="key = value file of solver settings")
    s.add_argument("--out", default="-")
    s.add_argument("--round", action="store_true", help="append the extracted x, if any")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("exact", help="brute-force optimum")
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--out", default="-")
    e.set_defaults(func=cmd_exact)

    c = sub.add_parser("certify", help="check sufficient conditions for x*")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--xstar", required=True, help="vector file or 'truth'")
    c.add_argument("--theorem", choices=tuple("ABCDEF"), required=True)
    c.add_argument("--report", default="-")
    c.add_argument("--delta-grid", help="comma-separated delta values")
    c.add_argument("--Delta", type=float, default=None, help="Delta for theorem C (default: tightest)")
    for k in ("L", "c1", "B", "B1", "B2"):
        c.add_argument(f"--{k}", type=float, default=1.0, help=f"constant {k} for theorem D")
    c.set_defaults(func=cmd_certify)

    b = sub.add_parser("baseline", help="Lasso or Dantzig selector")
    b.add_argument("--method", choices=("lasso", "dantzig"), required=True)
    b.add_argument("--param", required=True, help="a number, 'cv' or 'paper-rule'")
    b.add_argument("--in", dest="inp", required=True)
    b.add_argument("--out", default="-")
    b.add_argument("--folds", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--rho", type=float, default=None)
    b.set_defaults(func=cmd_baseline)

    r = sub.add_parser("reduce-x3c", help="X3C instance to exact-fit SILS")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reduce)

    x = sub.add_parser("experiment", help="run a config-driven experiment")
    x.add_argument("--config", required=True)
    x.add_argument("--out", default=None, help="override the config's output path")
    x.add_argument("--workers", type=int, default=None)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        sys.stderr.write(parser.format_usage())
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError(parser.format_usage())
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except OSError as exc:
        sys.stderr.write(f"silslab: file error: {exc}\n")
        return EXIT_USAGE
    except (NumericFailure, baselines.ConvergenceError, baselines.LPError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        sys.stderr.write(f"silslab: numeric failure: {exc}\n")
        return EXIT_NUMERIC
    except ValueError as exc:
        sys.stderr.write(f"silslab: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
