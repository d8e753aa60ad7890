"""Command-line entry point.

Every subcommand accepts ``--config FILE``; keys in the section named after
the subcommand become flag defaults, and explicit flags win. Outputs are
written atomically, and one JSON summary line goes to stdout.

Exit codes: 0 success, 1 failed check, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .acceptance import NAMES, parse_selection, run_suite
from .bounds import BUDGETS, ConstantsProfile, InitStats, RegimeParams, budget, cross_reg_ulmc, err_bound, harnack_C
from .config import config_hash, parse_list, read_ini, resolve_output, write_csv
from .coupling import evolve_coupled, evolve_ibm, girsanov_kl_bound, girsanov_kl_ibm, kl_ibm_exact
from .errors import CertificationError, ConfigError, KinlmcError
from .kernels import ChainConfig, GaussianMoments, PhaseState, run_chain, stationary_moments
from .metrics import fit_exponent, strong_error, weak_error
from .potentials import make_quadratic, potential_from_config
from .shifts import DEFAULT_A_FACTOR, DEFAULT_C0, ShiftSchedule, lambda_grid, lambda_min_certify

REGIME_PRESETS = {
    "strong": (1.0, 1.0, math.sqrt(32.0)),
    "weak": (0.0, 1.0, math.sqrt(32.0)),
    "semiconvex": (-1.0, 1.0, 1.0),
}


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_target(path: str):
    cp = read_ini(path)
    if not cp.has_section("target"):
        raise ConfigError(f"{path}: missing [target] section")
    return potential_from_config(dict(cp["target"]))


def _floats(raw: str) -> list[float]:
    vals = parse_list(raw)
    if not vals:
        raise ConfigError("empty list")
    return vals


def _summary(**kw) -> None:
    print(json.dumps(kw, sort_keys=True, default=str))


def _params_hash(args: argparse.Namespace) -> str:
    skip = {"func", "out", "config"}
    return config_hash({k: v for k, v in sorted(vars(args).items()) if k not in skip})


# ---------------------------------------------------------------- subcommands

def cmd_sample(args) -> int:
    pot = _load_target(args.target)
    init = _default_init(pot)
    cfg = ChainConfig(gamma=args.gamma, h=args.h, n_steps=args.steps, seed=args.seed, kernel=args.kernel,
                      n_replicas=args.replicas, record_every=args.record_every, last_step=args.last_step,
                      substeps=args.substeps)
    res = run_chain(pot, init, cfg)
    rows = []
    for i, step in enumerate(res.steps):
        for r in range(cfg.n_replicas):
            rows.append([int(step), r, res.mean_x_norm[i, r], res.cov_trace_x[i, r], res.cov_trace_p[i, r],
                         int(res.grad_evals[i, r])])
    out = write_csv(resolve_output(args.out), ["step", "replica", "mean_x_norm", "cov_trace_x", "cov_trace_p",
                                               "grad_evals"], rows, _params_hash(args), args.seed)
    _summary(command="sample", out=str(out), rows=len(rows),
             final_cov_trace_x=float(np.trace(res.ensemble_cov[-1][:pot.dim, :pot.dim])))
    return 0


def _default_init(pot) -> GaussianMoments:
    if pot.is_quadratic and pot.alpha > 0:
        return stationary_moments(pot.hessian_matrix)
    return GaussianMoments(np.zeros(2 * pot.dim), np.eye(2 * pot.dim))


def cmd_local_error(args) -> int:
    pot = _load_target(args.target)
    init = _default_init(pot)
    hs = _floats(args.h_grid)
    rows, strong, weak = [], [], []
    for i, h in enumerate(hs):
        s = strong_error(args.kernel, pot, init, args.gamma, h, args.kref, args.paths,
                         rngmod.stream(args.seed, "cli-strong", i))
        w = weak_error(args.kernel, pot, init, args.gamma, h, args.kref, args.paths, args.resample,
                       rngmod.stream(args.seed, "cli-weak", i))
        strong.append(s)
        weak.append(w)
        rows.append([h, s.pos, s.mom, w.pos, w.mom, s.pos_se, s.mom_se, w.pos_se, w.mom_se])
    out = write_csv(resolve_output(args.out), ["h", "pos_strong", "mom_strong", "pos_weak", "mom_weak",
                                               "pos_strong_se", "mom_strong_se", "pos_weak_se", "mom_weak_se"],
                    rows, _params_hash(args), args.seed)
    fits = {}
    if len(hs) >= 4:
        for name, vals in (("pos_strong", [s.pos for s in strong]), ("mom_strong", [s.mom for s in strong]),
                           ("mom_weak", [w.mom for w in weak])):
            if all(v > 0 for v in vals):
                fits[name] = round(fit_exponent(hs, vals).exponent, 4)
    _summary(command="local-error", out=str(out), exponents=fits)
    return 0


def _schedule(args) -> ShiftSchedule:
    A = args.A if args.A is not None else 0.0
    return ShiftSchedule.for_regime(args.alpha, args.beta, args.gamma, args.T, c0=args.c0, A=A, h=args.h)


def cmd_coupling(args) -> int:
    dx, dp = np.array(_floats(args.dx)), np.array(_floats(args.dp))
    if dx.shape != dp.shape:
        raise ConfigError("--dx and --dp must have the same length")
    if args.mode == "ibm-exact":
        traj = evolve_ibm(args.gamma, args.T, dx, dp, record_every=args.record_every)
        value = girsanov_kl_ibm(args.gamma, args.T, dx, dp)
        extra = {"girsanov": value, "closed_form": kl_ibm_exact(args.gamma, args.T, dx, dp)}
    else:
        pot = _load_target(args.target) if args.target else make_quadratic(
            np.diag(np.linspace(args.alpha, args.beta, dx.size)), allow_indefinite=True)
        sched = _schedule(args)
        x0 = np.zeros(dx.size)
        main, aux = PhaseState(x0 + dx, x0 + dp), PhaseState(x0, x0.copy())
        stop = args.T if sched.A > 0 else args.T * (1 - args.stop_fraction)
        traj = evolve_coupled(pot, sched, main, aux, dt=args.dt, T_stop=stop, record_every=args.record_every)
        extra = {"final_twisted_dist": float(traj.twisted_dist[-1])}
        if args.mode == "girsanov":
            extra["girsanov"] = girsanov_kl_bound(pot, sched, main, aux, dt=args.dt)
    out = write_csv(resolve_output(args.out), ["t", "twisted_dist", "energy"], traj.rows().tolist(),
                    _params_hash(args), args.seed)
    _summary(command="coupling", mode=args.mode, out=str(out), **extra)
    return 0


def cmd_certify(args) -> int:
    alpha, beta, gamma = REGIME_PRESETS[args.regime]
    alpha = args.alpha if args.alpha is not None else alpha
    beta = args.beta if args.beta is not None else beta
    gamma = args.gamma if args.gamma is not None else gamma
    A = (args.A if args.A is not None else 0.0)
    sched = ShiftSchedule.for_regime(alpha, beta, gamma, args.T, c0=args.c0, A=A, h=args.h)
    t = np.linspace(0.0, args.T, args.grid + 1)
    if A == 0:
        t = t[:-1]
    rep = lambda_min_certify(sched, t, lambda_grid(alpha, beta), raise_on_fail=False)
    slack = (rep.rows[:, 2] - rep.rows[:, 3]) / rep.rows[:, 3]
    rows = [[*r, s] for r, s in zip(rep.rows.tolist(), slack)]
    out = write_csv(resolve_output(args.out), ["t", "worst_lambda", "lambda_min", "floor", "relative_slack"], rows,
                    _params_hash(args), args.seed)
    _summary(command="certify", regime=args.regime, out=str(out), worst_slack=rep.worst_slack,
             worst_t=rep.worst_t, worst_lambda=rep.worst_lambda, passed=rep.passed)
    if not rep.passed:
        raise CertificationError(f"bound violated at t={rep.worst_t}, lambda={rep.worst_lambda}")
    return 0


def _regime_from(section: dict) -> RegimeParams:
    keys = {"alpha": float, "beta": float, "gamma": float, "T": float, "h": float, "N": int, "c0": float,
            "A": float, "dim": int}
    kw = {}
    for k, typ in keys.items():
        raw = section.get(k, section.get(k.lower()))
        if raw is not None:
            kw[k] = typ(float(raw)) if typ is int else typ(raw)
    for k in ("alpha", "beta", "gamma"):
        if k not in kw:
            raise ConfigError(f"[regime] is missing {k!r}")
    return RegimeParams(**kw)


def _dataclass_from(cls, section, where: str):
    names = {f.name.lower(): f.name for f in dataclasses.fields(cls)}
    kw = {}
    for key, raw in section.items():
        if key.lower() not in names:
            raise ConfigError(f"unknown key {key!r} in [{where}]")
        try:
            kw[names[key.lower()]] = float(raw)
        except ValueError:
            raise ConfigError(f"bad value for {key!r} in [{where}]: {raw!r}") from None
    return cls(**kw)


def cmd_bounds(args) -> int:
    cp = read_ini(args.params)
    if not cp.has_section("regime"):
        raise ConfigError(f"{args.params}: missing [regime] section")
    params = _regime_from(dict(cp["regime"]))
    profile = _dataclass_from(ConstantsProfile, cp["constants"] if cp.has_section("constants") else {}, "constants")
    result: dict = {"command": "bounds", "calc": args.calc}
    if args.calc == "harnack":
        result["value"] = harnack_C(params, profile)
        result["gamma0"] = params.gamma0(profile)
    elif args.calc == "err":
        result["value"] = err_bound(params, args.Ew, args.Es, args.case, profile)
    elif args.calc == "cross-reg":
        d = params.dim
        vec = lambda name: np.array(_floats(getattr(args, name))) if getattr(args, name) else np.zeros(d)
        result["value"] = cross_reg_ulmc(params, vec("x"), vec("xbar"), vec("p"), vec("pbar"), vec("grad"), args.q,
                                         profile)
    elif args.calc == "budget":
        init = _dataclass_from(InitStats, cp["init"] if cp.has_section("init") else {}, "init")
        b = budget(args.theorem, args.eps, params, init, profile)
        result.update(h=b.h, N=b.N, theorem=b.theorem, notes=b.notes)
    _summary(**result)
    return 0


def cmd_accept(args) -> int:
    only = parse_selection(args.only)
    out = resolve_output(args.out)
    results = run_suite(out, seed=args.seed, only=only, params_path=args.config,
                        echo=lambda line: print(line, file=sys.stderr))
    failed = [r.number for r in results if not r.passed]
    _summary(command="accept", suite=args.suite, out=str(out), passed=not failed, failed=failed,
             criteria={r.number: ("PASS" if r.passed else "FAIL") for r in results})
    return 1 if failed else 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kinlmc", description="Kinetic Langevin samplers, couplings and bound calculators.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_default):
        p.add_argument("--config", help="INI file whose [<subcommand>] section supplies defaults")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=out_default)

    p = sub.add_parser("sample", help="run a sampler and write per-replica moment summaries")
    common(p, "sample.csv")
    p.add_argument("--target", required=True, help="INI file with a [target] section")
    p.add_argument("--kernel", choices=["ulmc", "rm-ulmc", "exact", "reference"], default="ulmc")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--h", type=float, default=0.1)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--replicas", type=int, default=8)
    p.add_argument("--record-every", type=int, default=10)
    p.add_argument("--last-step", choices=["same", "ulmc"], default="same")
    p.add_argument("--substeps", type=int, default=1)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("local-error", help="one-step strong and weak errors over a step-size grid")
    common(p, "local_error.csv")
    p.add_argument("--target", required=True)
    p.add_argument("--kernel", choices=["ulmc", "rm-ulmc", "exact"], default="ulmc")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--h-grid", default="0.2,0.1,0.05,0.025")
    p.add_argument("--paths", type=int, default=4096)
    p.add_argument("--kref", type=int, default=256)
    p.add_argument("--resample", type=int, default=64)
    p.set_defaults(func=cmd_local_error)

    p = sub.add_parser("coupling", help="coupled trajectories and Girsanov energies")
    common(p, "coupling.csv")
    p.add_argument("--mode", choices=["contraction", "girsanov", "ibm-exact"], default="contraction")
    p.add_argument("--target", help="INI file with a [target] section (default: diagonal quadratic)")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=math.sqrt(32.0))
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--c0", type=float, default=DEFAULT_C0)
    p.add_argument("--A", type=float, default=None)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--dx", default="1.0")
    p.add_argument("--dp", default="0.0")
    p.add_argument("--stop-fraction", type=float, default=1e-4)
    p.add_argument("--record-every", type=int, default=50)
    p.set_defaults(func=cmd_coupling)

    p = sub.add_parser("certify", help="numerical eigenvalue certification of the contraction bound")
    common(p, "certify.csv")
    p.add_argument("--regime", choices=sorted(REGIME_PRESETS), default="weak")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--c0", type=float, default=DEFAULT_C0)
    p.add_argument("--A", type=float, default=None, help=f"tempering constant (try {DEFAULT_A_FACTOR:g} * c0)")
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--grid", type=int, default=1000)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("bounds", help="evaluate a bound calculator and print JSON")
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.add_argument("--params", required=True, help="INI file with [regime], optional [constants] and [init]")
    p.add_argument("--calc", choices=["harnack", "err", "cross-reg", "budget"], default="harnack")
    p.add_argument("--case", choices=["strong", "weak", "semiconvex"], default="strong")
    p.add_argument("--Ew", type=float, default=0.0)
    p.add_argument("--Es", type=float, default=0.0)
    p.add_argument("--q", type=float, default=2.0)
    for name in ("x", "xbar", "p", "pbar", "grad"):
        p.add_argument(f"--{name}", default=None)
    p.add_argument("--theorem", choices=list(BUDGETS), default="rmulmc-convex")
    p.add_argument("--eps", type=float, default=0.01)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("accept", help="run the acceptance suite")
    p.add_argument("--suite", choices=["primary"], default="primary")
    p.add_argument("--config", help="INI overrides, one section per criterion")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="acceptance_out")
    p.add_argument("--only", default=None, help="comma-separated criterion numbers (1-%d)" % max(NAMES))
    p.set_defaults(func=cmd_accept)
    return parser


def _apply_config_defaults(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    """Feed the [<subcommand>] section of --config into the subparser defaults."""
    if not argv or "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return
    command = argv[0]
    if command in ("accept", "bounds"):
        return
    path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif a.startswith("--config="):
            path = a.split("=", 1)[1]
    if path is None:
        return
    cp = read_ini(path)
    sub = parser._subparsers._group_actions[0].choices.get(command)
    if sub is None or not cp.has_section(command):
        return
    known = {a.dest.lower(): a for a in sub._actions}
    defaults = {}
    for key, raw in cp[command].items():
        action = known.get(key.replace("-", "_").lower())
        if action is None:
            raise ConfigError(f"{path}: unknown key {key!r} in [{command}]")
        try:
            defaults[action.dest] = action.type(raw) if action.type else raw
        except ValueError:
            raise ConfigError(f"{path}: bad value for {key!r}: {raw!r}") from None
        action.required = False
    sub.set_defaults(**defaults)


def run_subcommand(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_defaults(parser, argv)
        args = parser.parse_args(argv)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except CertificationError as exc:
        print(f"kinlmc: check failed: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, FileNotFoundError) as exc:
        print(f"kinlmc: {exc}", file=sys.stderr)
        return 2
    except KinlmcError as exc:
        print(f"kinlmc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_subcommand())
