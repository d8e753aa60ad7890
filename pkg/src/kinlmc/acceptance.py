"""Acceptance suite: fourteen numbered checks with frozen parameters.

Each check returns a ``CriterionResult`` holding a pass flag, headline
metrics and the rows of its CSV output. ``run_suite`` runs a selection,
writes ``cNN_<name>.csv`` files plus ``summary.json`` and never hides a
failure. CSV contents depend only on the master seed and the parameters,
never on timing or thread count.
"""

from __future__ import annotations

import ast
import hashlib
import math
import os
import subprocess
import sys
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy import stats

from . import rng as rngmod
from .bounds import DEFAULT_PROFILE, RegimeParams, harnack_C
from .config import config_hash, parse_list, read_ini, write_csv, write_json
from .coupling import (CoupledPair, diffuse_then_shift_step, evolve_coupled, fit_window_contraction,
                       girsanov_kl_ibm, kl_ibm_exact, kl_ibm_gaussian)
from .errors import ConfigError, StepSizeWarning
from .kernels import (ChainConfig, GaussianMoments, PhaseState, gaussian_transition, run_chain,
                      sample_midpoint_u, sample_midpoint_v, stationary_moments, u_cdf, v_cdf)
from .metrics import empirical_w2_gaussian_proxy, fit_exponent, strong_error, ulmc_kl_plateau, weak_error
from .noise import cov_xi1_xi1, cov_xi1_xi2, var_xi1, var_xi2
from .potentials import make_gaussian, make_quadratic
from .shifts import ShiftSchedule, lambda_grid, lambda_min_certify, window_map

DEFAULT_SEED = 20251019

REGIMES = {
    "strong": dict(alpha=0.1, beta=1.0, gamma=math.sqrt(32.0), spectrum=[0.1, 0.55, 1.0]),
    "weak": dict(alpha=0.0, beta=1.0, gamma=math.sqrt(32.0), spectrum=[0.0, 0.5, 1.0]),
    "semiconvex": dict(alpha=-1.0, beta=1.0, gamma=1.0, spectrum=[-1.0, 0.0, 1.0]),
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "c01": dict(paths=100000, substeps=1000, block=10000,
                gamma=[0.5, 1.0, 1.0, 2.0, 4.0, 1.0, 8.0, 0.2, 3.0],
                h=[1.0, 1.0, 0.2, 0.5, 0.25, 2.0, 0.1, 2.5, 1.0],
                s=[0.3, 0.5, 0.05, 0.1, 0.1, 1.0, 0.02, 1.0, 0.25],
                t=[0.7, 1.0, 0.15, 0.4, 0.2, 1.5, 0.08, 2.0, 0.25],
                z_max=3.0, budget=120.0),
    "c02": dict(gamma=[1.0, 10.0, 0.1], gamma_h=1e-3, tol=0.01, budget=1.0),
    "c03": dict(cases=5, dim=3, rel_step=0.02, tol=1e-3, budget=30.0),
    "c04": dict(c0=192.0, T=1.0, grid=1000, n_lambda=65, budget=10.0),
    "c05": dict(c0=192.0, horizons=[0.5, 2.0, 8.0], stop_fraction=1e-3, rel_step=0.05, slack=1e-6,
                record_stride=250, budget=120.0),
    "c06": dict(c0=192.0, A_factor=64.0, horizons=[1.0, 4.0], h_fractions=[0.01, 0.005], n_lambda=65,
                c_min=1.0 / 96.0, rk4_windows=4, budget=120.0),
    "c07": dict(dims=[1, 2, 4, 8, 16], gammas=[0.5, 2.0], times=[0.1, 1.0], split=[0.3, 0.7],
                stat_tol=1e-10, semigroup_tol=1e-9, budget=10.0),
    "c08": dict(spectrum=[0.1, 0.4, 0.7, 1.0], gamma=1.0, h=[0.2, 0.1, 0.05, 0.025], paths=10000, kref=256,
                mom_range=[1.75, 2.25], pos_range=[2.7, 3.3], budget=300.0),
    "c09": dict(spectrum=[0.1, 0.4, 0.7, 1.0], gamma=1.0, h=[0.2, 0.1, 0.05, 0.025], paths=10000, kref=256,
                resample=64, weak_range=[3.6, 4.4], mom_range=[1.75, 2.25], pos_range=[2.7, 3.3], budget=900.0),
    "c10": dict(spectrum=[0.1, 0.4, 0.7, 1.0], gamma=1.0, h=[0.2, 0.1, 0.05, 0.025], ratio_range=[3.0, 5.0],
                budget=60.0),
    "c11": dict(spectrum=[1.0, 34.0, 67.0, 100.0], gamma=2.0, h=0.02, T=6.0, replicas=20000, n_boot=200,
                budget=600.0),
    "c12": dict(alphas=[1.0, 0.1, 1.0], betas=[1.0, 1.0, 1.0], gammas=[5.656854249492381, 5.656854249492381, 10.0],
                small_T=[0.01, 0.001, 0.0001], ratio_range=[0.5, 2.0], fit_points=20, slope_tol=0.05, budget=1.0),
    "c13": dict(gamma_h=[0.01, 0.3, 1.0], draws=100000, alpha=0.01, budget=30.0),
    "c14": dict(timeout=1800.0),
}

NAMES = {
    1: "noise_covariance", 2: "integrated_bm_limit", 3: "optimal_shift_equality", 4: "contraction_certification",
    5: "continuous_coupling_decay", 6: "discrete_contraction", 7: "exact_gaussian_kernel", 8: "ulmc_order",
    9: "rmulmc_order", 10: "ulmc_bias_floor", 11: "budget_ordering", 12: "harnack_asymptotics",
    13: "midpoint_samplers", 14: "determinism",
}


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    columns: list[str]
    rows: list[list]
    metrics: dict[str, Any] = field(default_factory=dict)
    runtime: float = 0.0
    budget: float | None = None

    @property
    def filename(self) -> str:
        return f"c{self.number:02d}_{self.name}.csv"

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number:2d} {tag} {self.name}: {self.detail}"


def _coerce(default, raw: str):
    if isinstance(default, list):
        return parse_list(raw)
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(float(raw))
    if isinstance(default, float):
        return float(ast.literal_eval(raw.strip())) if "/" not in raw else _ratio(raw)
    return raw


def _ratio(raw: str) -> float:
    num, den = raw.split("/")
    return float(num) / float(den)


def load_parameters(path: str | os.PathLike | None = None) -> tuple[int, dict[str, dict[str, Any]]]:
    """Defaults, optionally overridden by an INI file with one section per criterion."""
    params = {k: dict(v) for k, v in DEFAULTS.items()}
    seed = DEFAULT_SEED
    if path is None:
        return seed, params
    cp = read_ini(path)
    if cp.has_section("experiment") and "seed" in cp["experiment"]:
        seed = int(cp["experiment"]["seed"])
    for section in cp.sections():
        if section == "experiment":
            continue
        if section not in params:
            raise ConfigError(f"{path}: unknown section [{section}]")
        # configparser folds keys to lower case
        names = {k.lower(): k for k in params[section]}
        for low, raw in cp[section].items():
            key = names.get(low)
            if key is None:
                raise ConfigError(f"{path}: unknown key {low!r} in [{section}]")
            try:
                params[section][key] = _coerce(DEFAULTS[section][key], raw)
            except (ValueError, SyntaxError):
                raise ConfigError(f"{path}: bad value for {section}.{key}: {raw!r}") from None
    return seed, params


# ---------------------------------------------------------------- 1, 2: noise covariances

def c01(p, seed):
    n_sub, total, bs = p["substeps"], p["paths"], p["block"]
    rows, zs = [], []
    for i, (g, h, s, t) in enumerate(zip(p["gamma"], p["h"], p["s"], p["t"])):
        dt = h / n_sub
        mids = (np.arange(n_sub) + 0.5) * dt
        ks, kt = int(round(s / dt)), int(round(t / dt))
        if not (math.isclose(ks * dt, s, rel_tol=1e-9) and math.isclose(kt * dt, t, rel_tol=1e-9)):
            raise ConfigError("c01: s and t must lie on the substep grid")
        W = np.zeros((n_sub, 3))
        W[:ks, 0] = np.sqrt(2 / g) * -np.expm1(-g * (s - mids[:ks]))
        W[:kt, 1] = np.sqrt(2 / g) * -np.expm1(-g * (t - mids[:kt]))
        W[:, 2] = np.sqrt(2 * g) * np.exp(-g * (h - mids))
        prods = []
        for b, (lo, hi) in enumerate(rngmod.blocks(total, bs)):
            gen = rngmod.stream(seed, f"c01-{i}", b)
            xi = (gen.standard_normal((hi - lo, n_sub)) * np.sqrt(dt)) @ W
            prods.append(np.column_stack([xi[:, 0] * xi[:, 1], xi[:, 1] * xi[:, 2], xi[:, 2] ** 2]))
        prods = np.concatenate(prods)
        est = prods.mean(axis=0)
        se = prods.std(axis=0, ddof=1) / np.sqrt(total)
        exact = [cov_xi1_xi1(g, s, t), cov_xi1_xi2(g, t, h), var_xi2(g, h)]
        for name, e, m, sd in zip(("cov_xi1s_xi1t", "cov_xi1t_xi2h", "var_xi2h"), exact, est, se):
            z = (m - e) / sd
            zs.append(abs(z))
            rows.append([g, h, s, t, name, e, m, sd, z])
    worst = max(zs)
    return (worst <= p["z_max"], f"max |z| = {worst:.3f} over {len(zs)} entries (limit {p['z_max']})",
            ["gamma", "h", "s", "t", "entry", "closed_form", "monte_carlo", "std_error", "z"], rows,
            {"max_abs_z": worst})


def c02(p, seed):
    rows, ok = [], True
    for g in p["gamma"]:
        h = p["gamma_h"] / g
        r1 = var_xi1(g, h) / ((2 * g / 3) * h**3)
        r2 = cov_xi1_xi2(g, h, h) / (g * h**2)
        ok &= abs(r1 - 1) <= p["tol"] and abs(r2 - 1) <= p["tol"]
        rows.append([g, h, r1, r2])
    worst = max(max(abs(r[2] - 1), abs(r[3] - 1)) for r in rows)
    return ok, f"max |ratio - 1| = {worst:.2e} (limit {p['tol']})", ["gamma", "h", "var_ratio", "cov_ratio"], rows, \
        {"max_deviation": worst}


# ---------------------------------------------------------------- 3-6: shifts and couplings

def c03(p, seed):
    gen = rngmod.stream(seed, "c03")
    rows, worst = [], 0.0
    for k in range(p["cases"]):
        dx, dp = gen.standard_normal(p["dim"]), gen.standard_normal(p["dim"])
        g, T = gen.uniform(0.5, 4.0), gen.uniform(0.5, 3.0)
        energy = girsanov_kl_ibm(g, T, dx, dp, rel_step=p["rel_step"])
        closed, gauss = kl_ibm_exact(g, T, dx, dp), kl_ibm_gaussian(g, T, dx, dp)
        e1, e2 = abs(energy - closed) / closed, abs(energy - gauss) / gauss
        worst = max(worst, e1, e2)
        rows.append([k, g, T, energy, closed, gauss, e1, e2])
    return worst <= p["tol"], f"max relative gap = {worst:.2e} (limit {p['tol']})", \
        ["case", "gamma", "T", "girsanov_energy", "closed_form", "gaussian_kl", "rel_gap_closed", "rel_gap_gaussian"], \
        rows, {"max_rel_gap": worst}


def _regime_schedule(name: str, T: float, c0: float, A: float = 0.0, h: float = 0.0) -> ShiftSchedule:
    r = REGIMES[name]
    return ShiftSchedule.for_regime(r["alpha"], r["beta"], r["gamma"], T, c0=c0, A=A, h=h)


def c04(p, seed):
    rows, worst, violations = [], math.inf, 0
    for name, r in REGIMES.items():
        sched = _regime_schedule(name, p["T"], p["c0"])
        t = np.linspace(0.0, p["T"], p["grid"] + 1)[:-1]
        rep = lambda_min_certify(sched, t, lambda_grid(r["alpha"], r["beta"], p["n_lambda"]), raise_on_fail=False)
        slack = (rep.rows[:, 2] - rep.rows[:, 3]) / rep.rows[:, 3]
        violations += int(np.sum(slack < 0))
        worst = min(worst, rep.worst_slack)
        rows += [[name, *row, s] for row, s in zip(rep.rows.tolist(), slack)]
    return violations == 0, f"{violations} violations; worst relative slack {worst:.3f}", \
        ["regime", "t", "worst_lambda", "lambda_min", "floor", "relative_slack"], rows, \
        {"violations": violations, "worst_slack": worst}


def c05(p, seed):
    rows, worst = [], 0.0
    x0, p0 = np.array([1.0, -0.5, 0.25]), np.array([0.3, 0.2, -0.1])
    zero = np.zeros(3)
    for name, r in REGIMES.items():
        pot = make_quadratic(np.diag(r["spectrum"]), allow_indefinite=True)
        for T in p["horizons"]:
            sched = _regime_schedule(name, T, p["c0"])
            traj = evolve_coupled(pot, sched, PhaseState(x0, p0), PhaseState(zero, zero), dt=1e-3 * T,
                                  T_stop=T * (1 - p["stop_fraction"]), rel_step=p["rel_step"])
            env = traj.twisted_dist[0] * np.exp(-traj.envelope_integral / 48)
            ratio = np.divide(traj.twisted_dist, env, out=np.zeros_like(env), where=env > 0)
            worst = max(worst, float(ratio.max()))
            idx = np.unique(np.r_[np.arange(0, traj.t.size, p["record_stride"]), traj.t.size - 1])
            rows += [[name, T, traj.t[i], traj.twisted_dist[i], env[i], ratio[i]] for i in idx]
    limit = 1 + p["slack"]
    return worst <= limit, f"max distance/envelope = {worst:.6f} (limit {limit})", \
        ["regime", "T", "t", "twisted_dist", "envelope", "ratio"], rows, {"max_ratio": worst}


def c06(p, seed):
    rows, c_min, rk_gap = [], math.inf, 0.0
    for name, r in REGIMES.items():
        g, b = r["gamma"], r["beta"]
        lam = lambda_grid(r["alpha"], b, p["n_lambda"])
        for T in p["horizons"]:
            for frac in p["h_fractions"]:
                h = frac * min(1 / g, g / b)
                h = T / math.ceil(T / h)
                sched = _regime_schedule(name, T, p["c0"], A=p["A_factor"] * p["c0"], h=h)
                fit = fit_window_contraction(sched, lam)
                c_min = min(c_min, fit.c_min)
                worst = int(np.argmin(fit.c))
                rows.append([name, T, h, fit.c.size, fit.c_min, fit.t_minus[worst], float(fit.factor[worst]),
                             float(np.median(fit.c))])
                pot = make_quadratic(np.diag(r["spectrum"]), allow_indefinite=True)
                for w in np.linspace(0, fit.c.size - 1, p["rk4_windows"]).astype(int):
                    rk_gap = max(rk_gap, _rk4_window_gap(pot, sched, float(fit.t_minus[w]), np.array(r["spectrum"])))
    ok = c_min >= p["c_min"] and rk_gap < 1e-6
    return ok, f"fitted c_min = {c_min:.4f} (need >= {p['c_min']:.4f}); RK4 vs exact window gap {rk_gap:.1e}", \
        ["regime", "T", "h", "windows", "c_min", "worst_t_minus", "worst_factor", "median_c"], rows, \
        {"c_min": c_min, "rk4_gap": rk_gap}


def _rk4_window_gap(pot, sched: ShiftSchedule, t_minus: float, spectrum: np.ndarray) -> float:
    """Relative gap between the co-integrated window and the exact per-eigenvalue map."""
    d = spectrum.size
    dx, dp = np.linspace(1.0, 0.5, d), np.linspace(-0.3, 0.4, d)
    x0, p0 = np.full(d, 0.2), np.full(d, -0.1)
    pair = CoupledPair(PhaseState(x0 + dx, p0 + dp), PhaseState(x0, p0))
    new, _ = diffuse_then_shift_step(pot, sched, pair, t_minus)
    maps = window_map(sched, t_minus, spectrum)
    g0 = float(sched.gamma_t(t_minus))
    twisted_in = np.stack([dx, dx + 2 * dp / g0], axis=1)
    expect = np.einsum("kij,kj->ki", maps, twisted_in)
    ddx, ddp = new.main.x - new.aux.x, new.main.p - new.aux.p
    g1 = float(sched.gamma_t(t_minus + sched.h))
    got = np.stack([ddx, ddx + 2 * ddp / g1], axis=1)
    return float(np.linalg.norm(got - expect) / np.linalg.norm(expect))


# ---------------------------------------------------------------- 7-11: kernels and orders

def c07(p, seed):
    gen = rngmod.stream(seed, "c07")
    rows, worst_stat, worst_semi = [], 0.0, 0.0
    t1, t2 = p["split"]
    for d in p["dims"]:
        d = int(d)
        Qm, _ = np.linalg.qr(gen.standard_normal((d, d)))
        H = Qm @ np.diag(np.exp(gen.uniform(np.log(0.1), np.log(10.0), d))) @ Qm.T
        H = (H + H.T) / 2
        C = stationary_moments(H).cov
        for g in p["gammas"]:
            for t in p["times"]:
                Phi, Q = gaussian_transition(H, g, t)
                stat = np.abs(Phi @ C @ Phi.T + Q - C).max() / np.abs(C).max()
                P1, Q1 = gaussian_transition(H, g, t1 * t)
                P2, Q2 = gaussian_transition(H, g, t2 * t)
                semi_phi = np.linalg.norm(P2 @ P1 - Phi) / np.linalg.norm(Phi)
                semi_q = np.linalg.norm(P2 @ Q1 @ P2.T + Q2 - Q) / np.linalg.norm(Q)
                worst_stat = max(worst_stat, stat)
                worst_semi = max(worst_semi, semi_phi, semi_q)
                rows.append([d, g, t, stat, semi_phi, semi_q])
    ok = worst_stat <= p["stat_tol"] and worst_semi <= p["semigroup_tol"]
    return ok, f"stationarity error {worst_stat:.1e} (limit {p['stat_tol']:.0e}), semigroup error {worst_semi:.1e} " \
               f"(limit {p['semigroup_tol']:.0e})", ["dim", "gamma", "t", "stationarity_err", "semigroup_phi_err",
                                                   "semigroup_cov_err"], rows, \
        {"stationarity": worst_stat, "semigroup": worst_semi}


def _in(v: float, rng_: list[float]) -> bool:
    return rng_[0] <= v <= rng_[1]


def _order_run(p, seed, kernel: str, weak: bool):
    pot = make_gaussian(p["spectrum"])
    hs = [hh / math.sqrt(pot.beta) for hh in p["h"]]
    rows, strong, weak_est = [], [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StepSizeWarning)
        for i, h in enumerate(hs):
            s = strong_error(kernel, pot, None, p["gamma"], h, p["kref"], p["paths"], rngmod.stream(seed, f"{kernel}-strong", i))
            strong.append(s)
            row = [h, s.pos, s.mom, s.pos_se, s.mom_se]
            if weak:
                w = weak_error(kernel, pot, None, p["gamma"], h, p["kref"], p["paths"], p["resample"],
                               rngmod.stream(seed, f"{kernel}-weak", i))
                weak_est.append(w)
                row += [w.pos, w.mom, w.pos_se, w.mom_se]
            rows.append(row)
    fits = {"pos_strong": fit_exponent(hs, [s.pos for s in strong]),
            "mom_strong": fit_exponent(hs, [s.mom for s in strong])}
    if weak:
        fits["mom_weak"] = fit_exponent(hs, [w.mom for w in weak_est])
    return rows, fits


def c08(p, seed):
    rows, fits = _order_run(p, seed, "ulmc", weak=False)
    mom, pos = fits["mom_strong"].exponent, fits["pos_strong"].exponent
    ok = _in(mom, p["mom_range"]) and _in(pos, p["pos_range"])
    return ok, f"momentum strong exponent {mom:.3f} in {p['mom_range']}, position {pos:.3f} in {p['pos_range']}", \
        ["h", "pos_strong", "mom_strong", "pos_strong_se", "mom_strong_se"], rows, \
        {"mom_strong_exponent": mom, "pos_strong_exponent": pos}


def c09(p, seed):
    rows, fits = _order_run(p, seed, "rm-ulmc", weak=True)
    wk, mom, pos = fits["mom_weak"].exponent, fits["mom_strong"].exponent, fits["pos_strong"].exponent
    ok = _in(wk, p["weak_range"]) and _in(mom, p["mom_range"]) and _in(pos, p["pos_range"])
    return ok, f"momentum weak exponent {wk:.3f}, momentum strong {mom:.3f}, position strong {pos:.3f}", \
        ["h", "pos_strong", "mom_strong", "pos_strong_se", "mom_strong_se", "pos_weak", "mom_weak", "pos_weak_se",
         "mom_weak_se"], rows, {"mom_weak_exponent": wk, "mom_strong_exponent": mom, "pos_strong_exponent": pos}


def c10(p, seed):
    H = np.diag(p["spectrum"])
    plateaus = [ulmc_kl_plateau(H, p["gamma"], h) for h in p["h"]]
    ratios = [a / b for a, b in zip(plateaus, plateaus[1:])]
    rows = [[h, pl, (ratios[i] if i < len(ratios) else float("nan"))] for i, (h, pl) in enumerate(zip(p["h"], plateaus))]
    ok = all(_in(r, p["ratio_range"]) for r in ratios)
    return ok, "plateau ratios " + ", ".join(f"{r:.3f}" for r in ratios) + f" (range {p['ratio_range']})", \
        ["h", "kl_plateau", "ratio_to_next"], rows, {"ratios": ratios}


def c11(p, seed):
    pot = make_gaussian(p["spectrum"])
    target = stationary_moments(pot.hessian_matrix)
    out, rows = {}, []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StepSizeWarning)
        for kernel, h in (("ulmc", p["h"]), ("rm-ulmc", 3 * p["h"])):
            n_steps = int(round(p["T"] / h))
            cfg = ChainConfig(gamma=p["gamma"], h=h, n_steps=n_steps, seed=seed, kernel=kernel,
                              n_replicas=p["replicas"], record_every=n_steps)
            res = run_chain(pot, target, cfg)
            proxy = empirical_w2_gaussian_proxy(res.final.stacked(), target, n_boot=p["n_boot"],
                                                rng=rngmod.stream(seed, f"c11-boot-{kernel}"))
            grads = float(res.grad_evals[-1, 0])
            out[kernel] = proxy
            rows.append([kernel, h, n_steps, grads, proxy.value, proxy.ci_low, proxy.ci_high])
    ok = out["rm-ulmc"].ci_high < out["ulmc"].ci_low
    return ok, f"RM-ULMC W2 proxy {out['rm-ulmc'].value:.4f} [{out['rm-ulmc'].ci_low:.4f}, {out['rm-ulmc'].ci_high:.4f}] " \
               f"vs ULMC {out['ulmc'].value:.4f} [{out['ulmc'].ci_low:.4f}, {out['ulmc'].ci_high:.4f}]", \
        ["kernel", "h", "steps", "grad_evals", "w2_proxy", "ci_low", "ci_high"], rows, \
        {k: v.value for k, v in out.items()}


# ---------------------------------------------------------------- 12, 13

def c12(p, seed):
    c = DEFAULT_PROFILE.harnack_rate
    rows, worst_ratio, worst_slope = [], 1.0, 0.0
    ok = True
    for a, b, g in zip(p["alphas"], p["betas"], p["gammas"]):
        w = RegimeParams(a, b, g).omega
        for frac in p["small_T"]:
            T = frac / abs(w)
            C = harnack_C(RegimeParams(a, b, g, T=T))
            ratio = C / (1 / (g * T**3) + g / T)
            ok &= _in(ratio, p["ratio_range"])
            worst_ratio = max(worst_ratio, ratio, 1 / ratio)
            rows.append([a, b, g, "small_T_ratio", T, ratio])
        if a > 0:
            Ts = np.linspace(5 / w, 50 / w, int(p["fit_points"]))
            logC = np.log([harnack_C(RegimeParams(a, b, g, T=T)) for T in Ts])
            slope = np.polyfit(Ts, logC, 1)[0]
            rel = slope / (-c * w) - 1
            ok &= abs(rel) <= p["slope_tol"]
            worst_slope = max(worst_slope, abs(rel))
            rows.append([a, b, g, "slope_over_minus_c_omega", float("nan"), slope / (-c * w)])
    return ok, f"worst small-T ratio factor {worst_ratio:.3g} (need <= 2), worst slope deviation {worst_slope:.1%} " \
               f"(need <= {p['slope_tol']:.0%})", ["alpha", "beta", "gamma", "check", "T", "value"], rows, \
        {"worst_ratio_factor": worst_ratio, "worst_slope_dev": worst_slope}


def c13(p, seed):
    rows, ok, worst = [], True, 1.0
    for i, x in enumerate(p["gamma_h"]):
        gamma, h = 1.0, x
        for which, sampler, cdf in (("u", sample_midpoint_u, u_cdf), ("v", sample_midpoint_v, v_cdf)):
            draws = sampler(gamma, h, rngmod.stream(seed, f"c13-{which}", i), size=p["draws"])
            res = stats.kstest(draws, lambda q: cdf(gamma, h, q))
            ok &= res.pvalue > p["alpha"]
            worst = min(worst, res.pvalue)
            rows.append([which, x, res.statistic, res.pvalue])
    return ok, f"smallest KS p-value {worst:.3f} (need > {p['alpha']})", ["variable", "gamma_h", "ks_statistic",
                                                                          "p_value"], rows, {"min_p": worst}


CRITERIA: dict[int, Callable] = {1: c01, 2: c02, 3: c03, 4: c04, 5: c05, 6: c06, 7: c07, 8: c08, 9: c09,
                                 10: c10, 11: c11, 12: c12, 13: c13}


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _determinism(out_dir: Path, seed: int, numbers: list[int], params_path, p) -> CriterionResult:
    """Rerun the other selected criteria in a subprocess with another thread count and compare bytes."""
    threads_here = rngmod.thread_count()
    other = 4 if threads_here == 1 else 1
    env = dict(os.environ)
    env.update({rngmod.THREADS_ENV: str(other), "OMP_NUM_THREADS": str(other), "OPENBLAS_NUM_THREADS": str(other),
                "MKL_NUM_THREADS": str(other)})
    env.pop("KINLMC_OUT_DIR", None)
    with tempfile.TemporaryDirectory() as tmp:
        cmd = [sys.executable, "-m", "kinlmc", "accept", "--suite", "primary", "--seed", str(seed), "--out", tmp,
               "--only", ",".join(str(n) for n in numbers)]
        if params_path is not None:
            cmd += ["--config", str(params_path)]
        proc = subprocess.run(cmd, env=env, capture_output=True, text=True, timeout=p["timeout"])
        rows, same = [], True
        for n in numbers:
            name = f"c{n:02d}_{NAMES[n]}.csv"
            a, b = out_dir / name, Path(tmp) / name
            eq = a.is_file() and b.is_file() and a.read_bytes() == b.read_bytes()
            same &= eq
            rows.append([name, threads_here, other, _sha(a) if a.is_file() else "missing",
                         _sha(b) if b.is_file() else "missing", eq])
    detail = f"{sum(r[-1] for r in rows)}/{len(rows)} CSV files byte-identical across {threads_here} and {other} threads"
    if proc.returncode not in (0, 1):
        same = False
        detail += f"; rerun exited with {proc.returncode}: {proc.stderr.strip()[-300:]}"
    return CriterionResult(14, NAMES[14], same, detail, ["file", "threads_a", "threads_b", "sha256_a", "sha256_b",
                                                         "identical"], rows)


def run_criterion(number: int, seed: int, params: dict[str, dict[str, Any]]) -> CriterionResult:
    key = f"c{number:02d}"
    p = params[key]
    t0 = time.perf_counter()
    passed, detail, columns, rows, metrics = CRITERIA[number](p, seed)
    runtime = time.perf_counter() - t0
    budget = p.get("budget")
    if budget is not None and runtime > budget:
        passed = False
        detail += f"; runtime {runtime:.1f}s exceeds {budget:.0f}s"
    return CriterionResult(number, NAMES[number], bool(passed), detail, columns, rows, metrics, runtime, budget)


def parse_selection(only: str | None) -> list[int]:
    if not only:
        return sorted(NAMES)
    try:
        picked = sorted({int(v) for v in only.replace(" ", "").split(",") if v})
    except ValueError:
        raise ConfigError(f"bad criterion list {only!r}") from None
    bad = [n for n in picked if n not in NAMES]
    if bad:
        raise ConfigError(f"unknown criteria {bad}")
    return picked


def run_suite(out_dir: str | os.PathLike, seed: int | None = None, only: list[int] | None = None,
              params_path: str | os.PathLike | None = None, echo: Callable[[str], None] | None = None
              ) -> list[CriterionResult]:
    """Run the selected criteria, writing one CSV each plus ``summary.json``."""
    file_seed, params = load_parameters(params_path)
    seed = file_seed if seed is None else int(seed)
    numbers = sorted(NAMES) if only is None else list(only)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for n in numbers:
        if n == 14:
            continue
        res = run_criterion(n, seed, params)
        write_csv(out / res.filename, res.columns, res.rows, config_hash({"criterion": n, **params[f"c{n:02d}"]}), seed)
        results.append(res)
        if echo:
            echo(res.line())
    if 14 in numbers:
        others = [n for n in numbers if n != 14]
        t0 = time.perf_counter()
        res = _determinism(out, seed, others, params_path, params["c14"])
        res.runtime = time.perf_counter() - t0
        write_csv(out / res.filename, res.columns, res.rows, config_hash({"criterion": 14, **params["c14"]}), seed)
        results.append(res)
        if echo:
            echo(res.line())
    summary = {"seed": seed, "passed": all(r.passed for r in results),
               "criteria": {str(r.number): {"name": r.name, "passed": r.passed, "detail": r.detail,
                                            "runtime_s": round(r.runtime, 3), "budget_s": r.budget,
                                            "metrics": r.metrics} for r in results}}
    write_json(out / "summary.json", summary)
    return results
