"""Tobit simulation study: accuracy of MF-VB, PFM-VB and EP against i.i.d. Monte Carlo."""

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import log_ndtr, ndtr

from ._linalg import chol
from .approximations import ep, ep_scalable, mf_vb, pfm_vb, time_sweeps
from .conjugate import update
from .model_builders import Dataset, build_tobit
from .mvn_kernel import trandn
from .samplers import iid
from .sun_core import SunParams

FUNCTIONALS = ("post_mean", "post_var", "pred_response", "pred_censor")
METHODS = ("mf", "pfm", "ep")


@dataclass
class BenchConfig:
    n: int = 200
    kappa_list: tuple = (0.15, 0.50, 0.85)
    p_list: tuple = (10, 20, 50, 100, 200, 400, 800)
    n_mc: int = 5000
    n_test: int = 200
    seed: int = 2023
    tol: float = 1e-6
    max_iter: int = 1000
    n_pfm_draws: int = 20000
    workers: int = 1

    def __post_init__(self):
        if not all(0 < k < 1 for k in self.kappa_list):
            raise ValueError("censoring proportions must lie in (0, 1)")
        if self.n < 2 or any(p < 1 for p in self.p_list):
            raise ValueError("need n >= 2 and p >= 1")
        self.kappa_list = tuple(float(k) for k in self.kappa_list)
        self.p_list = tuple(int(p) for p in self.p_list)

    @staticmethod
    def prior_var(p):
        # 25 at p = 10, shrinking as 1/p
        return 25.0 * 10.0 / p

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))


@dataclass
class BenchRow:
    kappa: float
    p: int
    method: str
    functional: str
    q1: float
    median: float
    q3: float
    n_iter: int
    wall_time_s: float
    status: str = "ok"


@dataclass
class SimData:
    X: np.ndarray
    y: np.ndarray               # z * 1(z > z_t); censored rows hold 0
    censored: np.ndarray
    z_t: float
    beta: np.ndarray
    X_test: np.ndarray = field(repr=False, default=None)

    def shifted(self):
        """Tobit data censored at 0: the threshold moves into the intercept."""
        return Dataset(self.X, np.where(self.censored, 0.0, self.y - self.z_t))


def _standardize(Z, mean, sd):
    return 0.5 * (Z - mean) / sd


def simulate(config, kappa, p, rng, n_test=None):
    """Tobit data with exactly round(kappa * n) censored units."""
    rng = np.random.default_rng(rng)
    n = config.n
    n_test = config.n_test if n_test is None else n_test
    raw = rng.standard_normal((n, p - 1))
    X = np.hstack([np.ones((n, 1)), raw])
    beta = rng.uniform(-5, 5, p)
    z = X @ beta + rng.standard_normal(n)
    n_cens = int(round(kappa * n))
    zs = np.sort(z)
    if n_cens == 0:
        z_t = zs[0] - 1.0
    elif n_cens == n:
        z_t = zs[-1] + 1.0
    else:
        z_t = 0.5 * (zs[n_cens - 1] + zs[n_cens])
    censored = z <= z_t
    y = np.where(censored, 0.0, z)
    mean, sd = raw.mean(axis=0), raw.std(axis=0, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    Xs = np.hstack([np.ones((n, 1)), _standardize(raw, mean, sd)])
    raw_test = rng.standard_normal((n_test, p - 1))
    X_test = np.hstack([np.ones((n_test, 1)), _standardize(raw_test, mean, sd)])
    return SimData(Xs, y, censored, float(z_t), beta, X_test)


def _gauss_functionals(X_test, mean, cov):
    mu = X_test @ mean
    v = np.einsum("ij,jk,ik->i", X_test, cov, X_test)
    s = np.sqrt(1.0 + v)
    censor = ndtr(-mu / s)
    phi = np.exp(-0.5 * (mu / s) ** 2) / math.sqrt(2 * math.pi)
    response = mu * ndtr(mu / s) + v * phi / s
    return response, censor


def _draw_functionals(eta):
    """eta: n_test x n_draws linear predictors."""
    return (eta * ndtr(eta)).mean(axis=1), np.exp(log_ndtr(-eta)).mean(axis=1)


def _pfm_functionals(bundle, state, X_test, n_draws, rng):
    # eta = X_test beta with beta = xi + A (z - gamma) + N(0, V); never forms the draws of beta
    gamma = bundle.posterior.gamma
    z = np.empty((n_draws, bundle.n_latent))
    for sl, loc, cov in zip(bundle.blocks(), state.z_locs, state.z_scales):
        if sl.stop - sl.start != 1:
            raise ValueError("PFM functionals are implemented for univariate blocks")
        sd = math.sqrt(cov[0, 0])
        z[:, sl.start] = loc[0] + sd * trandn(np.full(n_draws, -loc[0] / sd),
                                              np.full(n_draws, np.inf), rng)
    XA = X_test @ bundle.A_post
    L, _ = chol(X_test @ bundle.V_post @ X_test.T)
    eta = (X_test @ bundle.posterior.xi)[:, None] + XA @ (z - gamma).T
    eta += L @ rng.standard_normal((X_test.shape[0], n_draws))
    return _draw_functionals(eta)


def _quartiles(x):
    q1, med, q3 = np.percentile(np.abs(x), [25, 50, 75])
    return float(q1), float(med), float(q3)


def run_cell(config, kappa, p, seed):
    """All rows for one (kappa, p) cell; failures become status rows."""
    rng = np.random.default_rng(seed)
    sim = simulate(config, kappa, p, rng)
    lik = build_tobit(sim.shifted(), 1.0)
    prior = SunParams(np.zeros(p), BenchConfig.prior_var(p) * np.eye(p))
    rows = []
    t0 = time.perf_counter()
    bundle = update(prior, lik)
    ref = iid(bundle, config.n_mc, rng)
    t_ref = time.perf_counter() - t0
    draws = ref.draws
    ref_mean, ref_var = draws.mean(axis=0), draws.var(axis=0, ddof=1)
    ref_resp, ref_cens = _draw_functionals(sim.X_test @ draws.T)
    floor = np.sqrt(ref_var / config.n_mc)
    rows.append(BenchRow(kappa, p, "mc_noise", "post_mean", *_quartiles(floor), 0, t_ref,
                         f"ok:{ref.meta.get('method', 'gaussian')}"))
    refs = {"post_mean": ref_mean, "post_var": ref_var, "pred_response": ref_resp,
            "pred_censor": ref_cens}
    N = bundle.n_latent
    for method in METHODS:
        try:
            t0 = time.perf_counter()
            if method == "mf":
                st = mf_vb(bundle, config.tol, config.max_iter)
                mean, cov = st.beta_mean, st.beta_cov
            elif method == "pfm":
                st = pfm_vb(bundle, config.tol, config.max_iter)
                mean, cov = st.beta_mean, st.beta_cov
            else:
                fit = ep_scalable if p > N else ep
                st = fit(prior, lik, config.tol, config.max_iter)
                mean, cov = st.mean, st.cov
            wall = time.perf_counter() - t0
            if method == "pfm":
                resp, cens = _pfm_functionals(bundle, st, sim.X_test, config.n_pfm_draws, rng)
            else:
                resp, cens = _gauss_functionals(sim.X_test, mean, cov)
            est = {"post_mean": mean, "post_var": np.diag(cov), "pred_response": resp,
                   "pred_censor": cens}
            status = "ok" if st.converged else "max_iter"
            for f in FUNCTIONALS:
                rows.append(BenchRow(kappa, p, method, f, *_quartiles(est[f] - refs[f]),
                                     st.n_iter, wall / max(st.n_iter, 1), status))
        except Exception as exc:  # a failed cell must not stop the run
            for f in FUNCTIONALS:
                rows.append(BenchRow(kappa, p, method, f, math.nan, math.nan, math.nan, 0,
                                     math.nan, f"error:{type(exc).__name__}"))
    return rows


def _cell_seeds(config):
    cells = [(k, p) for k in config.kappa_list for p in config.p_list]
    seeds = np.random.SeedSequence(config.seed).spawn(len(cells))
    return [(k, p, s) for (k, p), s in zip(cells, seeds)]


def run_bench(config, out_dir=None):
    jobs = _cell_seeds(config)
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            futures = [pool.submit(run_cell, config, k, p, s) for k, p, s in jobs]
            results = [f.result() for f in futures]
    else:
        results = [run_cell(config, k, p, s) for k, p, s in jobs]
    rows = sorted((r for rs in results for r in rs),
                  key=lambda r: (r.kappa, r.p, r.method, r.functional))
    if out_dir is not None:
        write_rows(rows, os.path.join(out_dir, "bench.csv"))
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summarize(rows), fh, indent=2)
    return rows


def summarize(rows):
    out = {}
    for r in rows:
        key = f"kappa={r.kappa:g},p={r.p}"
        out.setdefault(key, {})[f"{r.method}/{r.functional}"] = {
            "median": r.median, "n_iter": r.n_iter, "status": r.status}
    return out


def write_rows(rows, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(asdict(rows[0])))
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))


def run_scaling(config, methods=("mf", "pfm", "ep"), kappa=0.5, repeats=5, out_path=None):
    """Per-sweep wall time for each p; medians over ``repeats`` measurements."""
    rows = []
    for j, p in enumerate(config.p_list):
        sim = simulate(config, kappa, p, np.random.default_rng([config.seed, j]))
        lik = build_tobit(sim.shifted(), 1.0)
        prior = SunParams(np.zeros(p), BenchConfig.prior_var(p) * np.eye(p))
        bundle = update(prior, lik)
        for m in methods:
            times = [time_sweeps(m, bundle) for _ in range(repeats)]
            rows.append({"p": p, "method": m, "per_iter_time": float(np.median(times))})
    if out_path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
        with open(out_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["p", "method", "per_iter_time"])
            w.writeheader()
            w.writerows(rows)
    return rows
