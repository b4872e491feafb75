"""Command-line entry point: ``sunreg {fit,sample,approx,simulate,bench}``."""

import csv
import json
import os
import sys

import click
import numpy as np

from . import model_builders as mb
from .approximations import ep, ep_scalable, mf_vb, pfm_vb
from .bench import BenchConfig, run_bench, run_scaling, simulate
from .conjugate import log_marginal_likelihood, update
from .samplers import gibbs, iid
from .sun_core import SunParams

_BUILDERS = {
    "linear": mb.build_linear,
    "probit": mb.build_probit,
    "probit_threshold": mb.build_probit_threshold,
    "multivariate_probit": mb.build_multivariate_probit,
    "multinomial_probit": mb.build_multinomial_probit,
    "tobit": mb.build_tobit,
    "sn_linear": mb.build_sn_linear,
    "sn_probit": mb.build_sn_probit,
    "sn_tobit": mb.build_sn_tobit,
}


def _read_csv(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, encoding="utf-8")


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def load_model(spec_path):
    """Read a model spec: {model, params, data: {x_csv, y_csv}, prior?}."""
    with open(spec_path, encoding="utf-8") as fh:
        spec = json.load(fh)
    base = os.path.dirname(os.path.abspath(spec_path))
    kind = spec["model"]
    if kind not in _BUILDERS:
        raise click.BadParameter(f"unknown model {kind!r}; choose from {sorted(_BUILDERS)}")
    X = _read_csv(os.path.join(base, spec["data"]["x_csv"]))
    y = _read_csv(os.path.join(base, spec["data"]["y_csv"]))
    if y.shape[1] == 1:
        y = y[:, 0]
    lik = _BUILDERS[kind](mb.Dataset(X, y), **spec.get("params", {}))
    prior_spec = spec.get("prior", {"variance": 25.0})
    if "xi" in prior_spec:
        prior = SunParams.from_dict(prior_spec)
    else:
        prior = SunParams(np.zeros(lik.p), float(prior_spec["variance"]) * np.eye(lik.p))
    return prior, lik


def _dump(obj, out):
    text = json.dumps(obj, indent=2)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        click.echo(text)


@click.group()
def main():
    """Exact and approximate Bayesian inference for probit, tobit and related models."""


@main.command()
@click.option("--model-spec", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None)
@click.option("--evidence/--no-evidence", default=True, help="also report log p(y)")
def fit(model_spec, out, evidence):
    """Exact posterior parameters."""
    prior, lik = load_model(model_spec)
    bundle = update(prior, lik)
    doc = bundle.to_dict()
    if evidence:
        doc["log_marginal_likelihood"] = log_marginal_likelihood(prior, lik)
    _dump(doc, out)


@main.command()
@click.option("--model-spec", required=True, type=click.Path(exists=True))
@click.option("--method", type=click.Choice(["gibbs", "iid"]), default="iid")
@click.option("--n", "n_draws", type=int, default=1000)
@click.option("--burn-in", type=int, default=500)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
def sample(model_spec, method, n_draws, burn_in, seed, out):
    """Posterior draws, one per row."""
    prior, lik = load_model(model_spec)
    bundle = update(prior, lik)
    if method == "gibbs":
        res = gibbs(bundle, n_draws, burn_in, seed)
    else:
        res = iid(bundle, n_draws, seed)
    _write_csv(out, [f"β_{j + 1}" for j in range(bundle.p)], res.draws.tolist())
    click.echo(json.dumps({"method": res.method, **{k: v for k, v in res.meta.items()
                                                     if isinstance(v, (str, int, float))}}))


@main.command()
@click.option("--model-spec", required=True, type=click.Path(exists=True))
@click.option("--method", type=click.Choice(["mf", "pfm", "ep"]), default="ep")
@click.option("--tol", type=float, default=1e-6)
@click.option("--max-iter", type=int, default=1000)
@click.option("--damping", type=float, default=1.0)
@click.option("--out", type=click.Path(), default=None)
def approx(model_spec, method, tol, max_iter, damping, out):
    """Deterministic approximation of the posterior."""
    prior, lik = load_model(model_spec)
    if method == "ep":
        n_sites = lik.n0 + prior.nbar
        fit_ep = ep_scalable if prior.p > n_sites else ep
        st = fit_ep(prior, lik, tol, max_iter, damping)
        doc = {"mean": st.mean.tolist(), "cov_diag": np.diag(st.cov).tolist(),
               "log_evidence": st.log_evidence, "n_iter": st.n_iter, "converged": st.converged}
    else:
        bundle = update(prior, lik)
        st = (mf_vb if method == "mf" else pfm_vb)(bundle, tol, max_iter)
        doc = {"mean": st.beta_mean.tolist(), "cov_diag": np.diag(st.beta_cov).tolist(),
               "elbo": st.elbo, "n_iter": st.n_iter, "converged": st.converged}
    _dump(doc, out)


@main.command(name="simulate")
@click.option("--kappa", type=float, default=0.5)
@click.option("--p", type=int, default=10)
@click.option("--n", type=int, default=200)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
def simulate_cmd(kappa, p, n, seed, out):
    """Simulated tobit data: x.csv, y.csv (censored at 0) and truth.json."""
    cfg = BenchConfig(n=n, kappa_list=(kappa,), p_list=(p,))
    sim = simulate(cfg, kappa, p, seed)
    os.makedirs(out, exist_ok=True)
    _write_csv(os.path.join(out, "x.csv"), [f"x_{j + 1}" for j in range(p)], sim.X.tolist())
    ys = sim.shifted().y
    _write_csv(os.path.join(out, "y.csv"), ["y"], [[v] for v in ys])
    with open(os.path.join(out, "truth.json"), "w", encoding="utf-8") as fh:
        json.dump({"beta": sim.beta.tolist(), "z_t": sim.z_t,
                   "n_censored": int(sim.censored.sum())}, fh, indent=2)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), required=True)
@click.option("--p-list", default=None, help="comma-separated predictor counts, e.g. 10,50,1200")
@click.option("--scaling/--no-scaling", default=True)
def bench(config_path, out, p_list, scaling):
    """Accuracy and iteration benchmark on simulated tobit data."""
    cfg = BenchConfig.from_json(config_path) if config_path else BenchConfig()
    if p_list:
        cfg = BenchConfig(**{**vars(cfg), "p_list": tuple(int(v) for v in p_list.split(","))})
    os.makedirs(out, exist_ok=True)
    rows = run_bench(cfg, out)
    if scaling:
        run_scaling(cfg, out_path=os.path.join(out, "scaling.csv"))
    failed = [r for r in rows if r.status.startswith("error")]
    for r in failed:
        click.echo(f"cell kappa={r.kappa} p={r.p} {r.method}: {r.status}", err=True)
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
