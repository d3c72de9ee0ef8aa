"""Studies run by the command line: each takes an :class:`ExperimentConfig`
and returns plain rows and summaries, leaving file output to the caller.

Every replica or task draws from its own stream keyed by
``(seed, purpose, index)``, and results are collected by index, so the
thread count never changes the output.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from heavybrw.branching import PopulationCapExceeded
from heavybrw.config import ExperimentConfig
from heavybrw.limit import (LimitParams, build_limit_params, kappa_lambda, laplace_functional_limit,
                            limit_max_cdf, sample_limit_batch)
from heavybrw.pointproc import HatFunction, counts_in, ks_two_sample, ks_vs_cdf
from heavybrw.rng import stream
from heavybrw.simulator import SimulationSetup, estimate_W, one_jump_events, run_replica
from heavybrw.trees import cut_forest, grow_tree, prune_forest, tilde_measure


def parallel_map(fn: Callable[[int], object], n_tasks: int, threads: int = 1) -> list:
    """``[fn(0), ..., fn(n_tasks - 1)]``, computed on up to ``threads`` threads."""
    if threads <= 1 or n_tasks <= 1:
        return [fn(i) for i in range(n_tasks)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_tasks)))


def make_setup(cfg: ExperimentConfig) -> SimulationSetup:
    r = cfg.run
    return SimulationSetup(cfg.bmodel, cfg.dmodel, eta=r.eta, theta=r.theta,
                           population_cap=r.population_cap, backend=r.backend)


def w_source(cfg: ExperimentConfig) -> np.ndarray | None:
    """Exact ``W`` for deterministic offspring from a fixed root type, else
    samples from plain trees. ``None`` means ``W = 1``."""
    bm = cfg.bmodel
    pi = bm.root_distribution
    if all(len(p) == 1 for p in bm.offspring.probs) and pi.max() == 1.0:
        # |D_n| / rho^n -> theta_root exactly
        theta = float(bm.spectral().theta[int(np.argmax(pi))])
        return None if abs(theta - 1.0) < 1e-12 else np.array([theta])
    r = cfg.run
    # count-level simulation holds no particles, so the population cap does not apply
    return estimate_W(bm, r.w_depth, r.w_samples, stream(cfg.seed, "W"), population_cap=None)


def limit_params(cfg: ExperimentConfig, w=None) -> LimitParams:
    return build_limit_params(cfg.bmodel, cfg.dmodel.heavy, w_source(cfg) if w is None else w)


@dataclass
class ReplicaBatch:
    rows: list[dict]
    results: list          # ReplicaResult or None for aborted replicas
    aborted: int

    @property
    def abort_fraction(self) -> float:
        return self.aborted / max(1, len(self.rows))

    def completed(self) -> list:
        return [r for r in self.results if r is not None]


def simulate(cfg: ExperimentConfig, threads: int = 1, n: int | None = None,
             replicas: int | None = None, purpose: str = "replica") -> ReplicaBatch:
    setup = make_setup(cfg)
    n = cfg.run.n if n is None else n
    reps = cfg.run.replicas if replicas is None else replicas
    Q = cfg.bmodel.Q

    def task(i):
        try:
            return run_replica(setup, n, stream(cfg.seed, purpose, n, i))
        except PopulationCapExceeded:
            return None

    results = parallel_map(task, reps, threads)
    rows = []
    for i, res in enumerate(results):
        row = {"replica": i, "n": n}
        if res is None:
            row.update(M_n_over_bn="", W_hat="", total="")
            row.update({f"flag_{p + 1}": "" for p in range(Q)})
            row["aborted"] = 1
        else:
            flags = one_jump_events(res)
            row.update(M_n_over_bn=repr(float(res.max_scaled)), W_hat=repr(float(res.w_hat)),
                       total=res.total)
            row.update({f"flag_{p + 1}": int(flags[p]) for p in range(Q)})
            row["aborted"] = 0
        rows.append(row)
    return ReplicaBatch(rows, results, sum(r is None for r in results))


def simulate_summary(cfg: ExperimentConfig, batch: ReplicaBatch) -> dict:
    done = batch.completed()
    out = {"replicas": len(batch.rows), "aborted": batch.aborted,
           "abort_fraction": batch.abort_fraction}
    if done:
        mx = np.array([r.max_scaled for r in done])
        w = np.array([r.w_hat for r in done])
        flags = np.array([one_jump_events(r) for r in done])
        out.update(mean_max_scaled=float(mx.mean()), median_max_scaled=float(np.median(mx)),
                   mean_W_hat=float(w.mean()), se_W_hat=float(w.std(ddof=1) / math.sqrt(w.size)) if w.size > 1 else 0.0,
                   flag_rates=flags.mean(axis=0).tolist())
    return out


def limit_study(cfg: ExperimentConfig, dump: int = 5) -> tuple[list[dict], dict, list]:
    """CDF grid of the limiting scaled maximum, kappa, and sampled limit
    point lists (the first ``dump`` samples)."""
    params = limit_params(cfg)
    r = cfg.run
    kappa = kappa_lambda(params)
    grid = np.geomspace(0.05, 50.0, 61)
    cdf = limit_max_cdf(params, grid, kappa)
    rows = [{"x": repr(float(x)), "cdf": repr(float(c))} for x, c in zip(grid, cdf)]
    batch = sample_limit_batch(params, r.delta, r.limit_samples, stream(cfg.seed, "limit"),
                               min_support=min(r.zeta, min(r.x_grid)))
    void = {}
    for x in r.x_grid:
        v = (batch.counts_above(x) == 0).astype(float)
        void[repr(float(x))] = {"empirical": float(v.mean()),
                                "se": float(v.std(ddof=1) / math.sqrt(v.size)),
                                "limit_cdf": float(limit_max_cdf(params, x, kappa))}
    summary = {"kappa_lambda": kappa, "kappa_closed_form": kappa_lambda(params, "closed"),
               "rho": params.rho, "alpha": params.alpha, "mean_G": params.mean_G,
               "m_max": params.m_max, "residual": params.residual,
               "samples": r.limit_samples, "delta": r.delta, "void_probability": void}
    points = [batch.measure(i).to_json() for i in range(min(dump, batch.size))]
    return rows, summary, points


def maxdist(cfg: ExperimentConfig, threads: int = 1, threshold: float = 0.05) -> tuple[list[dict], dict]:
    batch = simulate(cfg, threads, purpose="maxdist")
    done = batch.completed()
    if not done:
        return [], {"n": cfg.run.n, "replicas": 0, "aborted": batch.aborted, "ks": float("nan"),
                    "threshold": threshold, "pass": False}
    params = limit_params(cfg)
    kappa = kappa_lambda(params, "closed")

    def cdf(x):
        # the limit law of the maximum puts no mass on (-inf, 0]
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, limit_max_cdf(params, np.maximum(x, 1e-300), kappa), 0.0)

    mx = np.sort([r.max_scaled for r in done])
    D = ks_vs_cdf(mx, cdf)
    grid = np.quantile(mx, np.linspace(0.01, 0.99, 50))
    ecdf = np.searchsorted(mx, grid, side="right") / mx.size
    rows = [{"x": repr(float(x)), "ecdf": repr(float(e)), "limit_cdf": repr(float(cdf(x)))}
            for x, e in zip(grid, ecdf)]
    summary = {"n": cfg.run.n, "replicas": len(done), "aborted": batch.aborted,
               "kappa_lambda": kappa, "ks": D, "threshold": threshold, "pass": bool(D <= threshold)}
    return rows, summary


def onejump(cfg: ExperimentConfig, threads: int = 1) -> tuple[list[dict], dict]:
    """Flag rates and the fraction of replicas whose full and single-big-jump
    processes differ by more than ``epsilon`` on a hat function, over ``n_grid``."""
    r = cfg.run
    f = HatFunction(r.zeta)
    if not r.theta < r.zeta / 2:
        raise ValueError("theta must be below zeta / 2")
    Q = cfg.bmodel.Q
    rows = []
    aborted = 0
    for n in r.n_grid:
        batch = simulate(cfg, threads, n=n, purpose="onejump")
        aborted += batch.aborted
        done = batch.completed()
        flags = np.array([one_jump_events(x) for x in done], dtype=float).reshape(-1, Q)
        gaps = np.array([abs(x.points.integrate(f) - x.tilde.integrate(f)) for x in done])
        frac = float((gaps > r.epsilon).mean()) if gaps.size else float("nan")
        row = {"n": n, "replicas": len(done), "gap_fraction": repr(frac),
               "gap_fraction_se": repr(math.sqrt(frac * (1 - frac) / max(1, len(done))))}
        row.update({f"flag_rate_{p + 1}": repr(float(flags[:, p].mean())) if len(done) else "nan"
                    for p in range(Q)})
        rows.append(row)
    summary = {"zeta": r.zeta, "epsilon": r.epsilon, "theta": r.theta, "aborted": aborted,
               "n_grid": list(r.n_grid)}
    return rows, summary


def convergence(cfg: ExperimentConfig, threads: int = 1,
                zetas: Sequence[float] | None = None) -> tuple[list[dict], dict]:
    """Mean absolute gaps between the single-big-jump process and its cut
    and pruned versions on explicit trees."""
    r = cfg.run
    n = r.n
    setup = make_setup(cfg)
    fs = [HatFunction(z) for z in (zetas or (r.zeta,))]
    Ks = [k for k in r.K if 1 <= k <= n]
    K_prune = max(Ks)

    def task(i):
        tree = grow_tree(setup, n, stream(cfg.seed, "tree", i))
        full = tilde_measure(tree)
        out = {}
        cut = {}
        for K in Ks:
            forest, pk = cut_forest(tree, K)
            cut[K] = (forest, pk)
            out[("K", K)] = [abs(full.integrate(f) - pk.integrate(f)) for f in fs]
        forest, pk = cut[K_prune]
        for B in r.B:
            _, pb = prune_forest(forest, B)
            out[("B", B)] = [abs(pk.integrate(f) - pb.integrate(f)) for f in fs]
        return out

    results = parallel_map(task, r.replicas, threads)
    rows = []
    for kind, vals in [("K", Ks), ("B", list(r.B))]:
        for v in vals:
            gaps = np.array([res[(kind, v)] for res in results])
            for j, f in enumerate(fs):
                g = gaps[:, j]
                rows.append({"n": n, "K": v if kind == "K" else K_prune, "B": v if kind == "B" else "",
                             "f_id": f"hat_zeta={f.zeta:g}", "mean_abs_gap": repr(float(g.mean())),
                             "stderr": repr(float(g.std(ddof=1) / math.sqrt(g.size)) if g.size > 1 else 0.0)})
    summary = {"n": n, "trees": r.replicas, "K": Ks, "B": list(r.B), "K_for_pruning": K_prune}
    return rows, summary


def superpose(cfg: ExperimentConfig, threshold: float = 0.03) -> tuple[list[dict], dict]:
    """Counts above 1 of one limit sample against a superposition of two
    independent samples scaled by ``b_1, b_2`` with ``b_1^alpha + b_2^alpha = 1``."""
    params = limit_params(cfg)
    r = cfg.run
    size = r.limit_samples
    b = 0.5 ** (1.0 / params.alpha)
    single = sample_limit_batch(params, r.delta, size, stream(cfg.seed, "superpose", 0), min_support=1.0)
    a1 = sample_limit_batch(params, r.delta, size, stream(cfg.seed, "superpose", 1), min_support=1.0 / b)
    a2 = sample_limit_batch(params, r.delta, size, stream(cfg.seed, "superpose", 2), min_support=1.0 / b)
    c0 = single.counts_above(1.0)
    c1 = a1.counts_above(1.0 / b) + a2.counts_above(1.0 / b)
    D = ks_two_sample(c0, c1)
    top = int(max(c0.max(initial=0), c1.max(initial=0)))
    rows = [{"count": k, "single": int((c0 == k).sum()), "superposed": int((c1 == k).sum())}
            for k in range(min(top, 200) + 1)]
    summary = {"samples": size, "b": b, "ks": D, "threshold": threshold, "pass": bool(D < threshold),
               "mean_single": float(c0.mean()), "mean_superposed": float(c1.mean())}
    return rows, summary


def laplace_check(cfg: ExperimentConfig, zetas=(0.5, 1.0, 2.0)) -> list[dict]:
    params = limit_params(cfg)
    r = cfg.run
    batch = sample_limit_batch(params, r.delta, r.limit_samples, stream(cfg.seed, "laplace"),
                               min_support=min(zetas))
    out = []
    for j, z in enumerate(zetas):
        f = HatFunction(z)
        est = laplace_functional_limit(params, f, z, r.mc, stream(cfg.seed, "laplace-mc", j))
        emp = batch.laplace(f)
        se_emp = float(emp.std(ddof=1) / math.sqrt(emp.size))
        comb = math.hypot(est.se, se_emp)
        out.append({"zeta": z, "functional": est.value, "functional_se": est.se,
                    "empirical": float(emp.mean()), "empirical_se": se_emp,
                    "z": (est.value - float(emp.mean())) / comb if comb > 0 else 0.0})
    return out


def counts_comparison(cfg: ExperimentConfig, threads: int = 1, x: float = 1.0) -> dict:
    batch = simulate(cfg, threads, purpose="counts")
    done = batch.completed()
    params = limit_params(cfg)
    lim = sample_limit_batch(params, cfg.run.delta, len(done), stream(cfg.seed, "counts-limit"),
                             min_support=x)
    cn = np.array([counts_in(res.points, x) for res in done])
    cs = lim.counts_above(x)
    return {"ks": ks_two_sample(cn, cs), "mean_finite": float(cn.mean()), "mean_limit": float(cs.mean()),
            "samples": len(done)}
