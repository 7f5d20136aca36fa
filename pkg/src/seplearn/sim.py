"""Paired model/plant episodes under shared noise, Monte Carlo aggregation and
the learn-and-bind closed loop.
"""
from __future__ import annotations

import csv
import io
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import backend
from .errors import NonConvergence
from .estimator import (BeliefMixture, GaussianBelief, ResponseRegressor, filter_gains,
                        info_state_update, initial_information_state)
from .lti import EpisodeRecord, NoiseSpec, QuadraticCostSpec, TimeVaryingLinearSystem
from .solver import (CostReport, PlantResponse, SeparatedStrategy, bind_parameters,
                     disturbance_predictor)

ALGORITHM = "splitmix64-boxmuller-v1"
CHUNK = 8192


@dataclass(frozen=True)
class RngStreamSpec:
    master_seed: int
    stream: int = 0
    algorithm: str = ALGORITHM


def draw_primitives(noise: NoiseSpec, seed: int, stream0: int, count: int, extra: int = 0,
                    kernels=None):
    """Primitive draws for ``count`` consecutive streams plus ``extra`` spare normals each."""
    kernels = kernels or backend.kernels
    d = noise.dims
    z = kernels.normals(seed, stream0, count, d.n_primitives + extra)
    return noise.transform(z[:, :d.n_primitives]), z[:, d.n_primitives:]


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


@dataclass
class RolloutPlan:
    """Everything a kernel needs, precomputed once per (systems, strategy, noise)."""

    args: tuple
    dims: tuple

    @classmethod
    def build(cls, plant_sys, model_sys, strategy: SeparatedStrategy, noise: NoiseSpec,
              plant_belief: Optional[PlantResponse] = None) -> "RolloutPlan":
        if not strategy.bound:
            raise ValueError("strategy must be bound before simulation")
        d = noise.dims
        resp = plant_belief or PlantResponse.from_system(model_sys)
        hyp = resp.as_system(model_sys)
        gm = filter_gains(model_sys, noise)
        gp = filter_gains(hyp, noise)
        wp = disturbance_predictor(model_sys, noise)
        Bpinv = np.stack([np.linalg.pinv(B) for B in model_sys.B])
        args = (
            _c(model_sys.A), _c(model_sys.B), _c(model_sys.D), _c(model_sys.C), _c(model_sys.E),
            _c(plant_sys.A), _c(plant_sys.B), _c(plant_sys.D),
            _c(resp.A), _c(resp.B), _c(resp.D), _c(resp.c),
            _c(gm.G), _c(gp.G), _c(gm.x0_mean), _c(gm.w_mean), _c(gm.z_mean),
            _c(strategy.K), _c(strategy.Kp), _c(strategy.M), _c(strategy.k),
            _c(wp.gain), _c(wp.offset), strategy.twin == "matched", _c(Bpinv),
        )
        return cls(args, (d.n, d.m, d.p, d.r, d.s, d.T))

    def run(self, prims, dither=None, kernels=None):
        kernels = kernels or backend.kernels
        n, m, p, r, s, T = self.dims
        if dither is None:
            dither = np.zeros((prims.shape[0], T, m))
        return kernels.rollout(_c(prims), _c(dither), n, m, p, r, s, T, *self.args)


@dataclass
class EpisodeBatch:
    """Struct-of-arrays form of many EpisodeRecords (leading axis = episode)."""

    x: np.ndarray
    xhat: np.ndarray
    y: np.ndarray
    yhat: np.ndarray
    u: np.ndarray
    u_model: np.ndarray
    model_mean: np.ndarray
    plant_mean: np.ndarray
    w: np.ndarray
    z: np.ndarray
    seed: int
    stream0: int

    def __len__(self):
        return self.x.shape[0]

    def record(self, i: int) -> EpisodeRecord:
        return EpisodeRecord(x=self.x[i], xhat=self.xhat[i], y=self.y[i], yhat=self.yhat[i], u=self.u[i],
                             w=self.w[i], z=self.z[i], seed=self.seed, stream=self.stream0 + i,
                             u_model=self.u_model[i], model_mean=self.model_mean[i],
                             plant_mean=self.plant_mean[i])


def simulate_batch(plan: RolloutPlan, noise: NoiseSpec, seed: int, stream0: int, count: int,
                   dither_std: float = 0.0, workers: int = 1, kernels=None) -> EpisodeBatch:
    """Run ``count`` episodes; chunking is fixed, so results do not depend on ``workers``."""
    kernels = kernels or backend.kernels
    n, m, p, r, s, T = plan.dims

    def chunk(start):
        c = min(CHUNK, count - start)
        prims, extra = draw_primitives(noise, seed, stream0 + start, c, extra=T * m, kernels=kernels)
        dither = dither_std * extra.reshape(c, T, m)
        out = plan.run(prims, dither, kernels=kernels)
        return out, prims

    starts = list(range(0, count, CHUNK))
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(chunk, starts))
    else:
        parts = [chunk(s0) for s0 in starts]
    outs = [np.concatenate([pt[0][j] for pt in parts]) for j in range(8)]
    prims = np.concatenate([pt[1] for pt in parts])
    _, w, z = noise.split(prims)
    x, xh, y, yh, u, um, mm, mp = outs
    return EpisodeBatch(x, xh, y, yh, u, um, mm, mp, w, z, seed, stream0)


def rollout_primitives(plant_sys, model_sys, strategy, noise, prims, plant_belief=None, kernels=None) -> EpisodeBatch:
    """Deterministic episodes from explicit primitive vectors (no sampling)."""
    prims = np.atleast_2d(np.asarray(prims, float))
    plan = RolloutPlan.build(plant_sys, model_sys, strategy, noise, plant_belief)
    x, xh, y, yh, u, um, mm, mp = plan.run(prims, kernels=kernels)
    _, w, z = noise.split(prims)
    return EpisodeBatch(x, xh, y, yh, u, um, mm, mp, w, z, 0, 0)


def run_episode(plant_sys, model_sys, strategy: SeparatedStrategy, noise: NoiseSpec,
                stream: RngStreamSpec, plant_belief: Optional[PlantResponse] = None) -> EpisodeRecord:
    plan = RolloutPlan.build(plant_sys, model_sys, strategy, noise, plant_belief)
    return simulate_batch(plan, noise, stream.master_seed, stream.stream, 1).record(0)


# Costs ----------------------------------------------------------------------------

def _batch_costs(x, u, cost: QuadraticCostSpec):
    T = u.shape[1]
    c = np.einsum("eti,tij,etj->e", x[:, :T], cost.Qx, x[:, :T]) + np.einsum("eti,tij,etj->e", u, cost.Ru, u)
    c += np.einsum("eti,ti->e", x[:, :T], cost.qx) + np.einsum("eti,ti->e", u, cost.ru)
    c += np.einsum("ei,ij,ej->e", x[:, T], cost.QT, x[:, T]) + x[:, T] @ cost.qT
    return c


def episode_costs(batch: EpisodeBatch, cost: QuadraticCostSpec):
    """Per-episode (J1, J2, penalty, model-only cost)."""
    j1 = _batch_costs(batch.xhat, batch.u, cost)
    model = _batch_costs(batch.x, batch.u, cost)
    d = batch.x[:, 1:] - batch.xhat[:, 1:]
    pen = cost.beta * np.einsum("eti,eti->e", d, d)
    return j1, model + pen, pen, model


def _stderr(v):
    return float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0


def cost_report(batch: EpisodeBatch, cost: QuadraticCostSpec) -> CostReport:
    j1, j2, pen, model = episode_costs(batch, cost)
    return CostReport(
        J1_mean=float(np.mean(j1)), J1_stderr=_stderr(j1),
        J2_mean=float(np.mean(j2)), J2_stderr=_stderr(j2),
        penalty_mean=float(np.mean(pen)), episodes=int(j1.size),
        model_cost_mean=float(np.mean(model)), diff_stderr=_stderr(j2 - j1),
    )


@dataclass
class MonteCarloReport:
    cost: CostReport
    disc_mean: np.ndarray          # (T, n) mean of x[t+1] - xhat[t+1]
    disc_std: np.ndarray
    episodes: int
    xhat_trace: list = field(default_factory=list)
    wall_clock: float = 0.0
    converged: bool = True
    strategy: Optional[SeparatedStrategy] = field(default=None, repr=False)
    response: Optional[PlantResponse] = field(default=None, repr=False)
    group_responses: list = field(default_factory=list, repr=False)
    batch: Optional[EpisodeBatch] = field(default=None, repr=False)

    def as_dict(self, timing: bool = False) -> dict:
        out = {f"cost.{k}": v for k, v in self.cost.as_dict().items()}
        T = self.disc_mean.shape[0]
        for t in range(T):
            for i, (mu, sd) in enumerate(zip(self.disc_mean[t], self.disc_std[t])):
                out[f"disc_mean.t{t + 1}[{i}]"] = float(mu)
                out[f"disc_std.t{t + 1}[{i}]"] = float(sd)
        for it, tr in enumerate(self.xhat_trace):
            for t, row in enumerate(np.atleast_2d(tr)):
                for i, v in enumerate(row):
                    out[f"xhat_trace.iter{it}.t{t}[{i}]"] = float(v)
        out["episodes"] = self.episodes
        out["converged"] = self.converged
        if timing:
            out["wall_clock"] = self.wall_clock
        return out


def _discrepancy(batch: EpisodeBatch):
    d = batch.x[:, 1:] - batch.xhat[:, 1:]
    return d.mean(axis=0), d.std(axis=0, ddof=1) if len(batch) > 1 else np.zeros(d.shape[1:])


def run_monte_carlo(plant_sys, model_sys, strategy: SeparatedStrategy, noise: NoiseSpec,
                    cost: QuadraticCostSpec, n_episodes: int, seed: int, workers: int = 1,
                    plant_belief: Optional[PlantResponse] = None, keep_batch: bool = False,
                    kernels=None) -> MonteCarloReport:
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    t0 = time.perf_counter()
    plan = RolloutPlan.build(plant_sys, model_sys, strategy, noise, plant_belief)
    batch = simulate_batch(plan, noise, seed, 0, n_episodes, workers=workers, kernels=kernels)
    dm, ds = _discrepancy(batch)
    return MonteCarloReport(cost=cost_report(batch, cost), disc_mean=dm, disc_std=ds, episodes=n_episodes,
                            wall_clock=time.perf_counter() - t0, strategy=strategy,
                            batch=batch if keep_batch else None)


# Learning ----------------------------------------------------------------------------

def recovered_disturbance(model_sys, batch: EpisodeBatch):
    """Disturbances implied by the model twin's belief transitions: D^+ (m[t+1] - A m[t] - B u_model[t])."""
    T = batch.u.shape[1]
    out = []
    for t in range(T):
        gap = batch.model_mean[:, t + 1] - batch.model_mean[:, t] @ model_sys.A[t].T - batch.u_model[:, t] @ model_sys.B[t].T
        out.append(gap @ np.linalg.pinv(model_sys.D[t]).T)
    return np.stack(out, axis=1)


def _features(plant_mean_t, u_t, w_t):
    return np.hstack([plant_mean_t, u_t, w_t, np.ones((plant_mean_t.shape[0], 1))])


def response_from_regressors(regs, n, m, r) -> PlantResponse:
    A, B, D, c = [], [], [], []
    for reg in regs:
        theta = reg.coef.T  # (n, n + m + r + 1)
        A.append(theta[:, :n]); B.append(theta[:, n:n + m]); D.append(theta[:, n + m:n + m + r]); c.append(theta[:, -1])
    return PlantResponse(np.array(A), np.array(B), np.array(D), np.array(c))


def _absorb(regs, model_sys, batch):
    w_rec = recovered_disturbance(model_sys, batch)
    for t, reg in enumerate(regs):
        reg.update_batch(_features(batch.plant_mean[:, t], batch.u[:, t], w_rec[:, t]), batch.plant_mean[:, t + 1])


def _response_change(a: PlantResponse, b: PlantResponse) -> float:
    return float(max(np.max(np.abs(x - y)) for x, y in zip((a.A, a.B, a.D, a.c), (b.A, b.B, b.D, b.c))))


def _mixture_trace(batch: EpisodeBatch, covs) -> np.ndarray:
    n = batch.plant_mean.shape[2]
    return np.array([BeliefMixture(n).absorb_batch(batch.plant_mean[:, t], covs[t]).collapse().mean
                     for t in range(batch.plant_mean.shape[1])])


def closed_loop_learn(plant_sys, model_sys, strategy: SeparatedStrategy, noise: NoiseSpec,
                      cost: QuadraticCostSpec, n_outer: int, n_inner: int, seed: int,
                      mode: str = "batch", dither: float = 0.1, tol: float = 1e-3,
                      n_eval: Optional[int] = None, groups: int = 8, workers: int = 1,
                      keep_batch: bool = False) -> MonteCarloReport:
    """Learn the plant's conditional-mean response while running the separated strategy.

    Each outer iteration binds the current response estimate (iteration 0 uses
    the model's own dynamics), runs ``n_inner`` dithered paired episodes,
    absorbs them into per-step recursive least squares, and re-estimates the
    expected plant trajectory from the mixture of plant beliefs. Convergence
    means the learned response moved by at most ``tol`` in the last iteration. ``mode="per_step"``
    re-binds after every information-state update inside each episode.

    The plant matrices are used only to simulate the plant.
    """
    if strategy.bound:
        raise ValueError("closed_loop_learn needs a parameterized strategy")
    t0 = time.perf_counter()
    d = noise.dims
    n, m, r, T = d.n, d.m, d.r, d.T
    regs = [ResponseRegressor(n + m + r + 1, n) for _ in range(T)]
    resp = PlantResponse.from_system(model_sys)
    history = [resp]
    trace = []
    stream = 0
    for it in range(n_outer):
        bound = bind_parameters(strategy, resp)
        if mode == "per_step":
            batch = _per_step_episodes(plant_sys, model_sys, strategy, noise, regs, resp, seed, stream,
                                       n_inner, dither)
        else:
            plan = RolloutPlan.build(plant_sys, model_sys, bound, noise, resp)
            batch = simulate_batch(plan, noise, seed, stream, n_inner, dither_std=dither, workers=workers)
            _absorb(regs, model_sys, batch)
        stream += n_inner
        covs = filter_gains(resp.as_system(model_sys), noise).cov
        trace.append(_mixture_trace(batch, covs))
        resp = response_from_regressors(regs, n, m, r)
        history.append(resp)

    # split-sample refits of the last iteration give a spread for the learned coefficients
    group_resps = []
    if mode != "per_step" and groups > 1 and len(batch) >= groups:
        w_rec = recovered_disturbance(model_sys, batch)
        for g in np.array_split(np.arange(len(batch)), groups):
            gr = [ResponseRegressor(n + m + r + 1, n) for _ in range(T)]
            for t, reg in enumerate(gr):
                reg.update_batch(_features(batch.plant_mean[g, t], batch.u[g, t], w_rec[g, t]),
                                 batch.plant_mean[g, t + 1])
            group_resps.append(response_from_regressors(gr, n, m, r))

    final = bind_parameters(strategy, resp)
    n_eval = n_eval or n_inner
    plan = RolloutPlan.build(plant_sys, model_sys, final, noise, resp)
    ev = simulate_batch(plan, noise, seed, stream, n_eval, workers=workers)
    covs = filter_gains(resp.as_system(model_sys), noise).cov
    trace.append(_mixture_trace(ev, covs))
    change = _response_change(history[-2], history[-1])
    converged = change <= tol
    if not converged:
        warnings.warn(f"learned plant response moved by {change:.3e} > {tol:.1e} in the last iteration",
                      NonConvergence, stacklevel=2)
    dm, ds = _discrepancy(ev)
    return MonteCarloReport(cost=cost_report(ev, cost), disc_mean=dm, disc_std=ds, episodes=n_eval,
                            xhat_trace=trace, wall_clock=time.perf_counter() - t0, converged=converged,
                            strategy=final, response=resp, group_responses=group_resps,
                            batch=ev if keep_batch else None)


def _per_step_episodes(plant_sys, model_sys, strategy, noise, regs, resp, seed, stream0, count, dither):
    """Episode-by-episode loop that re-binds after every information-state update."""
    d = noise.dims
    n, m, r, T = d.n, d.m, d.r, d.T
    wp = disturbance_predictor(model_sys, noise)
    Bp = [np.linalg.pinv(B) for B in model_sys.B]
    prims, extra = draw_primitives(noise, seed, stream0, count, extra=T * m)
    x0s, ws, zs = noise.split(prims)
    dith = dither * extra.reshape(count, T, m)
    rec = {k: [] for k in ("x", "xh", "y", "yh", "u", "um", "mm", "mp")}
    for e in range(count):
        x = [x0s[e]]; xh = [x0s[e]]
        y = [model_sys.C[0] @ x0s[e] + model_sys.E[0] @ zs[e, 0]]
        yh = [y[0]]
        pi = initial_information_state(model_sys, noise, y[0], yh[0], resp.as_system(model_sys))
        what = wp(y[0])
        us, ums, mms, mps = [], [], [pi.model_belief.mean], [pi.plant_belief.mean]
        cur = resp
        for t in range(T):
            law = bind_parameters(strategy, cur)
            u = law.control(t, pi.model_belief.mean, pi.plant_belief.mean, what) + dith[e, t]
            xh.append(plant_sys.A[t] @ xh[t] + plant_sys.B[t] @ u + plant_sys.D[t] @ ws[e, t])
            yh.append(model_sys.C[t + 1] @ xh[t + 1] + model_sys.E[t + 1] @ zs[e, t + 1])
            hyp = cur.as_system(model_sys)
            # plant side first: the matched twin needs the new plant estimate
            from .estimator import kalman_step
            plant_next = kalman_step(hyp, noise, pi.plant_belief, t, u, yh[t + 1])
            um = Bp[t] @ (plant_next.mean - model_sys.A[t] @ x[t] - model_sys.D[t] @ ws[e, t])
            x.append(model_sys.A[t] @ x[t] + model_sys.B[t] @ um + model_sys.D[t] @ ws[e, t])
            y.append(model_sys.C[t + 1] @ x[t + 1] + model_sys.E[t + 1] @ zs[e, t + 1])
            prev_model = pi.model_belief.mean
            pi = info_state_update(pi, y[t + 1], yh[t + 1], u, model_sys, hyp, u_model=um)
            w_rec = np.linalg.pinv(model_sys.D[t]) @ (pi.model_belief.mean - model_sys.A[t] @ prev_model
                                                      - model_sys.B[t] @ um)
            regs[t].update(np.concatenate([mps[t], u, w_rec, [1.0]]), pi.plant_belief.mean)
            cur = response_from_regressors(regs, n, m, r) if all(g.count > n + m + r for g in regs) else cur
            us.append(u); ums.append(um); mms.append(pi.model_belief.mean); mps.append(pi.plant_belief.mean)
        for k, v in (("x", x), ("xh", xh), ("y", y), ("yh", yh), ("u", us), ("um", ums), ("mm", mms), ("mp", mps)):
            rec[k].append(np.array(v))
    a = {k: np.array(v) for k, v in rec.items()}
    return EpisodeBatch(a["x"], a["xh"], a["y"], a["yh"], a["u"], a["um"], a["mm"], a["mp"], ws, zs, seed, stream0)


# Dumps ----------------------------------------------------------------------------------

def episodes_csv(batch: EpisodeBatch) -> str:
    """``episode,t,x...,xhat...,y...,yhat...,u...,w...,z...``; u and w are blank at t = T."""
    n, p = batch.x.shape[2], batch.y.shape[2]
    m, r, s = batch.u.shape[2], batch.w.shape[2], batch.z.shape[2]
    T = batch.u.shape[1]
    header = (["episode", "t"] + [f"x{i}" for i in range(n)] + [f"xhat{i}" for i in range(n)]
              + [f"y{i}" for i in range(p)] + [f"yhat{i}" for i in range(p)] + [f"u{i}" for i in range(m)]
              + [f"w{i}" for i in range(r)] + [f"z{i}" for i in range(s)])
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    f = lambda a: [format(float(v), ".17g") for v in a]
    for e in range(len(batch)):
        for t in range(T + 1):
            u = f(batch.u[e, t]) if t < T else [""] * m
            w = f(batch.w[e, t]) if t < T else [""] * r
            wr.writerow([batch.stream0 + e, t] + f(batch.x[e, t]) + f(batch.xhat[e, t]) + f(batch.y[e, t])
                        + f(batch.yhat[e, t]) + u + w + f(batch.z[e, t]))
    return buf.getvalue()


def beliefs_csv(batch: EpisodeBatch, model_covs, plant_covs) -> str:
    """``episode,t,model_mean...,model_cov...,plant_mean...,plant_cov...``."""
    n = batch.x.shape[2]
    T1 = batch.x.shape[1]
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["episode", "t"] + [f"model_mean{i}" for i in range(n)] + [f"model_cov{i}" for i in range(n * n)]
                + [f"plant_mean{i}" for i in range(n)] + [f"plant_cov{i}" for i in range(n * n)])
    f = lambda a: [format(float(v), ".17g") for v in np.ravel(a)]
    for e in range(len(batch)):
        for t in range(T1):
            wr.writerow([batch.stream0 + e, t] + f(batch.model_mean[e, t]) + f(model_covs[t])
                        + f(batch.plant_mean[e, t]) + f(plant_covs[t]))
    return buf.getvalue()
