"""Time-varying linear systems, primitive noise law, quadratic costs and the
deterministic arithmetic shared by the model and the plant.

Conventions
-----------
Model:      x[t+1] = A[t] x[t] + B[t] u[t] + D[t] w[t]
Plant:      xh[t+1] = Ah[t] xh[t] + Bh[t] u[t] + Dh[t] w[t]
Outputs:    y[t] = C[t] x[t] + E[t] z[t]   (same C, E and z for the plant)

Primitive vector layout is ``[X0 | W_0 .. W_{T-1} | Z_0 .. Z_T]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, HorizonMismatch, IndexOutOfHorizon


@dataclass(frozen=True)
class Dims:
    n: int
    m: int
    p: int
    r: int
    s: int
    T: int

    def __post_init__(self):
        for name in ("n", "m", "p", "r", "s", "T"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"Dims.{name} must be a positive integer, got {v!r}")

    @property
    def n_primitives(self) -> int:
        return self.n + self.T * self.r + (self.T + 1) * self.s


def _stack(seq, name) -> np.ndarray:
    arr = np.asarray(seq, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DimensionMismatch(name, "(len, rows, cols)", arr.shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeVaryingLinearSystem:
    """Matrix sequences; A, B, D have T entries, C and E have T+1."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    C: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "D", "C", "E"):
            object.__setattr__(self, name, _stack(getattr(self, name), name))

    @classmethod
    def constant(cls, A, B, D, C, E, T: int) -> "TimeVaryingLinearSystem":
        """Repeat one set of matrices over the horizon."""
        A, B, D, C, E = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, D, C, E))
        return cls(
            A=np.repeat(A[None], T, axis=0),
            B=np.repeat(B[None], T, axis=0),
            D=np.repeat(D[None], T, axis=0),
            C=np.repeat(C[None], T + 1, axis=0),
            E=np.repeat(E[None], T + 1, axis=0),
        )

    @property
    def T(self) -> int:
        return self.A.shape[0]

    @property
    def dims(self) -> Dims:
        return Dims(
            n=self.A.shape[1], m=self.B.shape[2], p=self.C.shape[1],
            r=self.D.shape[2], s=self.E.shape[2], T=self.A.shape[0],
        )


def validate_system(sys: TimeVaryingLinearSystem, dims: Dims) -> TimeVaryingLinearSystem:
    T = dims.T
    for name, want in (("A", T), ("B", T), ("D", T), ("C", T + 1), ("E", T + 1)):
        got = getattr(sys, name).shape[0]
        if got != want:
            raise HorizonMismatch(f"{name} has {got} matrices, horizon requires {want}")
    n, m, p, r, s = dims.n, dims.m, dims.p, dims.r, dims.s
    for name, shape in (("A", (n, n)), ("B", (n, m)), ("D", (n, r)), ("C", (p, n)), ("E", (p, s))):
        got = getattr(sys, name).shape[1:]
        if got != shape:
            raise DimensionMismatch(name, shape, got)
    return sys


def _vec(v, size, name) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (size,):
        raise DimensionMismatch(name, (size,), v.shape)
    return v


def _check_step(t, upper, inclusive=False):
    hi = upper + 1 if inclusive else upper
    if not 0 <= t < hi:
        raise IndexOutOfHorizon(f"step {t} outside [0, {hi - 1}]")


def step_model(sys: TimeVaryingLinearSystem, t: int, x, u, w) -> np.ndarray:
    _check_step(t, sys.T)
    n, m, r = sys.A.shape[1], sys.B.shape[2], sys.D.shape[2]
    return sys.A[t] @ _vec(x, n, "x") + sys.B[t] @ _vec(u, m, "u") + sys.D[t] @ _vec(w, r, "w")


# the plant obeys the same equation form with its own matrices
step_plant = step_model


def observe(sys: TimeVaryingLinearSystem, t: int, state, z) -> np.ndarray:
    _check_step(t, sys.T, inclusive=True)
    n, s = sys.C.shape[2], sys.E.shape[2]
    return sys.C[t] @ _vec(state, n, "state") + sys.E[t] @ _vec(z, s, "z")


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True)
class NoiseSpec:
    """Joint Gaussian law of the primitives ``[X0 | W_0..W_{T-1} | Z_0..Z_T]``."""

    mean: np.ndarray
    cov: np.ndarray
    dims: Dims

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        N = self.dims.n_primitives
        if mean.shape != (N,):
            raise DimensionMismatch("noise.mean", (N,), mean.shape)
        if cov.shape != (N, N):
            raise DimensionMismatch("noise.cov", (N, N), cov.shape)
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise ValueError("noise covariance is not symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-10:
            raise ValueError("noise covariance is not positive semidefinite")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def independent(cls, dims: Dims, x0_mean, x0_cov, w_cov, z_cov, w_mean=None) -> "NoiseSpec":
        """Block-diagonal law: X0, each W_t and each Z_t mutually independent.

        ``w_cov`` / ``z_cov`` may be one matrix (repeated) or a per-step sequence.
        """
        n, r, s, T = dims.n, dims.r, dims.s, dims.T

        def per_step(M, k, count):
            M = np.asarray(M, dtype=float)
            if M.ndim <= 2:
                return [np.atleast_2d(M).reshape(k, k)] * count
            return [np.asarray(Mi).reshape(k, k) for Mi in M]

        blocks = [np.atleast_2d(np.asarray(x0_cov, dtype=float)).reshape(n, n)]
        blocks += per_step(w_cov, r, T) + per_step(z_cov, s, T + 1)
        cov = np.zeros((dims.n_primitives,) * 2)
        i = 0
        for b in blocks:
            k = b.shape[0]
            cov[i:i + k, i:i + k] = b
            i += k
        mean = np.zeros(dims.n_primitives)
        mean[:n] = x0_mean
        if w_mean is not None:
            mean[n:n + T * r] = np.broadcast_to(np.asarray(w_mean, dtype=float), (T, r)).ravel()
        return cls(mean=mean, cov=cov, dims=dims)

    # index helpers -------------------------------------------------------
    @property
    def x0_slice(self) -> slice:
        return slice(0, self.dims.n)

    def w_slice(self, t: int) -> slice:
        n, r = self.dims.n, self.dims.r
        return slice(n + t * r, n + (t + 1) * r)

    def z_slice(self, t: int) -> slice:
        d = self.dims
        base = d.n + d.T * d.r
        return slice(base + t * d.s, base + (t + 1) * d.s)

    @property
    def w_block(self) -> slice:
        d = self.dims
        return slice(d.n, d.n + d.T * d.r)

    def marginal(self, sl: slice):
        return self.mean[sl], self.cov[sl, sl]

    @property
    def factor(self) -> np.ndarray:
        """Matrix S with S S' = cov (symmetric-eigen square root; works for singular cov)."""
        f = self.__dict__.get("_factor")
        if f is None:
            f = _psd_sqrt(self.cov)
            f.setflags(write=False)
            object.__setattr__(self, "_factor", f)
        return f

    def transform(self, normals: np.ndarray) -> np.ndarray:
        """Map standard normal draws (..., N) to primitive draws."""
        return self.mean + normals @ self.factor.T

    def split(self, prims: np.ndarray):
        """Split primitive vector(s) into (x0, w[T, r], z[T+1, s])."""
        d = self.dims
        prims = np.asarray(prims, dtype=float)
        lead = prims.shape[:-1]
        x0 = prims[..., : d.n]
        w = prims[..., self.w_block].reshape(*lead, d.T, d.r)
        z = prims[..., d.n + d.T * d.r:].reshape(*lead, d.T + 1, d.s)
        return x0, w, z


@dataclass(frozen=True)
class QuadraticCostSpec:
    """Stage cost x'Qx + u'Ru + q.x + r.u, terminal x'QT x + qT.x, penalty beta|x - xh|^2."""

    Qx: np.ndarray
    Ru: np.ndarray
    QT: np.ndarray
    beta: float = 1.0
    qx: Optional[np.ndarray] = None
    ru: Optional[np.ndarray] = None
    qT: Optional[np.ndarray] = None

    def __post_init__(self):
        Qx, Ru = _stack(self.Qx, "Qx"), _stack(self.Ru, "Ru")
        QT = np.atleast_2d(np.asarray(self.QT, dtype=float))
        T, n, m = Qx.shape[0], Qx.shape[1], Ru.shape[1]
        if Ru.shape[0] != T:
            raise HorizonMismatch("Qx and Ru lengths differ")
        if QT.shape != (n, n):
            raise DimensionMismatch("QT", (n, n), QT.shape)
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        for name, M in (("Qx", Qx), ("QT", QT[None])):
            if np.max(np.abs(M - np.swapaxes(M, 1, 2))) > 1e-12:
                raise ValueError(f"{name} not symmetric")
            if min(np.linalg.eigvalsh(Mi).min() for Mi in M) < -1e-12:
                raise ValueError(f"{name} not positive semidefinite")
        if np.max(np.abs(Ru - np.swapaxes(Ru, 1, 2))) > 1e-12:
            raise ValueError("Ru not symmetric")
        # PSD suffices: the Riccati pass checks R + B'PB for invertibility
        if min(np.linalg.eigvalsh(Mi).min() for Mi in Ru) < -1e-12:
            raise ValueError("Ru not positive semidefinite")
        qx = np.zeros((T, n)) if self.qx is None else np.asarray(self.qx, float).reshape(T, n)
        ru = np.zeros((T, m)) if self.ru is None else np.asarray(self.ru, float).reshape(T, m)
        qT = np.zeros(n) if self.qT is None else np.asarray(self.qT, float).reshape(n)
        for name, v in (("Qx", Qx), ("Ru", Ru), ("QT", QT), ("qx", qx), ("ru", ru), ("qT", qT)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "beta", float(self.beta))

    @classmethod
    def constant(cls, Q, R, QT, T: int, beta: float = 1.0) -> "QuadraticCostSpec":
        Q, R = np.atleast_2d(np.asarray(Q, float)), np.atleast_2d(np.asarray(R, float))
        return cls(np.repeat(Q[None], T, 0), np.repeat(R[None], T, 0), QT, beta)

    @property
    def T(self) -> int:
        return self.Qx.shape[0]

    def scaled(self, lam: float) -> "QuadraticCostSpec":
        return QuadraticCostSpec(lam * self.Qx, lam * self.Ru, lam * self.QT, lam * self.beta,
                                 lam * self.qx, lam * self.ru, lam * self.qT)


@dataclass(frozen=True)
class EpisodeRecord:
    """One paired episode. ``u`` is the applied control; ``u_model`` is what the
    model twin received (equal to ``u`` unless the twin is driven by matching)."""

    x: np.ndarray
    xhat: np.ndarray
    y: np.ndarray
    yhat: np.ndarray
    u: np.ndarray
    w: np.ndarray
    z: np.ndarray
    seed: int = 0
    stream: int = 0
    u_model: Optional[np.ndarray] = None
    model_mean: Optional[np.ndarray] = field(default=None, repr=False)
    plant_mean: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        T = self.u.shape[0]
        for name, length in (("x", T + 1), ("xhat", T + 1), ("y", T + 1), ("yhat", T + 1), ("w", T), ("z", T + 1)):
            if getattr(self, name).shape[0] != length:
                raise DimensionMismatch(f"episode.{name}", length, getattr(self, name).shape[0])
        if not np.array_equal(self.x[0], self.xhat[0]):
            raise ValueError("model and plant must share the initial state")
        if self.u_model is None:
            object.__setattr__(self, "u_model", self.u)


def _check_episode(ep: EpisodeRecord, cost: QuadraticCostSpec):
    T = ep.u.shape[0]
    if cost.T != T:
        raise DimensionMismatch("cost horizon", T, cost.T)
    if ep.x.shape[1] != cost.QT.shape[0] or ep.u.shape[1] != cost.Ru.shape[1]:
        raise DimensionMismatch("cost weights", (ep.x.shape[1], ep.u.shape[1]),
                                (cost.QT.shape[0], cost.Ru.shape[1]))


def _trajectory_cost(x, u, cost: QuadraticCostSpec) -> float:
    T = u.shape[0]
    stage = np.einsum("ti,tij,tj->", x[:T], cost.Qx, x[:T]) + np.einsum("ti,tij,tj->", u, cost.Ru, u)
    stage += np.sum(cost.qx * x[:T]) + np.sum(cost.ru * u)
    return float(stage + x[T] @ cost.QT @ x[T] + cost.qT @ x[T])


def problem1_cost(episode: EpisodeRecord, cost: QuadraticCostSpec) -> float:
    """Realized plant cost: sum_t c_t(xh_t, u_t) + c_T(xh_T)."""
    _check_episode(episode, cost)
    return _trajectory_cost(episode.xhat, episode.u, cost)


def discrepancy_penalty(episode: EpisodeRecord, beta: float) -> float:
    d = episode.x[1:] - episode.xhat[1:]
    return float(beta * np.sum(d * d))


def problem2_cost(episode: EpisodeRecord, cost: QuadraticCostSpec) -> float:
    """Realized model cost plus beta * sum_t |x_{t+1} - xh_{t+1}|^2."""
    _check_episode(episode, cost)
    return _trajectory_cost(episode.x, episode.u, cost) + discrepancy_penalty(episode, cost.beta)
