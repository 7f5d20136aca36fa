"""Offline synthesis of separated strategies, parameter binding and evaluation.

A strategy's control law at step t is affine in the information-state means::

    u[t] = K[t] m_model[t] + Kp[t] m_plant[t] + L[t] xhat[1:T+1] + M[t] what + k[t]

``xhat`` are the parameter slots (expected plant states) and ``what`` the
conditional mean of the disturbances ``W_0..W_{T-1}`` given the first output.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .errors import AlreadyBound, DimensionMismatch, LengthMismatch, RankDeficient, SingularRiccati
from .estimator import GaussianBelief
from .lti import NoiseSpec, QuadraticCostSpec, TimeVaryingLinearSystem
from .oracle.conditioning import batch_gaussian_conditioning


@dataclass(frozen=True)
class StrategyParameterization:
    xhat_means: np.ndarray  # (T+1, n)

    def __post_init__(self):
        arr = np.asarray(self.xhat_means, float)
        if arr.ndim == 1:
            arr = arr[:, None]
        object.__setattr__(self, "xhat_means", arr)

    @classmethod
    def from_beliefs(cls, beliefs: Sequence[GaussianBelief]) -> "StrategyParameterization":
        return cls(np.stack([b.mean for b in beliefs]))


@dataclass(frozen=True)
class PlantResponse:
    """Affine conditional-mean map of the plant: ``E[xh[t+1]] = A xh + B u + D w + c``."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    c: np.ndarray

    @classmethod
    def from_system(cls, sys: TimeVaryingLinearSystem) -> "PlantResponse":
        T, n = sys.T, sys.A.shape[1]
        return cls(np.array(sys.A), np.array(sys.B), np.array(sys.D), np.zeros((T, n)))

    def as_system(self, like: TimeVaryingLinearSystem) -> TimeVaryingLinearSystem:
        """Hypothesized plant dynamics with the known output matrices of ``like``."""
        return TimeVaryingLinearSystem(self.A, self.B, self.D, like.C, like.E)


@dataclass(frozen=True)
class SeparatedStrategy:
    """Per-step affine laws; see the module docstring for the law's form.

    ``twin`` says how the model runs alongside the plant: ``"shared"`` feeds it
    the applied control, ``"matched"`` feeds it the input that lands the model
    on the plant's new state estimate.
    """

    kind: str
    K: np.ndarray
    Kp: np.ndarray
    L: np.ndarray
    M: np.ndarray
    k: np.ndarray
    bound: bool = False
    twin: str = "shared"
    model_sys: Optional[TimeVaryingLinearSystem] = field(default=None, repr=False, compare=False)
    cost: Optional[QuadraticCostSpec] = field(default=None, repr=False, compare=False)

    @property
    def T(self) -> int:
        return self.K.shape[0]

    @property
    def dims(self):
        return self.K.shape[1], self.K.shape[2]  # (m, n)

    def control(self, t: int, model_mean, plant_mean, what, xhat_slots=None) -> np.ndarray:
        u = self.K[t] @ model_mean + self.Kp[t] @ plant_mean + self.M[t] @ np.ravel(what) + self.k[t]
        if not self.bound:
            if xhat_slots is None:
                raise ValueError("parameterized strategy needs xhat slot values")
            u = u + self.L[t] @ np.ravel(xhat_slots)
        return u


@dataclass(frozen=True)
class CostReport:
    J1_mean: float
    J1_stderr: float
    J2_mean: float
    J2_stderr: float
    penalty_mean: float
    episodes: int
    model_cost_mean: float = 0.0
    diff_stderr: float = 0.0  # stderr of the paired difference J2 - J1

    def __post_init__(self):
        if self.J1_stderr < 0 or self.J2_stderr < 0 or self.penalty_mean < 0:
            raise ValueError("stderrs and penalty must be nonnegative")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# Riccati engine -------------------------------------------------------------------

def _affine_riccati(A, B, Dpi, Q, R, QT, Pen, Tpi, Q1, R1, QT1):
    """Backward pass for affine-quadratic problems with exogenous parameters ``pi``.

    Dynamics ``x+ = A x + B u + Dpi pi``; stage ``x'Qx + 2 x'Q1 pi + u'Ru + 2 u'R1 pi
    + x+'Pen x+ - 2 x+'Tpi pi``; terminal ``x'QT x + 2 x'QT1 pi``. Value functions
    are ``x'P x + 2 x'S pi + const``; the optimal law is ``u = K x + F pi``.
    """
    T = len(A)
    N, m = B[0].shape
    P_ = [None] * (T + 1)
    S_ = [None] * (T + 1)
    K = np.zeros((T, m, N))
    F = np.zeros((T, m, Dpi[0].shape[1]))
    P_[T], S_[T] = np.array(QT, float), np.array(QT1, float)
    for t in range(T - 1, -1, -1):
        Pt = P_[t + 1] + Pen[t]
        St = S_[t + 1] - Tpi[t]
        G = R[t] + B[t].T @ Pt @ B[t]
        G = 0.5 * (G + G.T)
        vals = np.linalg.eigvalsh(G)
        if vals.min() <= 1e-12 * max(1.0, vals.max()):
            raise SingularRiccati(t, f"(min eigenvalue {vals.min():.3e})")
        K[t] = -np.linalg.solve(G, B[t].T @ Pt @ A[t])
        F[t] = -np.linalg.solve(G, B[t].T @ Pt @ Dpi[t] + B[t].T @ St + R1[t])
        P_[t] = Q[t] + A[t].T @ Pt @ (A[t] + B[t] @ K[t])
        P_[t] = 0.5 * (P_[t] + P_[t].T)
        S_[t] = Q1[t] + A[t].T @ (Pt @ (B[t] @ F[t] + Dpi[t]) + St)
    return K, F, P_, S_


def _layout(T, n, r):
    """Column layout of pi = [xhat_1..xhat_T | what_0..what_{T-1} | 1]."""
    n_slots, n_w = T * n, T * r
    return n_slots, n_w, n_slots + n_w + 1


def lqr_gains(sys: TimeVaryingLinearSystem, cost: QuadraticCostSpec):
    """Textbook finite-horizon LQR: P_T = QT, K_t = -(R + B'PB)^-1 B'PA."""
    T = sys.T
    P = np.array(cost.QT)
    Ks = [None] * T
    for t in range(T - 1, -1, -1):
        A, B = sys.A[t], sys.B[t]
        Ks[t] = -np.linalg.inv(cost.Ru[t] + B.T @ P @ B) @ B.T @ P @ A
        P = cost.Qx[t] + A.T @ P @ A + A.T @ P @ B @ Ks[t]
    return np.array(Ks)


def solve_tracking_lq(model_sys: TimeVaryingLinearSystem, cost: QuadraticCostSpec,
                      dims=None, beta: Optional[float] = None) -> SeparatedStrategy:
    """Optimal separated strategy for the model with the discrepancy penalty.

    Stage cost ``c_t(x, u) + beta |x[t+1] - xhat[t+1]|^2`` with ``xhat`` left as
    parameter slots. Residual noise is handled by certainty equivalence.
    """
    T, n, m, r = model_sys.T, model_sys.A.shape[1], model_sys.B.shape[2], model_sys.D.shape[2]
    if dims is not None and (dims.T, dims.n, dims.m, dims.r) != (T, n, m, r):
        raise DimensionMismatch("dims", (dims.T, dims.n, dims.m, dims.r), (T, n, m, r))
    if cost.T != T or cost.QT.shape != (n, n) or cost.Ru.shape[1] != m:
        raise DimensionMismatch("cost", (T, n, m), (cost.T, cost.QT.shape[0], cost.Ru.shape[1]))
    beta = cost.beta if beta is None else float(beta)
    n_slots, n_w, P = _layout(T, n, r)
    Dpi, Tpi, Q1, R1 = [], [], [], []
    for t in range(T):
        Dp = np.zeros((n, P))
        Dp[:, n_slots + t * r: n_slots + (t + 1) * r] = model_sys.D[t]
        Dpi.append(Dp)
        Tp = np.zeros((n, P))
        Tp[:, t * n:(t + 1) * n] = beta * np.eye(n)
        Tpi.append(Tp)
        q = np.zeros((n, P))
        q[:, -1] = 0.5 * cost.qx[t]
        Q1.append(q)
        rr = np.zeros((m, P))
        rr[:, -1] = 0.5 * cost.ru[t]
        R1.append(rr)
    QT1 = np.zeros((n, P))
    QT1[:, -1] = 0.5 * cost.qT
    Pen = [beta * np.eye(n)] * T
    K, F, _, _ = _affine_riccati(model_sys.A, model_sys.B, Dpi, cost.Qx, cost.Ru, cost.QT,
                                 Pen, Tpi, Q1, R1, QT1)
    return SeparatedStrategy(
        kind="tracking", K=K, Kp=np.zeros_like(K), L=F[:, :, :n_slots], M=F[:, :, n_slots:n_slots + n_w],
        k=F[:, :, -1], twin="shared", model_sys=model_sys, cost=replace(cost, beta=beta),
    )


def matching_strategy(model_sys: TimeVaryingLinearSystem, dims=None,
                      cost: Optional[QuadraticCostSpec] = None) -> SeparatedStrategy:
    """``u[t] = B[t]^+ (xhat[t+1] - A[t] x[t] - D[t] what[t])``: the minimum-norm input
    that makes the expected model and plant states coincide."""
    T, n, m, r = model_sys.T, model_sys.A.shape[1], model_sys.B.shape[2], model_sys.D.shape[2]
    K = np.zeros((T, m, n))
    L = np.zeros((T, m, T * n))
    M = np.zeros((T, m, T * r))
    for t in range(T):
        Bp = np.linalg.pinv(model_sys.B[t])
        if np.linalg.matrix_rank(model_sys.B[t]) < n:
            warnings.warn(f"B[{t}] lacks full row rank; matching leaves a least-squares residual",
                          RankDeficient, stacklevel=2)
        K[t] = -Bp @ model_sys.A[t]
        L[t][:, t * n:(t + 1) * n] = Bp
        M[t][:, t * r:(t + 1) * r] = -Bp @ model_sys.D[t]
    return SeparatedStrategy(kind="matching", K=K, Kp=np.zeros_like(K), L=L, M=M, k=np.zeros((T, m)),
                             twin="shared", model_sys=model_sys, cost=cost)


def matching_residual(model_sys: TimeVaryingLinearSystem, t: int, x, xhat_next, what=None) -> np.ndarray:
    """Part of ``xhat[t+1] - A x - D what`` no input can reach: ``(I - B B^+)`` applied to it."""
    B = model_sys.B[t]
    what = np.zeros(model_sys.D.shape[2]) if what is None else np.ravel(what)
    gap = np.ravel(xhat_next) - model_sys.A[t] @ np.ravel(x) - model_sys.D[t] @ what
    return gap - B @ np.linalg.pinv(B) @ gap


# Binding ---------------------------------------------------------------------------

def _response_pi(resp: PlantResponse, t: int, n: int, r: int, T: int):
    # pi = [what_0..what_{T-1} | 1]
    P = T * r + 1
    Dp = np.zeros((resp.A.shape[1], P))
    Dp[:, t * r:(t + 1) * r] = resp.D[t]
    Dp[:, -1] = resp.c[t]
    return Dp


def _bind_response_matching(strategy: SeparatedStrategy, resp: PlantResponse) -> SeparatedStrategy:
    # zero penalty turns the model cost into the plant cost on the response dynamics
    cost = strategy.cost
    T, (m, n) = strategy.T, strategy.dims
    r = resp.D.shape[2]
    P = T * r + 1
    Dpi = [_response_pi(resp, t, n, r, T) for t in range(T)]
    zeros_n = [np.zeros((n, n))] * T
    Q1 = [np.outer(0.5 * cost.qx[t], np.eye(P)[-1]) for t in range(T)]
    R1 = [np.outer(0.5 * cost.ru[t], np.eye(P)[-1]) for t in range(T)]
    QT1 = np.outer(0.5 * cost.qT, np.eye(P)[-1])
    K, F, _, _ = _affine_riccati(resp.A, resp.B, Dpi, cost.Qx, cost.Ru, cost.QT,
                                 zeros_n, [np.zeros((n, P))] * T, Q1, R1, QT1)
    return replace(strategy, K=np.zeros_like(K), Kp=K, L=np.zeros_like(strategy.L),
                   M=F[:, :, :-1], k=F[:, :, -1], bound=True, twin="matched")


def paired_riccati(strategy: SeparatedStrategy, resp: PlantResponse, twin: str = "matched") -> SeparatedStrategy:
    """Solve the penalized model problem on the joint (model, plant) state.

    With ``twin="matched"`` the model twin copies the plant's transition, so the
    penalty vanishes along every trajectory; ``"shared"`` feeds both systems the
    same input instead.
    """
    cost, model = strategy.cost, strategy.model_sys
    T, (m, n) = strategy.T, strategy.dims
    r = resp.D.shape[2]
    P = T * r + 1
    beta = cost.beta
    A2, B2, Dpi2, Q2, R1, Q12 = [], [], [], [], [], []
    I = np.eye(n)
    pen = beta * np.block([[I, -I], [-I, I]])
    for t in range(T):
        Dp = _response_pi(resp, t, n, r, T)
        if twin == "matched":
            A2.append(np.block([[np.zeros((n, n)), resp.A[t]], [np.zeros((n, n)), resp.A[t]]]))
            B2.append(np.vstack([resp.B[t], resp.B[t]]))
            Dpi2.append(np.vstack([Dp, Dp]))
        else:
            Dm = np.zeros((n, P))
            Dm[:, t * r:(t + 1) * r] = model.D[t]
            A2.append(np.block([[model.A[t], np.zeros((n, n))], [np.zeros((n, n)), resp.A[t]]]))
            B2.append(np.vstack([model.B[t], resp.B[t]]))
            Dpi2.append(np.vstack([Dm, Dp]))
        Q2.append(np.block([[cost.Qx[t], np.zeros((n, n))], [np.zeros((n, n)), np.zeros((n, n))]]))
        Q12.append(np.vstack([np.outer(0.5 * cost.qx[t], np.eye(P)[-1]), np.zeros((n, P))]))
        R1.append(np.outer(0.5 * cost.ru[t], np.eye(P)[-1]))
    QT2 = np.block([[cost.QT, np.zeros((n, n))], [np.zeros((n, n)), np.zeros((n, n))]])
    QT12 = np.vstack([np.outer(0.5 * cost.qT, np.eye(P)[-1]), np.zeros((n, P))])
    K, F, _, _ = _affine_riccati(A2, B2, Dpi2, Q2, cost.Ru, QT2, [pen] * T,
                                 [np.zeros((2 * n, P))] * T, Q12, R1, QT12)
    return replace(strategy, K=K[:, :, :n], Kp=K[:, :, n:], L=np.zeros_like(strategy.L),
                   M=F[:, :, :-1], k=F[:, :, -1], bound=True, twin=twin)


def bind_parameters(strategy: SeparatedStrategy,
                    params: Union[StrategyParameterization, PlantResponse, Sequence[GaussianBelief], np.ndarray],
                    x0_mean=None) -> SeparatedStrategy:
    """Substitute plant expectations into a parameterized strategy.

    Numeric expected plant states fill the slots directly. A ``PlantResponse``
    (known or learned conditional-mean dynamics) makes the slots functions of
    the applied control; the law is then re-derived with the penalty held at
    zero by the matched model twin.
    """
    if strategy.bound:
        raise AlreadyBound("strategy already bound")
    T, (m, n) = strategy.T, strategy.dims
    if isinstance(params, PlantResponse):
        if strategy.cost is None:
            raise ValueError("binding a plant response needs the strategy's cost")
        if params.A.shape[0] != T:
            raise LengthMismatch(f"response has {params.A.shape[0]} steps, strategy {T}")
        if strategy.kind == "matching":
            return _bind_response_matching(strategy, params)
        return paired_riccati(strategy, params, twin="matched")
    if not isinstance(params, StrategyParameterization):
        params = (StrategyParameterization.from_beliefs(params)
                  if len(params) and isinstance(params[0], GaussianBelief)
                  else StrategyParameterization(params))
    xh = params.xhat_means
    if xh.shape[0] != T + 1:
        raise LengthMismatch(f"need {T + 1} expected plant states, got {xh.shape[0]}")
    if xh.shape[1] != n:
        raise DimensionMismatch("xhat_means", (T + 1, n), xh.shape)
    if x0_mean is not None and not np.allclose(xh[0], x0_mean):
        raise ValueError("xhat[0] must equal the known initial mean")
    k = strategy.k + np.einsum("tij,j->ti", strategy.L, xh[1:].ravel())
    return replace(strategy, k=k, L=np.zeros_like(strategy.L), bound=True)


def model_lqg(model_sys: TimeVaryingLinearSystem, cost: QuadraticCostSpec) -> SeparatedStrategy:
    """Certainty-equivalent LQG designed on the model and fed the plant's belief."""
    s = solve_tracking_lq(model_sys, cost, beta=0.0)
    s = bind_parameters(s, np.zeros((s.T + 1, s.dims[1])))
    return replace(s, kind="model_lqg", K=np.zeros_like(s.K), Kp=s.K)


# Disturbance prediction ------------------------------------------------------------

@dataclass(frozen=True)
class DisturbancePredictor:
    """``what = gain @ y0 + offset`` = E[W_0..W_{T-1} | Y_0 = y0]."""

    gain: np.ndarray
    offset: np.ndarray

    def __call__(self, y0) -> np.ndarray:
        return self.offset + self.gain @ np.ravel(y0)


def disturbance_predictor(sys: TimeVaryingLinearSystem, noise: NoiseSpec) -> DisturbancePredictor:
    d = noise.dims
    N = d.n_primitives
    H = np.zeros((d.p, N))
    H[:, noise.x0_slice] = sys.C[0]
    H[:, noise.z_slice(0)] = sys.E[0]
    F = np.zeros((d.T * d.r, N))
    F[:, noise.w_block] = np.eye(d.T * d.r)
    offset = batch_gaussian_conditioning(noise, H, np.zeros(d.p), F).mean
    cols = [batch_gaussian_conditioning(noise, H, e, F).mean - offset for e in np.eye(d.p)]
    return DisturbancePredictor(np.array(cols).T.reshape(d.T * d.r, d.p), offset)


# Evaluation --------------------------------------------------------------------------

def evaluate_strategy(strategy: SeparatedStrategy, plant_sys, model_sys, noise, cost,
                      n_episodes: int, seed: int, workers: int = 1) -> CostReport:
    """Monte Carlo estimates of the plant cost and the penalized model cost."""
    from .sim import run_monte_carlo

    return run_monte_carlo(plant_sys, model_sys, strategy, noise, cost, n_episodes, seed,
                           workers=workers).cost


# Text export -------------------------------------------------------------------------

def _fmt(a) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(a))


def export_strategy(strategy: SeparatedStrategy) -> str:
    T, (m, n) = strategy.T, strategy.dims
    r = strategy.M.shape[2] // T
    lines = [
        "# seplearn separated strategy v1",
        f"kind {strategy.kind}",
        f"twin {strategy.twin}",
        f"bound {int(strategy.bound)}",
        f"dims T={T} m={m} n={n} r={r}",
    ]
    for t in range(T):
        lines.append(f"t {t}")
        lines.append("K " + _fmt(strategy.K[t]))
        lines.append("Kp " + _fmt(strategy.Kp[t]))
        # only the slots xhat[t+1..T] can carry weight at step t
        lines.append("L " + _fmt(strategy.L[t][:, t * n:]))
        lines.append("M " + _fmt(strategy.M[t]))
        lines.append("k " + _fmt(strategy.k[t]))
    return "\n".join(lines) + "\n"


def import_strategy(text: str) -> SeparatedStrategy:
    head, steps = {}, []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        if key == "t":
            steps.append({})
        elif key in ("K", "Kp", "L", "M", "k"):
            steps[-1][key] = np.array([float(v) for v in rest.split()]) if rest else np.zeros(0)
        elif key == "dims":
            head.update({k: int(v) for k, v in (kv.split("=") for kv in rest.split())})
        else:
            head[key] = rest
    T, m, n, r = head["T"], head["m"], head["n"], head["r"]
    K = np.zeros((T, m, n)); Kp = np.zeros((T, m, n)); L = np.zeros((T, m, T * n))
    M = np.zeros((T, m, T * r)); k = np.zeros((T, m))
    for t, st in enumerate(steps):
        K[t] = st["K"].reshape(m, n)
        Kp[t] = st["Kp"].reshape(m, n)
        L[t][:, t * n:] = st["L"].reshape(m, (T - t) * n)
        M[t] = st["M"].reshape(m, T * r)
        k[t] = st["k"]
    return SeparatedStrategy(kind=head["kind"], K=K, Kp=Kp, L=L, M=M, k=k,
                             bound=bool(int(head["bound"])), twin=head["twin"])
