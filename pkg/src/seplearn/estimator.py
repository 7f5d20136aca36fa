"""Information-state estimation: Kalman beliefs for model and plant, a running
density of plant output trajectories, the cross-episode mixture of plant
beliefs, and a recursive least-squares fit of the plant's conditional-mean
response to the applied controls.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, EmptyDensity, IndexOutOfHorizon, NumericalFailure
from .lti import NoiseSpec, TimeVaryingLinearSystem

RIDGE = 1e-12


def _clean_cov(P: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    P = 0.5 * (P + P.T)
    vals, vecs = np.linalg.eigh(P)
    if vals.min(initial=0.0) < -tol * max(1.0, np.abs(vals).max(initial=0.0)):
        raise NumericalFailure(f"covariance indefinite (min eigenvalue {vals.min():.3e})")
    if vals.min(initial=0.0) < 0:
        P = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    return P


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch("belief.cov", (mean.size, mean.size), cov.shape)
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-10:
            raise ValueError("belief covariance not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", _clean_cov(cov))


# Kalman filter ----------------------------------------------------------------

def _innovation_inverse(S: np.ndarray) -> np.ndarray:
    S = 0.5 * (S + S.T)
    vals = np.linalg.eigvalsh(S)
    scale = max(1.0, np.abs(vals).max(initial=0.0))
    if vals.min() < -1e-9 * scale:
        raise NumericalFailure(f"innovation covariance indefinite (min eigenvalue {vals.min():.3e})")
    if vals.min() <= RIDGE * scale:
        return np.linalg.pinv(S + RIDGE * np.eye(S.shape[0]))
    return np.linalg.inv(S)


def _measure(mean, cov, C, E, z_mean, z_cov, y):
    R = E @ z_cov @ E.T
    n = cov.shape[0]
    if not np.any(R) and np.linalg.matrix_rank(C) == n:
        # noise-free output determines the state whatever the prediction says
        K = np.linalg.pinv(C)
    else:
        S = C @ cov @ C.T + R
        K = cov @ C.T @ _innovation_inverse(S)
    I_KC = np.eye(cov.shape[0]) - K @ C
    new_mean = mean + K @ (y - C @ mean - E @ z_mean)
    # Joseph form keeps the update PSD
    new_cov = I_KC @ cov @ I_KC.T + K @ R @ K.T
    return new_mean, _clean_cov(new_cov), K


def kalman_init(sys: TimeVaryingLinearSystem, noise: NoiseSpec, y0) -> GaussianBelief:
    """Condition the X0 prior on the first observation."""
    mu, P = noise.marginal(noise.x0_slice)
    zm, zc = noise.marginal(noise.z_slice(0))
    mean, cov, _ = _measure(mu, P, sys.C[0], sys.E[0], zm, zc, np.atleast_1d(y0))
    return GaussianBelief(mean, cov)


def kalman_step(sys: TimeVaryingLinearSystem, noise: NoiseSpec, belief: GaussianBelief,
                t: int, u, y_next) -> GaussianBelief:
    """Predict through step ``t`` of ``sys`` and update with the output at ``t+1``.

    The disturbance enters with its marginal law at step ``t``; cross-covariance
    between blocks of the primitive law is not propagated.
    """
    if not 0 <= t < sys.T:
        raise IndexOutOfHorizon(f"kalman_step at t={t}, horizon {sys.T}")
    n, m, p = sys.A.shape[1], sys.B.shape[2], sys.C.shape[1]
    u = np.atleast_1d(np.asarray(u, float))
    y_next = np.atleast_1d(np.asarray(y_next, float))
    if belief.mean.shape != (n,):
        raise DimensionMismatch("belief.mean", (n,), belief.mean.shape)
    if u.shape != (m,):
        raise DimensionMismatch("u", (m,), u.shape)
    if y_next.shape != (p,):
        raise DimensionMismatch("y_next", (p,), y_next.shape)
    wm, wc = noise.marginal(noise.w_slice(t))
    A, B, D = sys.A[t], sys.B[t], sys.D[t]
    pred_mean = A @ belief.mean + B @ u + D @ wm
    pred_cov = A @ belief.cov @ A.T + D @ wc @ D.T
    zm, zc = noise.marginal(noise.z_slice(t + 1))
    mean, cov, _ = _measure(pred_mean, pred_cov, sys.C[t + 1], sys.E[t + 1], zm, zc, y_next)
    return GaussianBelief(mean, cov)


@dataclass(frozen=True)
class FilterGains:
    """Data-independent part of a Kalman pass.

    The mean recursion is affine:
    ``m[t+1] = (I - G[t+1] C) (A m + B u + D mu_w) + G[t+1] (y - E mu_z)``.
    """

    G: np.ndarray        # (T+1, n, p) measurement gains
    cov: np.ndarray      # (T+1, n, n) posterior covariances
    w_mean: np.ndarray   # (T, r)
    z_mean: np.ndarray   # (T+1, s)
    x0_mean: np.ndarray


def filter_gains(sys: TimeVaryingLinearSystem, noise: NoiseSpec) -> FilterGains:
    d = noise.dims
    T = sys.T
    G = np.zeros((T + 1, d.n, d.p))
    covs = np.zeros((T + 1, d.n, d.n))
    mu, P = noise.marginal(noise.x0_slice)
    zm, zc = noise.marginal(noise.z_slice(0))
    _, P, G[0] = _measure(mu, P, sys.C[0], sys.E[0], zm, zc, np.zeros(d.p))
    covs[0] = P
    for t in range(T):
        _, wc = noise.marginal(noise.w_slice(t))
        Pp = sys.A[t] @ P @ sys.A[t].T + sys.D[t] @ wc @ sys.D[t].T
        zm, zc = noise.marginal(noise.z_slice(t + 1))
        _, P, G[t + 1] = _measure(np.zeros(d.n), Pp, sys.C[t + 1], sys.E[t + 1], zm, zc, np.zeros(d.p))
        covs[t + 1] = P
    w_mean = noise.mean[noise.w_block].reshape(T, d.r)
    z_mean = np.stack([noise.marginal(noise.z_slice(t))[0] for t in range(T + 1)])
    return FilterGains(G, covs, w_mean, z_mean, noise.mean[noise.x0_slice].copy())


# Output-trajectory density ------------------------------------------------------

@dataclass(frozen=True)
class OutputDensityEstimate:
    """Running mean/covariance of stacked plant outputs ``yhat[0:step+1]``.

    ``key`` tags the control-prefix bin the estimate is conditioned on; the
    default key ``None`` pools all prefixes.
    """

    p: int
    step: int
    count: int = 0
    mean: Optional[np.ndarray] = None
    m2: Optional[np.ndarray] = None
    key: Optional[tuple] = None

    def __post_init__(self):
        size = self.p * (self.step + 1)
        if self.mean is None:
            object.__setattr__(self, "mean", np.zeros(size))
            object.__setattr__(self, "m2", np.zeros((size, size)))

    @property
    def size(self) -> int:
        return self.p * (self.step + 1)

    @property
    def cov(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.m2)
        return self.m2 / (self.count - 1)

    def prefix(self, t: int) -> "OutputDensityEstimate":
        """Marginal over ``yhat[0:t+1]``."""
        if not 0 <= t <= self.step:
            raise IndexOutOfHorizon(f"prefix {t} beyond step {self.step}")
        k = self.p * (t + 1)
        return replace(self, step=t, mean=self.mean[:k].copy(), m2=self.m2[:k, :k].copy())

    def merge(self, other: "OutputDensityEstimate") -> "OutputDensityEstimate":
        """Combine two disjoint sample sets (pairwise update)."""
        if other.size != self.size:
            raise DimensionMismatch("density merge", self.size, other.size)
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + np.outer(delta, delta) * (self.count * other.count / n)
        return replace(self, count=n, mean=mean, m2=m2)

    @classmethod
    def from_samples(cls, samples: np.ndarray, p: int, key=None) -> "OutputDensityEstimate":
        samples = np.asarray(samples, float)
        step = samples.shape[1] // p - 1
        if samples.shape[0] == 0:
            return cls(p=p, step=step, key=key)
        mean = samples.mean(axis=0)
        dev = samples - mean
        return cls(p=p, step=step, count=samples.shape[0], mean=mean, m2=dev.T @ dev, key=key)


def learn_output_density(est: OutputDensityEstimate, yhat_traj, u_prefix=None) -> OutputDensityEstimate:
    """Welford update with one stacked output trajectory.

    ``u_prefix`` is only checked against the estimate's conditioning key when the
    estimate is keyed (binned mode).
    """
    v = np.asarray(yhat_traj, float).ravel()
    if v.size != est.size:
        raise DimensionMismatch("yhat_traj", est.size, v.size)
    if est.key is not None and u_prefix is not None and control_key(u_prefix, est.key[0]) != est.key:
        raise ValueError("control prefix does not belong to this estimate's bin")
    count = est.count + 1
    delta = v - est.mean
    mean = est.mean + delta / count
    m2 = est.m2 + np.outer(delta, v - mean)
    return replace(est, count=count, mean=mean, m2=0.5 * (m2 + m2.T))


def control_key(u_prefix, bin_width: float) -> tuple:
    """Discretization tag of a control prefix (binned diagnostic mode)."""
    u = np.asarray(u_prefix, float).ravel()
    return (float(bin_width),) + tuple(int(v) for v in np.floor(u / bin_width + 0.5))


# Cross-episode mixture of plant beliefs ------------------------------------------

@dataclass(frozen=True)
class BeliefMixture:
    """Equally weighted mixture of episode-conditioned plant beliefs at one step."""

    n: int
    count: int = 0
    mean: Optional[np.ndarray] = None        # mean of component means
    m2: Optional[np.ndarray] = None          # scatter of component means
    cov_sum: Optional[np.ndarray] = None     # sum of component covariances

    def __post_init__(self):
        if self.mean is None:
            object.__setattr__(self, "mean", np.zeros(self.n))
            object.__setattr__(self, "m2", np.zeros((self.n, self.n)))
            object.__setattr__(self, "cov_sum", np.zeros((self.n, self.n)))

    def absorb(self, belief: GaussianBelief) -> "BeliefMixture":
        count = self.count + 1
        delta = belief.mean - self.mean
        mean = self.mean + delta / count
        m2 = self.m2 + np.outer(delta, belief.mean - mean)
        return replace(self, count=count, mean=mean, m2=0.5 * (m2 + m2.T), cov_sum=self.cov_sum + belief.cov)

    def absorb_batch(self, means: np.ndarray, cov: np.ndarray) -> "BeliefMixture":
        """Absorb many components sharing one covariance (filter covariances are data-free)."""
        means = np.atleast_2d(means)
        k = means.shape[0]
        if k == 0:
            return self
        bm = means.mean(axis=0)
        dev = means - bm
        other = BeliefMixture(self.n, k, bm, dev.T @ dev, k * np.asarray(cov))
        return self.merge(other)

    def merge(self, other: "BeliefMixture") -> "BeliefMixture":
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + np.outer(delta, delta) * (self.count * other.count / n)
        return BeliefMixture(self.n, n, mean, m2, self.cov_sum + other.cov_sum)

    def collapse(self) -> GaussianBelief:
        """Moment-matched Gaussian: E[cov] + Cov[mean]."""
        if self.count == 0:
            raise EmptyDensity("no components absorbed")
        return GaussianBelief(self.mean, self.cov_sum / self.count + self.m2 / self.count)


# Plant response regression ------------------------------------------------------

@dataclass
class ResponseRegressor:
    """Recursive least squares for ``m[t+1] ~ Ah m[t] + Bh u[t] + Dh w[t] + c``.

    Kept in information form (``info = P^-1``) so batches and single samples
    update the same statistics. ``prior`` is the ridge on the initial information.
    """

    n_features: int
    n_targets: int
    prior: float = 1e-9
    info: np.ndarray = field(default=None)
    xty: np.ndarray = field(default=None)
    yty: np.ndarray = field(default=None)
    count: int = 0

    def __post_init__(self):
        if self.info is None:
            self.info = self.prior * np.eye(self.n_features)
            self.xty = np.zeros((self.n_features, self.n_targets))
            self.yty = np.zeros((self.n_targets, self.n_targets))

    def update(self, phi, target) -> None:
        phi = np.asarray(phi, float).ravel()
        target = np.asarray(target, float).ravel()
        self.info += np.outer(phi, phi)
        self.xty += np.outer(phi, target)
        self.yty += np.outer(target, target)
        self.count += 1

    def update_batch(self, Phi: np.ndarray, Y: np.ndarray) -> None:
        self.info += Phi.T @ Phi
        self.xty += Phi.T @ Y
        self.yty += Y.T @ Y
        self.count += Phi.shape[0]

    def merge(self, other: "ResponseRegressor") -> None:
        self.info += other.info - other.prior * np.eye(self.n_features)
        self.xty += other.xty
        self.yty += other.yty
        self.count += other.count

    @property
    def coef(self) -> np.ndarray:
        """(n_features, n_targets) least-squares coefficients."""
        return np.linalg.solve(self.info, self.xty)

    def residual_variance(self) -> np.ndarray:
        theta = self.coef
        rss = self.yty - theta.T @ self.xty - self.xty.T @ theta + theta.T @ self.info @ theta
        dof = max(self.count - self.n_features, 1)
        return np.clip(np.diag(rss), 0.0, None) / dof


# Information state --------------------------------------------------------------

@dataclass(frozen=True)
class InformationState:
    """Factored information state at step ``t``.

    ``density`` is the cross-episode output-trajectory estimate over the whole
    horizon and ``mixtures`` the per-step plant-belief mixtures; both are
    snapshots owned by the caller and only read here.
    """

    model_belief: GaussianBelief
    plant_belief: GaussianBelief
    t: int
    T: int
    noise: NoiseSpec
    yhat: tuple = ()
    density: Optional[OutputDensityEstimate] = None
    mixtures: Optional[tuple] = None
    prior: Optional[GaussianBelief] = None

    def __post_init__(self):
        if self.model_belief.mean.shape != self.plant_belief.mean.shape:
            raise DimensionMismatch("beliefs", self.model_belief.mean.shape, self.plant_belief.mean.shape)
        if not 0 <= self.t <= self.T:
            raise IndexOutOfHorizon(f"t={self.t} outside [0, {self.T}]")

    @property
    def output_density(self) -> Optional[OutputDensityEstimate]:
        return None if self.density is None else self.density.prefix(self.t)


def initial_information_state(model_sys: TimeVaryingLinearSystem, noise: NoiseSpec, y0, yhat0,
                              plant_belief_sys: Optional[TimeVaryingLinearSystem] = None,
                              density=None, mixtures=None, prior=None) -> InformationState:
    # the plant shares X0, so its prior is the model's X0 prior
    plant_belief_sys = plant_belief_sys or model_sys
    return InformationState(
        model_belief=kalman_init(model_sys, noise, y0),
        plant_belief=kalman_init(plant_belief_sys, noise, yhat0),
        t=0, T=model_sys.T, noise=noise,
        yhat=(np.atleast_1d(np.asarray(yhat0, float)),),
        density=density, mixtures=mixtures, prior=prior,
    )


def info_state_update(pi: InformationState, y_next, yhat_next, u,
                      model_sys: TimeVaryingLinearSystem,
                      plant_belief_sys: Optional[TimeVaryingLinearSystem] = None,
                      u_model=None) -> InformationState:
    """Advance the information state by one step.

    Depends only on the current state, the new outputs and the realized
    controls; no strategy enters. ``u_model`` is the input the model twin
    received when it differs from the applied control.
    """
    if pi.t >= pi.T:
        raise IndexOutOfHorizon(f"information state already at horizon {pi.T}")
    plant_belief_sys = plant_belief_sys or model_sys
    u_model = u if u_model is None else u_model
    model_belief = kalman_step(model_sys, pi.noise, pi.model_belief, pi.t, u_model, y_next)
    plant_belief = kalman_step(plant_belief_sys, pi.noise, pi.plant_belief, pi.t, u, yhat_next)
    return replace(pi, model_belief=model_belief, plant_belief=plant_belief, t=pi.t + 1,
                   yhat=pi.yhat + (np.atleast_1d(np.asarray(yhat_next, float)),))


def factorize(pi: InformationState):
    """Return ``(model_belief, plant_marginal)``.

    The plant marginal averages the episode-conditioned plant beliefs over the
    learned output distribution and collapses the mixture to its first two
    moments. The joint belief is the product of the two factors.
    """
    mix = None if pi.mixtures is None else pi.mixtures[pi.t]
    if mix is None or mix.count == 0:
        if pi.prior is None:
            raise EmptyDensity("no output trajectories absorbed and no prior configured")
        return pi.model_belief, pi.prior
    return pi.model_belief, mix.collapse()
