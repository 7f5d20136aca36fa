"""Exact conditioning of the joint primitive Gaussian on linear observations."""
from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch, SingularObservationCov
from ..estimator import GaussianBelief
from ..lti import NoiseSpec, TimeVaryingLinearSystem


def batch_gaussian_conditioning(noise: NoiseSpec, obs_map, obs_values, target_map=None,
                                obs_offset=None, target_offset=None, ridge: float = 1e-12) -> GaussianBelief:
    """Law of ``target_map @ xi + target_offset`` given ``obs_map @ xi + obs_offset = obs_values``.

    ``xi`` is the primitive vector. Uses the Schur complement of the joint
    covariance; a singular observation covariance is handled with a
    ridge-regularized pseudo-inverse.
    """
    mu, Sigma = noise.mean, noise.cov
    N = mu.size
    H = np.atleast_2d(np.asarray(obs_map, float))
    if H.shape[1] != N:
        raise DimensionMismatch("obs_map", ("k", N), H.shape)
    F = np.eye(N) if target_map is None else np.atleast_2d(np.asarray(target_map, float))
    if F.shape[1] != N:
        raise DimensionMismatch("target_map", ("k", N), F.shape)
    y = np.atleast_1d(np.asarray(obs_values, float))
    h = np.zeros(H.shape[0]) if obs_offset is None else np.asarray(obs_offset, float)
    f = np.zeros(F.shape[0]) if target_offset is None else np.asarray(target_offset, float)

    S = H @ Sigma @ H.T
    S = 0.5 * (S + S.T)
    vals = np.linalg.eigvalsh(S)
    scale = max(1.0, np.abs(vals).max(initial=0.0))
    if vals.min(initial=0.0) < -1e-9 * scale:
        raise SingularObservationCov(f"observation covariance indefinite ({vals.min():.3e})")
    if vals.min(initial=1.0) <= ridge * scale:
        S_inv = np.linalg.pinv(S + ridge * np.eye(S.shape[0]), rcond=1e-10)
    else:
        S_inv = np.linalg.inv(S)
    cross = F @ Sigma @ H.T
    gain = cross @ S_inv
    mean = F @ mu + f + gain @ (y - H @ mu - h)
    cov = F @ Sigma @ F.T - gain @ cross.T
    return GaussianBelief(mean, 0.5 * (cov + cov.T))


def state_maps(sys: TimeVaryingLinearSystem, noise: NoiseSpec, u):
    """Express states and outputs as affine maps of the primitives under fixed controls.

    Returns ``(Phi, c, Psi, d)`` with ``x[t] = Phi[t] @ xi + c[t]`` and
    ``y[t] = Psi[t] @ xi + d[t]``.
    """
    dims = noise.dims
    N, T, n = dims.n_primitives, sys.T, dims.n
    u = np.asarray(u, float).reshape(T, dims.m)
    Phi = np.zeros((T + 1, n, N))
    c = np.zeros((T + 1, n))
    Phi[0][:, noise.x0_slice] = np.eye(n)
    for t in range(T):
        Wsel = np.zeros((dims.r, N))
        Wsel[:, noise.w_slice(t)] = np.eye(dims.r)
        Phi[t + 1] = sys.A[t] @ Phi[t] + sys.D[t] @ Wsel
        c[t + 1] = sys.A[t] @ c[t] + sys.B[t] @ u[t]
    Psi = np.zeros((T + 1, dims.p, N))
    d = np.zeros((T + 1, dims.p))
    for t in range(T + 1):
        Zsel = np.zeros((dims.s, N))
        Zsel[:, noise.z_slice(t)] = np.eye(dims.s)
        Psi[t] = sys.C[t] @ Phi[t] + sys.E[t] @ Zsel
        d[t] = sys.C[t] @ c[t]
    return Phi, c, Psi, d


def batch_state_belief(sys: TimeVaryingLinearSystem, noise: NoiseSpec, u, y, t: int) -> GaussianBelief:
    """Belief of x[t] given y[0:t+1] under fixed controls, by one batch conditioning."""
    Phi, c, Psi, d = state_maps(sys, noise, u)
    H = Psi[: t + 1].reshape(-1, noise.dims.n_primitives)
    h = d[: t + 1].ravel()
    y = np.asarray(y, float)[: t + 1].ravel()
    return batch_gaussian_conditioning(noise, H, y, Phi[t], obs_offset=h, target_offset=c[t])
