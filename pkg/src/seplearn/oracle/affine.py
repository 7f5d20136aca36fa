"""Globally optimal affine strategies by the normal equations of the expected cost.

Controls are restricted to ``u[t] = Theta[t] @ basis[t] @ [1, xi]`` where ``xi``
is the primitive vector. States are then affine in ``[1, xi]`` with
coefficients linear in ``Theta``, so the expected quadratic cost is an exact
quadratic in ``Theta`` whose moments come from the primitive law in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DimensionMismatch, SingularNormalEquations
from ..lti import NoiseSpec, QuadraticCostSpec, TimeVaryingLinearSystem


@dataclass(frozen=True)
class AffineStrategyCoefficients:
    coef: tuple          # per t: (m, k_t)
    basis: tuple         # per t: (k_t, 1 + N) rows over [1, xi]
    labels: tuple = ()

    def control(self, t: int, xi) -> np.ndarray:
        a = np.concatenate([[1.0], np.asarray(xi, float)])
        return self.coef[t] @ self.basis[t] @ a

    def as_dict(self) -> dict:
        out = {}
        for t, (C, names) in enumerate(zip(self.coef, self.labels or [None] * len(self.coef))):
            names = names or [f"b{j}" for j in range(C.shape[1])]
            for i in range(C.shape[0]):
                for j, nm in enumerate(names):
                    key = f"u{t}" if C.shape[0] == 1 else f"u{t}[{i}]"
                    out[f"{key}.{nm}"] = float(C[i, j])
        return out


def basis_from_names(noise: NoiseSpec, names_per_step: Sequence[Sequence[str]]):
    """Build basis rows from names: ``"1"``, ``"x0"``/``"x0[i]"``, ``"w<t>"``/``"w<t>[i]"``, ``"z<t>[i]"``."""
    d = noise.dims
    N = d.n_primitives
    rows_all = []
    for names in names_per_step:
        rows = []
        for nm in names:
            row = np.zeros(1 + N)
            if nm == "1":
                row[0] = 1.0
            else:
                head, _, idx = nm.partition("[")
                i = int(idx.rstrip("]")) if idx else 0
                kind, step = head[0], head[1:]
                if kind == "x":
                    sl = noise.x0_slice
                elif kind == "w":
                    sl = noise.w_slice(int(step))
                elif kind == "z":
                    sl = noise.z_slice(int(step))
                else:
                    raise ValueError(f"unknown basis element {nm!r}")
                row[1 + sl.start + i] = 1.0
            rows.append(row)
        rows_all.append(np.array(rows))
    return rows_all


def _second_moment(noise: NoiseSpec):
    mu = noise.mean
    a_mean = np.concatenate([[1.0], mu])
    S2 = np.empty((mu.size + 1,) * 2)
    S2[0, 0] = 1.0
    S2[0, 1:] = S2[1:, 0] = mu
    S2[1:, 1:] = noise.cov + np.outer(mu, mu)
    return S2, a_mean


def _rollout(sys, noise, coefs, basis):
    d = noise.dims
    N1 = d.n_primitives + 1
    X = [np.zeros((d.n, N1))]
    X[0][:, 1 + noise.x0_slice.start: 1 + noise.x0_slice.stop] = np.eye(d.n)
    U = []
    for t in range(sys.T):
        Ut = coefs[t] @ basis[t]
        W = np.zeros((d.r, N1))
        sl = noise.w_slice(t)
        W[:, 1 + sl.start: 1 + sl.stop] = np.eye(d.r)
        U.append(Ut)
        X.append(sys.A[t] @ X[t] + sys.B[t] @ Ut + sys.D[t] @ W)
    return X, U


def affine_strategy_cost(sys: TimeVaryingLinearSystem, noise: NoiseSpec, cost: QuadraticCostSpec,
                         coefs, basis) -> float:
    """Exact expected cost of an affine strategy."""
    S2, a_mean = _second_moment(noise)
    X, U = _rollout(sys, noise, [np.atleast_2d(c) for c in coefs], basis)
    T = sys.T
    J = 0.0
    for t in range(T):
        J += np.trace(cost.Qx[t] @ X[t] @ S2 @ X[t].T) + np.trace(cost.Ru[t] @ U[t] @ S2 @ U[t].T)
        J += cost.qx[t] @ X[t] @ a_mean + cost.ru[t] @ U[t] @ a_mean
    J += np.trace(cost.QT @ X[T] @ S2 @ X[T].T) + cost.qT @ X[T] @ a_mean
    return float(J)


def exact_linear_strategy(sys: TimeVaryingLinearSystem, noise: NoiseSpec, cost: QuadraticCostSpec,
                          basis, labels=()):
    """Optimal coefficients over the declared affine basis, and the optimal expected cost."""
    T, m = sys.T, sys.B.shape[2]
    basis = [np.atleast_2d(np.asarray(b, float)) for b in basis]
    if len(basis) != T:
        raise DimensionMismatch("basis", T, len(basis))
    shapes = [(m, b.shape[0]) for b in basis]
    sizes = [a * b for a, b in shapes]
    P = sum(sizes)

    def unpack(theta):
        out, i = [], 0
        for shp, k in zip(shapes, sizes):
            out.append(theta[i:i + k].reshape(shp))
            i += k
        return out

    S2, a_mean = _second_moment(noise)
    X0, U0 = _rollout(sys, noise, unpack(np.zeros(P)), basis)
    dX, dU = [], []
    for i in range(P):
        e = np.zeros(P)
        e[i] = 1.0
        Xi, Ui = _rollout(sys, noise, unpack(e), basis)
        dX.append([a - b for a, b in zip(Xi, X0)])
        dU.append([a - b for a, b in zip(Ui, U0)])

    Qs = list(cost.Qx) + [cost.QT]
    qs = list(cost.qx) + [cost.qT]
    H = np.zeros((P, P))
    g = np.zeros(P)
    for i in range(P):
        for t in range(T + 1):
            g[i] += np.trace(Qs[t] @ dX[i][t] @ S2 @ X0[t].T) + 0.5 * qs[t] @ dX[i][t] @ a_mean
            if t < T:
                g[i] += np.trace(cost.Ru[t] @ dU[i][t] @ S2 @ U0[t].T) + 0.5 * cost.ru[t] @ dU[i][t] @ a_mean
        for j in range(i, P):
            h = sum(np.trace(Qs[t] @ dX[i][t] @ S2 @ dX[j][t].T) for t in range(T + 1))
            h += sum(np.trace(cost.Ru[t] @ dU[i][t] @ S2 @ dU[j][t].T) for t in range(T))
            H[i, j] = H[j, i] = h

    vals = np.linalg.eigvalsh(H)
    if vals.min() <= 1e-12 * max(1.0, vals.max()):
        raise SingularNormalEquations(f"normal equations singular (eigenvalues {vals.min():.3e}..{vals.max():.3e})")
    theta = np.linalg.solve(H, -g)
    coefs = unpack(theta)
    J = affine_strategy_cost(sys, noise, cost, coefs, basis)
    return AffineStrategyCoefficients(tuple(coefs), tuple(basis), tuple(labels)), J
