"""Pure-numpy kernels, vectorized over episodes. Reference for the compiled twin."""
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_PI = 6.283185307179586


def _mix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _uniform(seed, streams, counters):
    key = _mix(_mix(np.uint64(seed)) ^ streams[:, None])
    bits = _mix(key ^ counters[None, :])
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def normals(seed: int, stream0: int, count: int, width: int) -> np.ndarray:
    """Standard normals for streams ``stream0 .. stream0+count-1``, ``width`` per stream.

    Draw j of stream e depends only on (seed, e, j): counter-based, so any
    chunking of the streams reproduces the same numbers.
    """
    with np.errstate(over="ignore"):
        streams = np.arange(stream0, stream0 + count, dtype=np.uint64)
        j = np.arange(width, dtype=np.uint64)
        u1 = _uniform(seed & 0xFFFFFFFFFFFFFFFF, streams, np.uint64(2) * j)
        u2 = _uniform(seed & 0xFFFFFFFFFFFFFFFF, streams, np.uint64(2) * j + np.uint64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def _mv(M, v):
    # (rows, cols) or per-episode batch of vectors (Ne, cols)
    return v @ M.T


def rollout(prims, dither, n, m, p, r, s, T,
            A, B, D, C, E, Ah, Bh, Dh, Af, Bf, Df, cf,
            Gm, Gp, x0_mean, w_mean, z_mean,
            K, Kp, M, k, Wg, Wo, matched, Bpinv):
    Ne = prims.shape[0]
    x = np.empty((Ne, T + 1, n)); xh = np.empty((Ne, T + 1, n))
    y = np.empty((Ne, T + 1, p)); yh = np.empty((Ne, T + 1, p))
    u = np.empty((Ne, T, m)); um = np.empty((Ne, T, m))
    mm = np.empty((Ne, T + 1, n)); mp = np.empty((Ne, T + 1, n))

    x0 = prims[:, :n]
    w = prims[:, n:n + T * r].reshape(Ne, T, r)
    z = prims[:, n + T * r:].reshape(Ne, T + 1, s)

    x[:, 0] = x0
    xh[:, 0] = x0
    y[:, 0] = _mv(C[0], x0) + _mv(E[0], z[:, 0])
    yh[:, 0] = y[:, 0]
    corr = y[:, 0] - C[0] @ x0_mean - E[0] @ z_mean[0]
    mm[:, 0] = x0_mean + _mv(Gm[0], corr)
    mp[:, 0] = x0_mean + _mv(Gp[0], corr)
    what = Wo + _mv(Wg, y[:, 0])

    for t in range(T):
        ut = _mv(K[t], mm[:, t]) + _mv(Kp[t], mp[:, t]) + _mv(M[t], what) + k[t] + dither[:, t]
        u[:, t] = ut
        xh[:, t + 1] = _mv(Ah[t], xh[:, t]) + _mv(Bh[t], ut) + _mv(Dh[t], w[:, t])
        yh[:, t + 1] = _mv(C[t + 1], xh[:, t + 1]) + _mv(E[t + 1], z[:, t + 1])
        pred = _mv(Af[t], mp[:, t]) + _mv(Bf[t], ut) + Df[t] @ w_mean[t] + cf[t]
        mp[:, t + 1] = pred + _mv(Gp[t + 1], yh[:, t + 1] - _mv(C[t + 1], pred) - E[t + 1] @ z_mean[t + 1])
        if matched:
            umt = _mv(Bpinv[t], mp[:, t + 1] - _mv(A[t], x[:, t]) - _mv(D[t], w[:, t]))
        else:
            umt = ut
        um[:, t] = umt
        x[:, t + 1] = _mv(A[t], x[:, t]) + _mv(B[t], umt) + _mv(D[t], w[:, t])
        y[:, t + 1] = _mv(C[t + 1], x[:, t + 1]) + _mv(E[t + 1], z[:, t + 1])
        pred = _mv(A[t], mm[:, t]) + _mv(B[t], umt) + D[t] @ w_mean[t]
        mm[:, t + 1] = pred + _mv(Gm[t + 1], y[:, t + 1] - _mv(C[t + 1], pred) - E[t + 1] @ z_mean[t + 1])
    return x, xh, y, yh, u, um, mm, mp
