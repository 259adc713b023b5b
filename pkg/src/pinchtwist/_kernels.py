"""Compiled inner loops for frame transport along long orbits.

Both kernels push an orthonormal ``d x k`` frame through a stack of
matrices and re-orthonormalise with Gram-Schmidt (two passes), which
leaves a positive diagonal in the triangular factor.
"""

import numba
import numpy as np

OVERFLOW = 1e300


@numba.njit(cache=True, nogil=True)
def _orthonormalise(P, R):
    d, k = P.shape
    for j in range(k):
        for _ in range(2):
            for i in range(j):
                c = 0.0
                for r in range(d):
                    c += P[r, i] * P[r, j]
                R[i, j] += c
                for r in range(d):
                    P[r, j] -= c * P[r, i]
        nrm = 0.0
        for r in range(d):
            nrm += P[r, j] * P[r, j]
        nrm = np.sqrt(nrm)
        R[j, j] = nrm
        if nrm == 0.0:
            return False
        for r in range(d):
            P[r, j] /= nrm
    return True


@numba.njit(cache=True, nogil=True)
def qr_log_accumulate(Q, mats, renorm):
    """Push ``Q`` through ``mats`` re-factoring every ``renorm`` steps.

    Returns ``(Q_end, logs, status)`` where ``logs[b]`` holds the log
    diagonal of the triangular factor of block ``b``; status 0 = ok,
    1 = overflow, 2 = singular frame.
    """
    n, d, _ = mats.shape
    k = Q.shape[1]
    nblocks = (n + renorm - 1) // renorm
    logs = np.zeros((nblocks, k))
    P = Q.copy()
    tmp = np.empty_like(P)
    for b in range(nblocks):
        start = b * renorm
        stop = min(n, start + renorm)
        for s in range(start, stop):
            A = mats[s]
            for r in range(d):
                for c in range(k):
                    acc = 0.0
                    for m in range(d):
                        acc += A[r, m] * P[m, c]
                    tmp[r, c] = acc
            big = 0.0
            for r in range(d):
                for c in range(k):
                    P[r, c] = tmp[r, c]
                    if abs(tmp[r, c]) > big:
                        big = abs(tmp[r, c])
            if not big < OVERFLOW:
                return P, logs[:b], 1
        R = np.zeros((k, k))
        if not _orthonormalise(P, R):
            return P, logs[:b], 2
        for j in range(k):
            logs[b, j] = np.log(R[j, j])
    return P, logs, 0


@numba.njit(cache=True, nogil=True)
def frame_transport(Q, mats):
    """One-step transport returning every triangular factor."""
    n, d, _ = mats.shape
    k = Q.shape[1]
    Rs = np.zeros((n, k, k))
    P = Q.copy()
    tmp = np.empty_like(P)
    for s in range(n):
        A = mats[s]
        for r in range(d):
            for c in range(k):
                acc = 0.0
                for m in range(d):
                    acc += A[r, m] * P[m, c]
                tmp[r, c] = acc
        P[:, :] = tmp
        if not _orthonormalise(P, Rs[s]):
            return P, Rs[:s], 2
    return P, Rs, 0


# --- torus maps -----------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _bump(t):
    s = 1.0 - t * t
    return s * s * s, -6.0 * t * s * s


@numba.njit(cache=True, nogil=True)
def twist_apply(x, D, centers, planes, thetas, radii, sign):
    """Apply the local rotations in place; accumulate ``Dh @ D`` into ``D``.

    ``sign=-1`` applies the inverse twist.  Supports are assumed disjoint.
    """
    d = x.shape[0]
    delta = np.empty(d)
    for j in range(centers.shape[0]):
        r2 = 0.0
        for i in range(d):
            v = x[i] - centers[j, i]
            v -= np.floor(v + 0.5)
            delta[i] = v
            r2 += v * v
        rad = radii[j]
        if r2 >= rad * rad:
            continue
        r = np.sqrt(r2)
        t = r / rad
        rho, drho = _bump(t)
        phi = sign * thetas[j] * rho
        c, s = np.cos(phi), np.sin(phi)
        P = planes[j]
        u0 = 0.0
        u1 = 0.0
        for i in range(d):
            u0 += P[i, 0] * delta[i]
            u1 += P[i, 1] * delta[i]
        # displacement P (R - I) u
        w0 = (c - 1.0) * u0 - s * u1
        w1 = s * u0 + (c - 1.0) * u1
        # Dh = I + P (R - I) P^T + P R' u grad(phi)^T
        du0 = -s * u0 - c * u1
        du1 = c * u0 - s * u1
        g = 0.0
        if r > 0.0:
            g = sign * thetas[j] * drho / (rad * r)
        Dh = np.zeros((d, d))
        for a in range(d):
            Dh[a, a] = 1.0
            for b in range(d):
                Dh[a, b] += (P[a, 0] * ((c - 1.0) * P[b, 0] - s * P[b, 1])
                             + P[a, 1] * (s * P[b, 0] + (c - 1.0) * P[b, 1]))
                Dh[a, b] += (P[a, 0] * du0 + P[a, 1] * du1) * g * delta[b]
        for i in range(d):
            x[i] += P[i, 0] * w0 + P[i, 1] * w1
        D[:, :] = Dh @ D


@numba.njit(cache=True, nogil=True)
def perturbed_linear_orbit(A, x0, n, centers, planes, thetas, radii):
    """Orbit of ``A o h`` (mod 1) with derivatives at each point."""
    d = x0.shape[0]
    mats = np.empty((n, d, d))
    x = x0.copy()
    D = np.empty((d, d))
    for s in range(n):
        for a in range(d):
            for b in range(d):
                D[a, b] = 1.0 if a == b else 0.0
        twist_apply(x, D, centers, planes, thetas, radii, 1.0)
        mats[s] = A @ D
        y = A @ x
        for i in range(d):
            x[i] = y[i] - np.floor(y[i])
    return mats, x


@numba.njit(cache=True, nogil=True)
def standard_orbit(x0, lam, n):
    mats = np.empty((n, 2, 2))
    z, w = x0[0], x0[1]
    tau = 2.0 * np.pi
    for s in range(n):
        a = z + w
        c = lam * tau * np.cos(tau * a)
        mats[s, 0, 0] = 1.0
        mats[s, 0, 1] = 1.0
        mats[s, 1, 0] = c
        mats[s, 1, 1] = 1.0 + c
        w = w + lam * np.sin(tau * a)
        z = a - np.floor(a)
        w = w - np.floor(w)
    out = np.empty(2)
    out[0] = z
    out[1] = w
    return mats, out


# --- symbolic dynamics ----------------------------------------------------

@numba.njit(cache=True, nogil=True)
def markov_chain(cum, u, s0):
    """Inverse-CDF Markov chain: ``cum[i]`` is the cumulative row ``i``."""
    n = u.shape[0]
    out = np.empty(n, dtype=np.int64)
    s = s0
    out[0] = s
    m = cum.shape[1]
    for t in range(1, n):
        j = 0
        while j < m - 1 and u[t] >= cum[s, j]:
            j += 1
        s = j
        out[t] = s
    return out
