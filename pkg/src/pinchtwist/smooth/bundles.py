"""Invariant subbundles of the tangent bundle and cocycles restricted to them.

A bundle that attracts under forward push of a map ``phi`` (``E^uu``
under ``f``, ``E^ss`` under ``f^{-1}``) is estimated at ``x`` by pushing
a fixed generic frame along ``phi`` from ``phi^{-N} x``.  Fixing the
starting frame makes the frame a deterministic function of the point.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .. import _kernels
from ..cocycle import CocycleSystem, random_frame
from ..errors import NoConvergence
from .maps import TorusMap, derivative_cocycle

FRAME_SEED = 20240917
BUNDLE_STEPS = 100
RESIDUAL_TOL = 1e-6


@dataclass(frozen=True)
class BundleFrame:
    x: np.ndarray
    frame: np.ndarray
    convergence_residual: float


def _orthonormal(M):
    Q, R = np.linalg.qr(M)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


def _backward_points(phi: TorusMap, x, n):
    """``phi^{-n} x, ..., phi^{-1} x`` in forward order."""
    pts = np.empty((n, phi.dim))
    y = np.mod(np.asarray(x, dtype=float), 1.0)
    for i in range(n - 1, -1, -1):
        y = phi.inverse_step(y)
        pts[i] = y
    return pts


def push_frame(phi: TorusMap, x, k, N, *, seed=FRAME_SEED):
    """Frame at ``x`` from the fixed generic frame pushed ``N`` steps.

    Returns ``(frame, residual)``; the residual is the sine of the largest
    principal angle between the result and the same push started one step
    later.
    """
    d = phi.dim
    Q0 = random_frame(d, k, seed)
    if k == d:
        return np.eye(d), 0.0
    pts = _backward_points(phi, x, N)
    Q, Q1 = Q0.copy(), Q0.copy()  # Q1 starts one step later
    for i, y in enumerate(pts):
        D = phi.derivative(y)
        Q = _orthonormal(D @ Q)
        if i > 0:
            Q1 = _orthonormal(D @ Q1)
    # sine of the largest principal angle; arccos would lose half the digits
    res = float(np.linalg.norm(Q1 - Q @ (Q.T @ Q1), 2))
    return Q, res


def estimate_unstable_bundle(f: TorusMap, x, k, N=BUNDLE_STEPS, *, side="uu",
                             tol=RESIDUAL_TOL) -> BundleFrame:
    """Estimate ``E^uu`` (or ``E^ss`` with ``side="ss"``) of dimension ``k`` at ``x``."""
    phi = f if side == "uu" else f.inverse()
    frame, res = push_frame(phi, x, k, N)
    if not res <= tol:
        raise NoConvergence(f"bundle residual {res:.3e} after {N} steps")
    return BundleFrame(np.mod(np.asarray(x, dtype=float), 1.0), frame, res)


def frame_function(phi: TorusMap, k, N, tol=RESIDUAL_TOL, cache_size=8192):
    """Cached ``x -> frame`` for the ``k``-bundle attracting under ``phi``."""

    @lru_cache(maxsize=cache_size)
    def _cached(key):
        x = np.frombuffer(key, dtype=float)
        frame, res = push_frame(phi, x, k, N)
        if not res <= tol:
            raise NoConvergence(f"bundle residual {res:.3e} after {N} steps")
        frame.setflags(write=False)
        return frame

    def frame(x):
        return _cached(np.mod(np.asarray(x, dtype=float), 1.0).tobytes())

    return frame


def _restricted(base: TorusMap, attract: TorusMap, frame, k, meta):
    def generator(x):
        return frame(base.step(x)).T @ base.derivative(x) @ frame(x)

    block = None
    if attract is base:
        def block(x, n):
            mats, x_end = base.orbit_derivatives(np.asarray(x, dtype=float), n)
            _, Rs, status = _kernels.frame_transport(np.array(frame(x)),
                                                     np.ascontiguousarray(mats))
            if status != 0:
                raise NoConvergence("restricted frame collapsed along the orbit")
            return Rs, x_end

    def inverse_factory():
        return _restricted(base.inverse(), attract, frame, k,
                           {**meta, "map": base.inverse(),
                            "direction": -meta["direction"]})

    return CocycleSystem(k, base, generator, 1.0, block=block, frame=frame,
                         inverse_factory=inverse_factory,
                         name=f"D|E^{meta['side']}", meta=meta)


def restricted_cocycle(f: TorusMap, side="uu", k=1, N_bundle=BUNDLE_STEPS) -> CocycleSystem:
    """``Df`` restricted to ``E^uu`` or ``E^ss`` in on-demand orthonormal frames.

    The generator at ``x`` is ``frame(f x)^T Df_x frame(x)``.  For the
    ``uu`` side a fast path transports one frame along each orbit chunk
    instead, which is conjugate to the same cocycle.
    """
    if side not in ("uu", "ss"):
        raise ValueError("side must be 'uu' or 'ss'")
    attract = f if side == "uu" else f.inverse()
    frame = frame_function(attract, k, N_bundle)
    meta = {"map": f, "forward_map": f, "attracting_map": attract, "side": side,
            "k": k, "bundle_steps": N_bundle, "direction": 1,
            "ambient": derivative_cocycle(f)}
    return _restricted(f, attract, frame, k, meta)


# --- partial hyperbolicity --------------------------------------------------

def _intersection(Qa, Qb, dim):
    U, s, _ = np.linalg.svd(Qa.T @ Qb)
    return Qa @ U[:, :dim]


def _split_coords(x_frames, v):
    """Coordinates of ``v`` in the concatenated (oblique) splitting basis."""
    B = np.hstack(x_frames)
    return np.linalg.solve(B, v)


def verify_partial_hyperbolicity(f: TorusMap, dims, aperture=0.5, sample_count=20,
                                 N=1, seed=0, bundle_steps=BUNDLE_STEPS,
                                 cone_samples=16):
    """Check a ``uu + c + ss`` splitting with dimensions ``dims = (k_u, k_s)``.

    At each sampled point the bundles are estimated, the growth rates of
    ``Df^N`` on each bundle are compared (per step, in logs), and sampled
    vectors on the boundary of the unstable (stable) cone of aperture
    ``aperture`` must land strictly inside the cone at the image point
    under ``Df^N`` (``Df^{-N}``).  Returns ``(ok, worst_margins)``.
    """
    k_u, k_s = dims
    d = f.dim
    k_c = d - k_u - k_s
    if min(k_u, k_s, k_c) < 0:
        raise ValueError("dims exceed the ambient dimension")
    margins = {"ss_contraction": np.inf, "uu_expansion": np.inf,
               "center_vs_ss": np.inf, "uu_vs_center": np.inf,
               "unstable_cone": np.inf, "stable_cone": np.inf}
    if k_u == 0 and k_s == 0:
        return True, {key: None for key in margins}
    finv = f.inverse()
    rng = np.random.default_rng(seed)

    def bundles(x):
        out = {}
        if k_u:
            out["u"] = push_frame(f, x, k_u, bundle_steps)[0]
        if k_s:
            out["s"] = push_frame(finv, x, k_s, bundle_steps)[0]
        if k_c:
            cu = push_frame(f, x, d - k_s, bundle_steps)[0]
            cs = push_frame(finv, x, d - k_u, bundle_steps)[0]
            out["c"] = _intersection(cu, cs, k_c)
        return out

    def sv(M):
        return np.linalg.svd(M, compute_uv=False)

    def cone_margin(x, B0, B1, D, key):
        """log(aperture / worst image ratio) for the cone around ``key``."""
        order = [b for b in ("u", "c", "s") if b in B0]
        cols = {b: B0[b].shape[1] for b in order}
        worst = 0.0
        for _ in range(cone_samples):
            parts = []
            for b in order:
                v = rng.standard_normal(cols[b])
                parts.append(v / np.linalg.norm(v))
            core = B0[key] @ parts[order.index(key)]
            rest = sum(B0[b] @ parts[order.index(b)] for b in order if b != key)
            rest = rest / np.linalg.norm(rest)
            w = D @ (core + aperture * rest)
            c = _split_coords([B1[b] for b in order], w)
            offs = np.cumsum([0] + [cols[b] for b in order])
            comps = {b: c[offs[i]:offs[i + 1]] for i, b in enumerate(order)}
            main = np.linalg.norm(B1[key] @ comps[key])
            other = np.linalg.norm(sum(B1[b] @ comps[b] for b in order if b != key))
            worst = max(worst, other / main)
        return np.inf if worst == 0 else float(np.log(aperture / worst))

    for _ in range(sample_count):
        x = f.sample(rng)
        B0 = bundles(x)
        mats, xN = f.orbit_derivatives(x, N)
        DN = np.eye(d)
        for M in mats:
            DN = M @ DN
        B1 = bundles(xN)
        rates = {b: np.log(sv(DN @ Q)) / N for b, Q in B0.items()}
        if k_s:
            margins["ss_contraction"] = min(margins["ss_contraction"], -rates["s"][0])
        if k_u:
            margins["uu_expansion"] = min(margins["uu_expansion"], rates["u"][-1])
        lo_c = rates["c"][-1] if k_c else None
        hi_c = rates["c"][0] if k_c else None
        if k_s:
            ref = lo_c if k_c else (rates["u"][-1] if k_u else 0.0)
            margins["center_vs_ss"] = min(margins["center_vs_ss"], ref - rates["s"][0])
        if k_u:
            ref = hi_c if k_c else (rates["s"][0] if k_s else 0.0)
            margins["uu_vs_center"] = min(margins["uu_vs_center"], rates["u"][-1] - ref)
        if len(B0) > 1:
            if k_u:
                margins["unstable_cone"] = min(margins["unstable_cone"],
                                               cone_margin(x, B0, B1, DN, "u"))
            if k_s:
                margins["stable_cone"] = min(margins["stable_cone"],
                                             cone_margin(xN, B1, B0, np.linalg.inv(DN), "s"))
    worst = {key: (None if np.isinf(v) else float(v)) for key, v in margins.items()}
    ok = all(v is None or v > 0 for v in worst.values())
    return ok, worst
