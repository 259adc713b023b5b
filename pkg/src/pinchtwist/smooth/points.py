"""Periodic and homoclinic points, and orbit pairs along stable leaves."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy

from ..errors import (
    DegeneratePeriod,
    InvalidLattice,
    NoConvergence,
    NotAsymptotic,
    SingularJacobian,
    SupportViolation,
)
from ..linalg import Subspace, eigen_by_modulus, principal_angles
from .maps import LinearMap, TorusMap, linear_anosov, wrap

PERIODIC_TOL = 1e-10


def torus_distance(a, b):
    return float(np.linalg.norm(wrap(np.asarray(a) - np.asarray(b))))


@dataclass(frozen=True)
class PeriodicPointDatum:
    point: np.ndarray
    period: int
    derivative: np.ndarray
    margin: float
    iterations: int = 0
    orbit: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self):
        return {"point": self.point.tolist(), "period": self.period,
                "margin": self.margin, "iterations": self.iterations}


def _iterate_lift(f, x, n):
    for _ in range(n):
        x = f.lift(x)
    return x


def _datum(f: TorusMap, p, n, iterations=0):
    p = np.mod(np.asarray(p, dtype=float), 1.0)
    orbit = f.orbit(p, n)
    err = torus_distance(orbit[-1], p)
    if not err < PERIODIC_TOL:
        raise NoConvergence(f"f^{n}(p) misses p by {err:.3e}")
    mats, _ = f.orbit_derivatives(p, n)
    D = np.eye(f.dim)
    for M in mats:
        D = M @ D
    margin = float(np.min(np.abs(eigen_by_modulus(D).moduli - 1.0)))
    return PeriodicPointDatum(p, n, D, margin, iterations, orbit[:-1])


def periodic_points_linear(A, n: int):
    """All points of period dividing ``n`` for ``x -> A x`` (exact enumeration).

    Solutions of ``(A^n - I) x in Z^d`` form the group ``M^{-1} Z^d / Z^d``
    of order ``|det M|``; it is generated by the columns of ``M^{-1}``,
    which are enumerated exactly as integer numerators over ``|det M|``.
    """
    f = LinearMap(A)
    M = sympy.Matrix(f.linear_part.tolist()) ** n - sympy.eye(f.dim)
    det = int(M.det())
    if det == 0:
        raise DegeneratePeriod(f"det(A^{n} - I) = 0")
    D = abs(det)
    adj = np.array((M.adjugate() * (1 if det > 0 else -1)).tolist(), dtype=object)
    gens = [tuple(int(v) % D for v in adj[:, j]) for j in range(f.dim)]
    seen = {tuple([0] * f.dim)}
    frontier = list(seen)
    while frontier:
        nxt = []
        for r in frontier:
            for g in gens:
                s = tuple((a + b) % D for a, b in zip(r, g))
                if s not in seen:
                    seen.add(s)
                    nxt.append(s)
        frontier = nxt
    if len(seen) != D:  # pragma: no cover - group theory guarantees this
        raise NoConvergence("periodic point enumeration incomplete")
    return [_datum(f, np.array(r, dtype=float) / D, n) for r in sorted(seen)]


def newton_refine_periodic(g: TorusMap, x0, n: int, tol=1e-12, max_iter=50,
                           cond_max=1e12) -> PeriodicPointDatum:
    """Newton's method for ``g^n(x) = x`` on the universal cover."""
    x = np.asarray(x0, dtype=float).copy()
    shift = np.rint(_iterate_lift(g, x, n) - x)
    for it in range(1, max_iter + 1):
        mats, _ = g.orbit_derivatives(np.mod(x, 1.0), n)
        J = np.eye(g.dim)
        for M in mats:
            J = M @ J
        J -= np.eye(g.dim)
        if np.linalg.cond(J) > cond_max:
            raise SingularJacobian("Dg^n - I is numerically singular")
        F = _iterate_lift(g, x, n) - x - shift
        x = x - np.linalg.solve(J, F)
        res = np.linalg.norm(_iterate_lift(g, x, n) - x - shift)
        if res < tol:
            return _datum(g, x, n, iterations=it)
    raise NoConvergence(f"Newton did not converge in {max_iter} iterations")


# --- homoclinic points of linear models ------------------------------------

def spectral_projector(L, expanding: bool):
    """Real projector onto the (un)stable eigenspace of ``L`` along its complement."""
    vals, V = np.linalg.eig(np.asarray(L, dtype=float))
    mask = np.abs(vals) > 1 if expanding else np.abs(vals) < 1
    P = V @ np.diag(mask.astype(float)) @ np.linalg.inv(V)
    return P.real


class _LinearModes:
    """Exact powers ``L^n v`` through the eigendecomposition of ``L``."""

    def __init__(self, L):
        self.vals, self.V = np.linalg.eig(np.asarray(L, dtype=float))
        self.Vinv = np.linalg.inv(self.V)

    def coeffs(self, v):
        return self.Vinv @ np.asarray(v, dtype=float)

    def power(self, c, n):
        return (self.V @ (c * self.vals ** n)).real


@dataclass(frozen=True)
class HomoclinicDatum:
    """``z`` with ``lift_u`` on the unstable and ``lift_s`` on the stable leaf of ``p``.

    ``lift_u - lift_s`` is an integer vector; ``l`` is the number of steps
    after which the forward orbit is inside the stable reference window.
    """

    point: np.ndarray
    lift_u: np.ndarray
    lift_s: np.ndarray
    l: int
    angle: float
    p: np.ndarray
    matrix: np.ndarray
    forward_ratio: float
    backward_ratio: float

    def forward_orbit(self, K):
        """``f^j z`` for ``j = 1..K`` as lifts near ``p``."""
        modes = _LinearModes(self.matrix)
        c = modes.coeffs(self.lift_s)
        return np.array([self.p + modes.power(c, j) for j in range(1, K + 1)])

    def backward_orbit(self, K):
        modes = _LinearModes(self.matrix)
        c = modes.coeffs(self.lift_u)
        return np.array([self.p + modes.power(c, -j) for j in range(1, K + 1)])

    def image_lift(self):
        """Lift of ``f^l z`` on the stable leaf of ``p``."""
        modes = _LinearModes(self.matrix)
        return self.p + modes.power(modes.coeffs(self.lift_s), self.l)

    def to_dict(self):
        return {"z": self.point.tolist(), "l": self.l, "transversality_angle": self.angle,
                "forward_ratio": self.forward_ratio, "backward_ratio": self.backward_ratio}


def _decay_ratio(norms):
    """Geometric ratio from a log-linear fit of the last two thirds."""
    n = np.arange(len(norms))
    sel = n >= len(norms) // 3
    slope = np.polyfit(n[sel], np.log(norms[sel]), 1)[0]
    return float(np.exp(slope))


def homoclinic_linear(A, m, *, window=0.25, checks=30, ratio_tol=0.1) -> HomoclinicDatum:
    """Point homoclinic to the fixed point 0 of ``x -> A x`` from a lattice vector ``m``.

    ``z = P_u m`` lies on the unstable leaf of 0; ``z - m = -P_s m`` lies on
    its stable leaf, so both represent the same torus point.
    """
    f = linear_anosov(A)
    m = np.asarray(m, dtype=float)
    if m.shape != (f.dim,) or not np.array_equal(m, np.rint(m)):
        raise InvalidLattice("m must be an integer vector of the ambient dimension")
    if not np.any(m):
        raise InvalidLattice("m = 0 gives the fixed point itself")
    L = f.matrix
    Pu, Ps = spectral_projector(L, True), spectral_projector(L, False)
    zu, zs = Pu @ m, -(Ps @ m)
    if np.linalg.norm(zu) < 1e-12 or np.linalg.norm(zs) < 1e-12:
        raise InvalidLattice("m lies in an invariant subspace; no transverse intersection")
    modes = _LinearModes(L)
    stable = np.abs(modes.vals) < 1
    # drop rounding-level components on the wrong side before taking powers
    cs = np.where(stable, modes.coeffs(zs), 0)
    cu = np.where(stable, 0, modes.coeffs(zu))
    fwd = np.array([np.linalg.norm(modes.power(cs, j)) for j in range(1, checks + 1)])
    bwd = np.array([np.linalg.norm(modes.power(cu, -j)) for j in range(1, checks + 1)])
    # theoretical ratios: slowest eigen-mode present in each lift
    tiny = 1e-12 * np.abs(modes.coeffs(m)).max()
    th_f = max(abs(v) for v, c in zip(modes.vals, cs) if abs(c) > tiny)
    th_b = max(1 / abs(v) for v, c in zip(modes.vals, cu) if abs(c) > tiny)
    r_f, r_b = _decay_ratio(fwd), _decay_ratio(bwd)
    for got, want, name in ((r_f, th_f, "forward"), (r_b, th_b, "backward")):
        if not (want < 1 and abs(got - want) <= ratio_tol * want):
            raise NotAsymptotic(f"{name} contraction ratio {got:.4f}, expected {want:.4f}")
    norms = np.concatenate([[np.linalg.norm(zs)], fwd])
    inside = np.flatnonzero(norms[1:] <= window)
    if inside.size == 0:
        raise NotAsymptotic("forward orbit never enters the stable window")
    l = int(inside[0]) + 1
    Eu = Subspace(np.linalg.svd(Pu)[0][:, : int(np.sum(np.abs(modes.vals) > 1))])
    Es = Subspace(np.linalg.svd(Ps)[0][:, : int(np.sum(np.abs(modes.vals) < 1))])
    angle = float(principal_angles(Eu, Es)[0])
    return HomoclinicDatum(np.mod(zu, 1.0), zu, zs, l, angle, np.zeros(f.dim),
                           L.copy(), r_f, r_b)


def check_clearance(rot, datum, K=200):
    """Raise ``SupportViolation`` if ``K`` iterates of ``datum`` enter ``rot``'s ball.

    Periodic data contribute their whole orbit; homoclinic data their
    first ``K`` forward and backward iterates (the point itself excluded).
    """
    if isinstance(datum, PeriodicPointDatum):
        pts = datum.orbit if datum.orbit is not None else [datum.point]
    elif isinstance(datum, HomoclinicDatum):
        pts = np.vstack([datum.forward_orbit(K), datum.backward_orbit(K)])
    else:
        pts = np.atleast_2d(np.asarray(datum, dtype=float))
    for i, x in enumerate(pts):
        if rot.contains(x):
            raise SupportViolation(f"orbit point {i} at distance "
                                   f"{torus_distance(x, rot.z):.4f} < radius {rot.radius}")
    return True


# --- orbit pairs on a common stable leaf -----------------------------------

@dataclass(frozen=True)
class LeafPair:
    ys: np.ndarray          # lifts, consistently shifted
    zs: np.ndarray
    distances: np.ndarray
    truncated: int          # number of usable steps
    linear: np.ndarray      # step n used the linear part at both points


def leaf_pair(phi: TorusMap, y, z, N, *, leaf_tol=1e-8, floor=1e-13):
    """Forward ``phi``-orbits of ``y`` and ``z`` (lifts) on one stable leaf.

    Where ``phi`` is linear along both orbits the displacement is carried
    in eigen-coordinates, so it keeps contracting below rounding level.
    Elsewhere both points are iterated directly; the pair is truncated
    once the direct displacement stops contracting below ``floor``.
    Raises ``NotAsymptotic`` if the displacement has an expanding
    component or stops contracting while still macroscopic.
    """
    y = np.asarray(y, dtype=float).copy()
    delta = np.asarray(z, dtype=float) - y
    d0 = float(np.linalg.norm(delta))
    ys = np.empty((N + 1, phi.dim))
    zs = np.empty((N + 1, phi.dim))
    dist = np.empty(N + 1)
    linear = np.zeros(N, dtype=bool)
    modes = expanding = coeffs = None
    shift = np.floor(y)
    y = y - shift
    ys[0], zs[0], dist[0] = y, y + delta, d0
    usable = N
    for n in range(N):
        zn = y + delta
        if phi.is_linear_at(y) and phi.is_linear_at(zn):
            linear[n] = True
            if modes is None:
                modes = _LinearModes(phi.linear_part)
                expanding = np.abs(modes.vals) > 1 + 1e-12
            if coeffs is None:
                coeffs = modes.coeffs(delta)
                bad = np.abs(coeffs[expanding]).max(initial=0.0)
                if bad > leaf_tol * max(d0, 1e-300) and bad > floor:
                    raise NotAsymptotic(f"displacement has expanding component {bad:.3e}")
                coeffs = np.where(expanding, 0, coeffs)
            coeffs = coeffs * modes.vals
            delta = (modes.V @ coeffs).real
            y1 = phi.linear_part @ y
        else:
            coeffs = None
            y1 = phi.lift(y)
            delta = phi.lift(zn) - y1
        y = y1 - np.floor(y1)
        ys[n + 1], zs[n + 1] = y, y + delta
        dist[n + 1] = np.linalg.norm(delta)
        if coeffs is None:
            if dist[n + 1] >= dist[n] and dist[n] <= floor:
                usable = n
                break
            if dist[n + 1] > max(10 * d0, 0.25):
                raise NotAsymptotic(f"leaf distance grew to {dist[n + 1]:.3e}")
    if usable >= 10 and not dist[usable] < 0.5 * d0:
        raise NotAsymptotic("no net contraction along the leaf")
    return LeafPair(ys[: usable + 1], zs[: usable + 1], dist[: usable + 1], usable,
                    linear[:usable])
