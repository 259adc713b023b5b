"""Holonomies and the pinching/twisting verdict for cocycles over torus maps.

Holonomies are computed between orbits on a common stable leaf of the
map ``phi`` (``f`` for stable holonomies, ``f^{-1}`` for unstable ones).
For cocycles restricted to an invariant subbundle, fibres at different
points are compared through the orthonormal frames of the bundle, and
the partial holonomies are telescoped as a sum of one-step increments.

Once both orbits stay where ``phi`` is linear, the rest of the limit has
a closed form (projection along the complementary eigenspaces of the
linear part).  This is what keeps restricted cocycles that are not
bunched strongly enough from amplifying rounding error.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .cocycle import CocycleSystem, check_fiber_bunched, iterate, spectrum_gap_report
from .errors import IllConditionedEigenbasis, NotAsymptotic, NumericalFailure
from .linalg import eigen_by_modulus
from .shift import ShiftBase, simplicity_check_shift
from .smooth.points import HomoclinicDatum, PeriodicPointDatum, leaf_pair
from .verdict import (
    EPS,
    MINOR_TOL,
    SIMPLE,
    CriterionReport,
    HolonomyOperator,
    accumulate,
    config_hash,
    decide,
    geometric_tail,
    pinching_component,
    twisting_component,
)

INVARIANCE_TOL = 1e-10

ASSUMPTIONS = [
    "the periodic point is homoclinically related to the measure "
    "(every hyperbolic periodic point of a linear model is; not checked numerically)",
    "orbits that reach the linear region of the map stay there",
]


def _side(side):
    s = {"s": "stable", "u": "unstable"}.get(side, side)
    if s not in ("stable", "unstable"):
        raise ValueError("side must be 'stable' or 'unstable'")
    return s


def dominant_projector(L, k):
    """Projector onto the top-``k`` eigenspace of ``L`` along the others."""
    vals, V = np.linalg.eig(np.asarray(L, dtype=float))
    order = np.argsort(-np.abs(vals), kind="stable")
    mask = np.zeros(len(vals))
    mask[order[:k]] = 1.0
    return (V @ np.diag(mask) @ np.linalg.inv(V)).real


def _linear_tail_start(pair):
    """First step from which both orbits only see the linear part."""
    nonlinear = np.flatnonzero(~pair.linear)
    return 0 if nonlinear.size == 0 else int(nonlinear[-1]) + 1


def _closed_form(L, k, Ey, Ez, attracting):
    """Limit of the remaining holonomy once the dynamics is linear.

    Returns ``None`` when no closed form applies.
    """
    if attracting:
        Pi = dominant_projector(L, k)
        return np.linalg.pinv(Pi @ Ez) @ (Pi @ Ey)
    # repelling bundle: only frames already spanning one invariant subspace
    LEz = L @ Ez
    if (np.linalg.norm(Ey - Ez @ (Ez.T @ Ey), 2) < INVARIANCE_TOL
            and np.linalg.norm(LEz - Ez @ (Ez.T @ LEz), 2)
            < INVARIANCE_TOL * np.linalg.norm(L, 2)):
        return Ez.T @ Ey
    return None


def smooth_holonomy(coc: CocycleSystem, y, z, side="stable", N=200, tol=1e-8, *,
                    leaf_tol=1e-8) -> HolonomyOperator:
    """Holonomy from the fibre at ``y`` to the fibre at ``z`` (lifts on one leaf).

    The value is the truncation at ``N`` steps unless the closed linear
    tail applies; ``extended`` holds the value at ``1.5 N``.  ``tol`` is
    the tail bound the caller is aiming for and is only recorded.
    """
    side = _side(side)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    d = coc.fiber_dim
    if np.array_equal(y, z):
        return HolonomyOperator(np.eye(d), side, N, 0.0, (y, z), np.zeros(0), 0.0, "exact",
                                np.eye(d))
    c = coc if side == "stable" else coc.inverse()
    phi = c.base
    horizon = N + N // 2
    pair = leaf_pair(phi, y, z, horizon, leaf_tol=leaf_tol)
    steps = pair.truncated
    ys, zs = pair.ys, pair.zs
    frame = coc.frame

    def one_step(x, x1):
        if frame is None:
            return np.asarray(c.generator(x), dtype=float)
        return frame(x1).T @ phi.derivative(x) @ frame(x)

    def ident(a, b):
        return np.eye(d) if frame is None else frame(a).T @ frame(b)

    n0 = _linear_tail_start(pair)
    closed = None
    if frame is not None and n0 < steps:
        attracting = (side == "stable") == (coc.meta.get("side", "uu") == "uu")
        closed = _closed_form(phi.linear_part, d, frame(ys[n0]), frame(zs[n0]), attracting)
    stop = n0 if closed is not None else steps
    my = [one_step(ys[n], ys[n + 1]) for n in range(stop)]
    mz = [one_step(zs[n], zs[n + 1]) for n in range(stop)]
    T = [ident(zs[n], ys[n]) for n in range(stop + 1)]
    Hs, incs = accumulate(my, mz, T)
    scale = max(np.linalg.norm(Hs[-1], 2), 1.0)
    if closed is not None:
        Gy, Gz = np.eye(d), np.eye(d)
        for n in range(stop):
            Gy, Gz = my[n] @ Gy, mz[n] @ Gz
        H = np.linalg.solve(Gz, closed @ Gy)
        tail = 10 * EPS * (n0 + 1) * max(np.linalg.norm(H, 2), 1.0)
        return HolonomyOperator(H, side, N, float(tail), (y, z), incs, 0.0, "linear-tail", H)
    n_at = min(N, steps)
    tail, rho = geometric_tail(incs, scale, n_at)
    if steps < N:
        # the leaf distance reached rounding level before N
        tail += EPS * scale
    return HolonomyOperator(Hs[n_at], side, N, float(tail), (y, z), incs, rho, "truncated",
                            Hs[-1])


def _holonomy_equivariance(coc, y, z, side, N):
    """Residual of ``H_{phi y, phi z} = A(z) H_{y,z} A(y)^{-1}`` (for tests)."""
    H0 = smooth_holonomy(coc, y, z, side, N)
    c = coc if _side(side) == "stable" else coc.inverse()
    phi = c.base
    y1, z1 = phi.lift(np.asarray(y, dtype=float)), phi.lift(np.asarray(z, dtype=float))
    H1 = smooth_holonomy(coc, y1, z1, side, N)
    lhs = H1.matrix
    rhs = c.generator(z) @ H0.matrix @ np.linalg.inv(c.generator(y))
    return float(np.linalg.norm(lhs - rhs, 2)), H0, H1


# --- transition maps ----------------------------------------------------------

@dataclass(frozen=True)
class TransitionParts:
    psi: np.ndarray
    unstable: HolonomyOperator
    stable: HolonomyOperator
    loop: np.ndarray       # cocycle along z for l steps, ending in the frame at f^l z
    end_lift: np.ndarray   # lift of f^l z on the stable leaf of p

    @property
    def tail_sum(self):
        return self.unstable.tail_bound + self.stable.tail_bound


def _inverted(H: HolonomyOperator) -> HolonomyOperator:
    """``H_{z,y} = H_{y,z}^{-1}``; the tail bound is propagated to first order."""
    inv = np.linalg.inv(H.matrix)
    tail = H.tail_bound * np.linalg.norm(inv, 2) ** 2
    ext = None if H.extended is None else np.linalg.inv(H.extended)
    return HolonomyOperator(inv, H.side, H.N, float(tail), H.endpoints[::-1], H.increments,
                            H.rho, H.method, ext)


def transition_map_smooth(coc: CocycleSystem, p: PeriodicPointDatum, z: HomoclinicDatum,
                          N=200) -> TransitionParts:
    """``H^s_{f^l z, p} F^l_z H^u_{p, z}`` in the frame at ``p``."""
    p_lift = np.asarray(z.p, dtype=float)
    Hu = smooth_holonomy(coc, p_lift, z.lift_u, "unstable", N)
    x = np.mod(z.lift_u, 1.0)
    F = iterate(coc, x, z.l)
    end = z.image_lift()
    a = x
    for _ in range(z.l):
        a = coc.base.step(a)
    loop = coc.bridge(end, a) @ F
    # the orbit of p is exact in floating point, so it serves as reference
    Hs = _inverted(smooth_holonomy(coc, p_lift, end, "stable", N))
    psi = Hs.matrix @ loop @ Hu.matrix
    return TransitionParts(psi, Hu, Hs, loop, end)


def twist_factor(coc: CocycleSystem, rotation, x):
    """The local rotation's derivative at ``x`` seen in the bundle frame."""
    E = coc.frame(x) if coc.frame is not None else np.eye(coc.fiber_dim)
    return E.T @ rotation.derivative(x) @ E


def transition_map_conjugated(coc_f: CocycleSystem, p, z, rotation, N=200):
    """Transition map of the perturbed system rebuilt from the unperturbed one.

    Inserts the rotation's derivative at ``z`` between the unstable
    holonomy and the loop of the unperturbed cocycle.
    """
    parts = transition_map_smooth(coc_f, p, z, N)
    R = twist_factor(coc_f, rotation, np.mod(z.lift_u, 1.0))
    psi = parts.stable.matrix @ parts.loop @ R @ parts.unstable.matrix
    return psi, parts


# --- component checks -----------------------------------------------------------

def pinching_check(coc: CocycleSystem, p: PeriodicPointDatum, rel_gap=1e-4):
    F = iterate(coc, p.point, p.period)
    comp, eig = pinching_component(F, rel_gap)
    return comp, eig


def twisting_check(psi, eigen, tol=MINOR_TOL):
    return twisting_component(psi, eigen, tol)


def hyperbolicity_check(p: PeriodicPointDatum, chi):
    """Every exponent of ``p`` is at least ``chi`` in absolute value."""
    exps = np.log(eigen_by_modulus(p.derivative).moduli) / p.period
    worst = float(np.min(np.abs(exps)))
    return {"ok": bool(worst > chi), "min_abs_exponent": worst, "chi": chi,
            "exponents": exps.tolist()}


@dataclass(frozen=True)
class CriterionConfig:
    chi: float
    rel_gap: float = 1e-4
    minor_tol: float = MINOR_TOL
    N: int = 200
    N_max: int = 3200
    tail_tol: float = 1e-8
    bunching_N: int = 20
    bunching_samples: int = 32
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


def _transition_with_doubling(coc, p, z, cfg):
    N = cfg.N
    while True:
        parts = transition_map_smooth(coc, p, z, N)
        tails = [parts.unstable.tail_bound, parts.stable.tail_bound]
        if max(tails) < cfg.tail_tol:
            return parts, N, True
        if 2 * N > cfg.N_max:
            return parts, N, False
        N *= 2


def criterion_verdict(coc: CocycleSystem, p, z, config) -> CriterionReport:
    """Pinching, twisting, bunching and hyperbolicity assembled into a verdict."""
    cfg = config if isinstance(config, CriterionConfig) else CriterionConfig.from_dict(config)
    if isinstance(coc.base, ShiftBase):
        return simplicity_check_shift(coc, p, z, cfg.rel_gap, cfg.minor_tol,
                                      N=min(cfg.N, 50))
    notes = []
    pinch, eig = pinching_check(coc, p, cfg.rel_gap)
    hyper = hyperbolicity_check(p, cfg.chi)
    fit = check_fiber_bunched(coc, cfg.chi / 2, N=cfg.bunching_N,
                              sample_count=cfg.bunching_samples, seed=cfg.seed)
    bunch = {"ok": fit.ok, "fitted_C": fit.fitted_C, "fitted_lambda": fit.fitted_lambda,
             "chi_half": cfg.chi / 2}
    psi, tails, undecided = None, [], False
    N_used = cfg.N
    try:
        parts, N_used, converged = _transition_with_doubling(coc, p, z, cfg)
        psi = parts.psi
        tails = [parts.unstable.tail_bound, parts.stable.tail_bound]
        if not converged:
            undecided = True
            notes.append("holonomy tail bound above tolerance at the truncation budget")
        twist = twisting_component(psi, eig, cfg.minor_tol)
    except (NumericalFailure, NotAsymptotic, IllConditionedEigenbasis) as exc:
        undecided = True
        notes.append(f"transition map unavailable: {exc}")
        twist = {"ok": False, "state": "not_decided", "min_minor": None,
                 "tol": cfg.minor_tol, "reason": str(exc)}
    verdict = decide(pinch, twist, bunch, hyper, extra_undecided=undecided)
    if not hyper["ok"]:
        notes.append("periodic point is not hyperbolic at the supplied chi")
    provenance = {"config_hash": config_hash({"criterion": asdict(cfg),
                                              "p": p.to_dict(), "z": z.to_dict(),
                                              "cocycle": coc.name}),
                  "seeds": [cfg.seed], "holonomy_N": N_used}
    return CriterionReport(
        verdict=verdict, pinching=pinch, twisting=twist, bunching=bunch,
        holonomy_tails=tails,
        homoclinic={"l": z.l, "transversality_angle": z.angle},
        provenance=provenance, hyperbolicity=hyper, assumptions=list(ASSUMPTIONS),
        psi=psi, notes=notes)


def cross_validate(report: CriterionReport, est, gap_tol=1e-3) -> str:
    """Compare a verdict with a spectrum estimate: the criterion is one-sided."""
    if report.verdict != SIMPLE:
        return "inconclusive"
    simple = spectrum_gap_report(est, gap_tol).simple
    if simple is True:
        return "consistent"
    if simple is False:
        return "inconsistent"
    return "inconclusive"


__all__ = [
    "CriterionConfig", "TransitionParts", "criterion_verdict", "cross_validate",
    "dominant_projector", "hyperbolicity_check", "pinching_check", "smooth_holonomy",
    "transition_map_conjugated", "transition_map_smooth", "twisting_check",
]
