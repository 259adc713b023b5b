"""Pieces shared by the symbolic and smooth criterion pipelines.

Holonomy accumulation, the pinching and twisting component checks, and
the report object.  Component checks use a three-way band: a margin at
or below ``tol/10`` fails, one in ``(tol/10, tol]`` is not decided.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import stats

from .errors import IllConditionedEigenbasis, NoConvergence
from .linalg import REL_GAP, EigenData, all_minors_nonzero, eigen_by_modulus

SCHEMA_VERSION = "1.0"
MINOR_TOL = 1e-6
EIGENBASIS_COND_MAX = 1e8
EPS = np.finfo(float).eps

SIMPLE = "simple-predicted"
FAILS_PINCHING = "fails-pinching"
FAILS_TWISTING = "fails-twisting"
FAILS_BUNCHING = "fails-bunching"
NOT_DECIDED = "not-decided"


def band(margin, tol):
    """``"ok"``, ``"not_decided"`` or ``"fail"`` for a margin against ``tol``."""
    if not np.isfinite(margin):
        return "ok" if margin > 0 else "fail"
    if margin > tol:
        return "ok"
    if margin > tol / 10:
        return "not_decided"
    return "fail"


# --- holonomies -----------------------------------------------------------

@dataclass(frozen=True)
class HolonomyOperator:
    matrix: np.ndarray
    side: str
    N: int
    tail_bound: float
    endpoints: tuple
    increments: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    rho: float | None = None
    method: str = "truncated"   # truncated | exact | linear-tail
    extended: np.ndarray | None = field(repr=False, default=None)  # value at 1.5 N

    def __iter__(self):
        # unpacks as (matrix, tail_bound)
        return iter((self.matrix, self.tail_bound))

    def to_dict(self):
        return {"side": self.side, "N": self.N, "tail_bound": self.tail_bound,
                "rho": self.rho, "method": self.method,
                "matrix": np.asarray(self.matrix).tolist()}


def accumulate(my, mz, T, stop=None):
    """Partial holonomies ``H_n = (G^z_n)^{-1} T_n G^y_n``.

    ``my[n]``, ``mz[n]`` are the one-step matrices along the two orbits,
    ``T[n]`` the identification of the fibres at step ``n`` (identity for
    trivial bundles).  Increments are formed from the one-step bracket
    ``mz^{-1} T_{n+1} my - T_n`` so that exact agreement gives exact zeros.
    Returns ``(H_list, increment_norms)`` with ``H_list[n]`` for ``n = 0..len(my)``.
    """
    n_steps = len(my) if stop is None else stop
    H = np.array(T[0], dtype=float)
    Zinv = np.eye(T[0].shape[0])
    Y = np.eye(T[0].shape[1])
    out = [H.copy()]
    incs = np.zeros(n_steps)
    for n in range(n_steps):
        mzinv = np.linalg.inv(mz[n])
        if np.array_equal(my[n], mz[n]) and np.array_equal(T[n + 1], T[n]):
            inc = np.zeros_like(H)  # identical steps cancel exactly
        else:
            inc = Zinv @ (mzinv @ T[n + 1] @ my[n] - T[n]) @ Y
            H = H + inc
        out.append(H.copy())
        incs[n] = np.linalg.norm(inc, 2)
        Zinv = Zinv @ mzinv
        Y = my[n] @ Y
        s = np.linalg.norm(Y, 2)
        if not np.isfinite(s) or s == 0:
            raise NoConvergence("holonomy partial products degenerated")
        Y /= s
        Zinv *= s
        if not np.all(np.isfinite(Zinv)):
            raise NoConvergence("holonomy partial products overflowed")
    return out, incs


def geometric_tail(incs, scale, N, min_points=3):
    """Tail bound for a holonomy truncated after ``N`` increments.

    The contraction ratio ``rho`` is fitted (log-linear) on the second half
    of the increments that stand above rounding noise.  Returns
    ``(tail_bound, rho)``; ``rho`` is ``None`` when there is nothing to fit.
    A floor ``eps * N * scale`` covers the rounding in the partial sum.
    Identically vanishing increments give a zero bound.  Raises
    ``NoConvergence`` when increments still above noise do not contract.
    """
    unit = EPS * max(scale, 1.0)
    floor = unit * max(N, 1)
    d = np.asarray(incs[:N], dtype=float)
    nz = np.flatnonzero(d)
    if nz.size == 0:
        return 0.0, 0.0
    signal = np.flatnonzero(d > 100 * unit)
    rho = None
    if signal.size >= 2:
        sel = signal[signal >= signal[0] + (signal[-1] - signal[0]) // 2]
        if sel.size < min_points:
            sel = signal[-min(min_points, signal.size):]
        rho = float(np.exp(stats.linregress(sel, np.log(d[sel])).slope))
    last = nz[-1]
    if last < len(d) - 1:
        # the increments stopped exactly; only rounding in the sum remains
        return floor, rho
    if rho is not None and rho < 1:
        return float(d[last] * rho / (1 - rho)) + floor, rho
    if signal.size == 0 or signal[-1] < len(d) - max(3, len(d) // 10):
        # the sum ends in rounding noise
        return float(10 * d[last]) + floor, rho
    raise NoConvergence(f"holonomy increments do not contract (ratio {rho})")


# --- component checks -----------------------------------------------------

def pinching_component(F, rel_gap=REL_GAP):
    """Distinct eigenvalue moduli of the return map ``F``."""
    eig = eigen_by_modulus(F)
    gap = eig.min_gap
    state = band(gap, rel_gap)
    return {
        "ok": state == "ok",
        "state": state,
        "moduli": [float(m) for m in eig.moduli],
        "min_gap": float(gap) if np.isfinite(gap) else None,
        "rel_gap": rel_gap,
    }, eig


def twisting_component(psi, eigen: EigenData, tol=MINOR_TOL):
    """All minors of ``psi`` in the eigenbasis of the return map."""
    d = np.asarray(psi).shape[0]
    if eigen.moduli_gaps.size and eigen.min_gap <= 0:
        return {"ok": False, "state": "not_applicable", "min_minor": None, "tol": tol,
                "reason": "eigenvalue moduli are not distinct"}
    V = eigen.vectors
    if not eigen.is_real:
        return {"ok": False, "state": "not_applicable", "min_minor": None, "tol": tol,
                "reason": "complex eigenbasis"}
    V = V.real
    cond = np.linalg.cond(V)
    if cond > EIGENBASIS_COND_MAX:
        raise IllConditionedEigenbasis(f"eigenvector matrix condition {cond:.3e}")
    C = np.linalg.solve(V, np.asarray(psi, dtype=float) @ V)
    _, margin = all_minors_nonzero(C, tol)
    state = band(margin, tol) if d > 1 else "ok"
    return {"ok": state == "ok", "state": state, "min_minor": float(margin), "tol": tol,
            "psi_eigenbasis": C.tolist()}


# --- report ---------------------------------------------------------------

def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


@dataclass
class CriterionReport:
    verdict: str
    pinching: dict
    twisting: dict
    bunching: dict | None
    holonomy_tails: list
    homoclinic: dict
    provenance: dict
    hyperbolicity: dict | None = None
    assumptions: list = field(default_factory=list)
    psi: np.ndarray | None = None
    notes: list = field(default_factory=list)
    schema_version: str = SCHEMA_VERSION

    def components_ok(self):
        comps = [self.pinching.get("ok"), self.twisting.get("ok")]
        if self.bunching is not None:
            comps.append(self.bunching.get("ok"))
        if self.hyperbolicity is not None:
            comps.append(self.hyperbolicity.get("ok"))
        return all(comps)

    def to_dict(self) -> dict[str, Any]:
        d = {
            "schema_version": self.schema_version,
            "verdict": self.verdict,
            "pinching": self.pinching,
            "twisting": self.twisting,
            "bunching": self.bunching,
            "hyperbolicity": self.hyperbolicity,
            "holonomy_tails": [float(t) for t in self.holonomy_tails],
            "homoclinic": self.homoclinic,
            "psi": None if self.psi is None else np.asarray(self.psi).tolist(),
            "assumptions": list(self.assumptions),
            "notes": list(self.notes),
            "provenance": self.provenance,
        }
        return json.loads(json.dumps(d, default=_jsonable))


def decide(pinching, twisting, bunching=None, hyperbolicity=None, extra_undecided=False):
    """Combine component states; ``simple-predicted`` needs every one ``ok``."""
    if pinching["state"] == "fail":
        return FAILS_PINCHING
    if twisting is not None and twisting.get("state") == "fail":
        return FAILS_TWISTING
    if bunching is not None and not bunching.get("ok"):
        return FAILS_BUNCHING
    states = [pinching["state"], None if twisting is None else twisting.get("state")]
    if hyperbolicity is not None and not hyperbolicity.get("ok"):
        return NOT_DECIDED
    if extra_undecided or any(s != "ok" for s in states):
        return NOT_DECIDED
    return SIMPLE
