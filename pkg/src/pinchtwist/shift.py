"""Finite-state topological Markov shifts and cocycles over them.

A point of the shift is a bi-infinite admissible vertex sequence.  Points
used here are either eventually periodic in both directions (periodic and
homoclinic words) or long sampled orbit segments; ``ShiftPoint`` stores a
finite core plus optional periodic tails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .cocycle import CocycleSystem, iterate
from .errors import (
    DimensionMismatch,
    IllConditionedEigenbasis,
    NotAdmissible,
    NotOnSameLeaf,
    NotStochastic,
    NumericalFailure,
    SingularMatrix,
    TooLong,
)
from .verdict import (
    CriterionReport,
    HolonomyOperator,
    accumulate,
    config_hash,
    decide,
    geometric_tail,
    pinching_component,
    twisting_component,
)

MAX_PERIOD = 12
SAMPLE_SLACK = 1024
STOCHASTIC_TOL = 1e-12


# --- the shift ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MarkovShift:
    vertex_count: int
    adjacency: np.ndarray
    chi: float = 1.0

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=bool)
        if adj.shape != (self.vertex_count, self.vertex_count):
            raise ValueError("adjacency must be vertex_count x vertex_count")
        if self.chi <= 0:
            raise ValueError("chi must be positive")
        if not adj.any(axis=1).all() or not adj.any(axis=0).all():
            raise ValueError("every vertex needs an incoming and an outgoing edge")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @classmethod
    def full(cls, n, chi=1.0):
        return cls(n, np.ones((n, n), dtype=bool), chi)

    @property
    def edges(self):
        return [tuple(map(int, e)) for e in np.argwhere(self.adjacency)]

    @property
    def irreducible(self) -> bool:
        """Strong connectivity of the transition graph."""
        n = self.vertex_count
        reach = self.adjacency | np.eye(n, dtype=bool)
        for _ in range(max(1, math.ceil(math.log2(n)) + 1)):
            reach = (reach.astype(int) @ reach.astype(int)) > 0
        return bool(reach.all())

    def check_word(self, word, offset=0):
        """Raise ``NotAdmissible`` at the first forbidden transition."""
        for i in range(len(word) - 1):
            a, b = int(word[i]), int(word[i + 1])
            if not (0 <= a < self.vertex_count and 0 <= b < self.vertex_count):
                raise NotAdmissible(f"symbol out of range at position {offset + i}", (a, b))
            if not self.adjacency[a, b]:
                raise NotAdmissible(f"no edge {a}->{b} at position {offset + i}", (a, b))

    def to_dict(self):
        return {"vertices": self.vertex_count, "edges": [list(e) for e in self.edges],
                "chi": self.chi}

    @classmethod
    def from_dict(cls, d):
        n = int(d["vertices"])
        adj = np.zeros((n, n), dtype=bool)
        for a, b in d["edges"]:
            adj[a, b] = True
        return cls(n, adj, float(d.get("chi", 1.0)))


# --- points -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ShiftPoint:
    """``x_n`` for all integers ``n``.

    ``core`` holds ``x_start .. x_{start+len-1}``; before and after it the
    sequence repeats ``left`` and ``right`` (aligned so that ``left[-1]`` is
    ``x_{start-1}`` and ``right[0]`` is ``x_{end}``).  Empty tails mean the
    point is only known on its core.
    """

    core: np.ndarray
    start: int = 0
    left: tuple = ()
    right: tuple = ()

    def __post_init__(self):
        core = np.asarray(self.core, dtype=np.int64)
        core.setflags(write=False)
        object.__setattr__(self, "core", core)

    @property
    def end(self):
        return self.start + len(self.core)

    def symbol(self, n):
        if self.start <= n < self.end:
            return int(self.core[n - self.start])
        if n < self.start and self.left:
            return int(self.left[(n - self.start) % len(self.left)])
        if n >= self.end and self.right:
            return int(self.right[(n - self.end) % len(self.right)])
        raise IndexError(f"symbol {n} lies outside the known window "
                         f"[{self.start}, {self.end})")

    def window(self, a, b):
        """Symbols ``x_a .. x_{b-1}``."""
        if self.start <= a and b <= self.end:
            return self.core[a - self.start:b - self.start]
        return np.array([self.symbol(n) for n in range(a, b)], dtype=np.int64)

    def shifted(self, s=1):
        """``sigma^s`` of this point."""
        return ShiftPoint(self.core, self.start - s, self.left, self.right)

    def to_dict(self):
        return {"core": self.core.tolist(), "start": self.start,
                "left": list(self.left), "right": list(self.right)}


@dataclass(frozen=True)
class PeriodicWord:
    symbols: tuple

    @property
    def period(self):
        return len(self.symbols)

    def point(self) -> ShiftPoint:
        s = tuple(int(v) for v in self.symbols)
        return ShiftPoint(np.array(s), 0, s, s)


@dataclass(frozen=True)
class HomoclinicWord:
    base: PeriodicWord
    insertion: tuple
    l: int
    trivial: bool = False

    def sequence(self):
        """``U_0 .. U_{l-1}``; outside this range ``U`` follows the base cycle."""
        P, q = self.base.symbols, self.base.period
        out = [P[n % q] for n in range(self.l)]
        for i, v in enumerate(self.insertion):
            out[i + 1] = v
        return tuple(out)

    def point(self) -> ShiftPoint:
        P = tuple(self.base.symbols)
        return ShiftPoint(np.array(self.sequence()), 0, P, P)


def _canonical(word):
    return min(word[i:] + word[:i] for i in range(len(word)))


def _primitive(word):
    q = len(word)
    return all(word != word[d:] + word[:d] for d in range(1, q) if q % d == 0)


def enumerate_periodic(shift: MarkovShift, q: int) -> list[PeriodicWord]:
    """Primitive cycles of length ``q`` up to rotation, lexicographically sorted."""
    if q > MAX_PERIOD:
        raise TooLong(f"q={q} exceeds the enumeration guard {MAX_PERIOD}")
    if q < 1:
        raise ValueError("q must be positive")
    adj = shift.adjacency
    out = set()

    def extend(word):
        if len(word) == q:
            if adj[word[-1], word[0]] and _primitive(word) and _canonical(word) == word:
                out.add(word)
            return
        for v in np.flatnonzero(adj[word[-1]]):
            # the canonical rotation starts with its least symbol
            if v >= word[0]:
                extend(word + (int(v),))

    for v0 in range(shift.vertex_count):
        extend((v0,))
    return [PeriodicWord(w) for w in sorted(out)]


def _parse_word(word):
    if isinstance(word, str):
        return tuple(int(c) for c in word)
    return tuple(int(v) for v in word)


def make_homoclinic(shift: MarkovShift, P: PeriodicWord, insertion) -> HomoclinicWord:
    """Homoclinic word leaving ``P`` through ``insertion`` at position 1.

    ``l`` is the least positive multiple of the period after which the
    sequence agrees with the base cycle forever.
    """
    ins = _parse_word(insertion)
    q = P.period
    shift.check_word(P.symbols + (P.symbols[0],))
    if not ins:
        return HomoclinicWord(P, (), q, trivial=True)
    m = len(ins)
    l = q * math.ceil((m + 1) / q)
    # a shorter l works when the insertion already ends in phase with P
    for cand in range(q, l, q):
        if all(ins[n - 1] == P.symbols[n % q] for n in range(cand, m + 1)):
            l = cand
            break
    hw = HomoclinicWord(P, ins, l)
    seq = hw.sequence()
    shift.check_word((P.symbols[-1],) + seq + (P.symbols[0],), offset=-1)
    return hw


class MetricValue(NamedTuple):
    distance: float
    equal_on_window: bool
    upper_bound: float


def _as_window(R, m):
    if isinstance(R, ShiftPoint):
        return R.window(-m, m + 1)
    R = np.asarray(R)
    if R.size % 2 == 0:
        raise ValueError("array windows must be centred with odd length")
    c = R.size // 2
    return R[c - m:c + m + 1]


def shift_metric(R, S, chi, m=None) -> MetricValue:
    """``exp(-chi/2 * min{|n| : R_n != S_n})`` over the window ``[-m, m]``.

    ``R`` and ``S`` are ``ShiftPoint`` objects or centred odd-length arrays.
    When they agree on the whole window the distance is reported as 0 with
    the bound ``exp(-chi/2 (m+1))``.
    """
    if m is None:
        sizes = [len(X) // 2 for X in (R, S) if not isinstance(X, ShiftPoint)]
        if not sizes:
            raise ValueError("window radius m is required for ShiftPoint inputs")
        m = min(sizes)
    a, b = _as_window(R, m), _as_window(S, m)
    n = np.arange(-m, m + 1)
    diff = np.abs(n[a != b])
    if diff.size == 0:
        return MetricValue(0.0, True, math.exp(-chi / 2 * (m + 1)))
    d = math.exp(-chi / 2 * int(diff.min()))
    return MetricValue(d, False, d)


# --- sampling ---------------------------------------------------------------

def _check_weights(shift, W):
    W = np.asarray(W, dtype=float)
    if W.shape != shift.adjacency.shape:
        raise NotStochastic("weight matrix has the wrong shape")
    if np.any(W < 0) or np.any((W > 0) != shift.adjacency):
        raise NotStochastic("weights must be positive exactly on the edges")
    rows = W.sum(axis=1)
    if np.any(np.abs(rows - 1) > STOCHASTIC_TOL):
        raise NotStochastic(f"row sums deviate from 1 by {np.abs(rows - 1).max():.3e}")
    return W


def uniform_weights(shift: MarkovShift):
    A = shift.adjacency.astype(float)
    return A / A.sum(axis=1, keepdims=True)


def stationary_distribution(W):
    vals, vecs = np.linalg.eig(np.asarray(W).T)
    i = int(np.argmin(np.abs(vals - 1)))
    pi = np.abs(vecs[:, i].real)
    return pi / pi.sum()


def _cumulative(W):
    cum = np.cumsum(W, axis=1)
    cum /= cum[:, -1:]
    for i in range(W.shape[0]):
        last = np.flatnonzero(W[i] > 0)[-1]
        cum[i, last:] = 1.0
    return cum


def sample_markov_orbit(shift: MarkovShift, edge_weights, seed, N) -> np.ndarray:
    """Stationary Markov chain of length ``N``; deterministic per seed."""
    W = _check_weights(shift, edge_weights)
    rng = np.random.default_rng(seed)
    u = rng.random(N)
    pi_cum = np.cumsum(stationary_distribution(W))
    s0 = min(int(np.searchsorted(pi_cum, u[0], side="right")), shift.vertex_count - 1)
    return _kernels.markov_chain(_cumulative(W), u, s0)


class ShiftBase:
    """The left shift as a base map for cocycles.

    ``sample`` draws a Markov orbit segment wide enough for ``horizon``
    steps in either direction plus ``memory`` symbols of look-around.
    """

    def __init__(self, shift: MarkovShift, weights=None, memory=0, direction=1):
        self.shift = shift
        self.weights = _check_weights(shift, uniform_weights(shift) if weights is None
                                      else weights)
        self.memory = memory
        self.direction = direction

    def step(self, x: ShiftPoint):
        return x.shifted(self.direction)

    def inverse_step(self, x: ShiftPoint):
        return x.shifted(-self.direction)

    def inverse(self):
        return ShiftBase(self.shift, self.weights, self.memory, -self.direction)

    def sample(self, rng, horizon=0):
        pad = horizon + self.memory + SAMPLE_SLACK
        seed = int(rng.integers(2**63 - 1))
        seq = sample_markov_orbit(self.shift, self.weights, seed, 2 * pad + 1)
        return ShiftPoint(seq, -pad)


# --- cocycles -----------------------------------------------------------------

def _table_stack(shift, table):
    mats = [np.atleast_2d(np.asarray(table[v], dtype=float)) for v in range(shift.vertex_count)]
    d = mats[0].shape[0]
    for v, M in enumerate(mats):
        if M.shape != (d, d):
            raise DimensionMismatch(f"matrix for vertex {v} has shape {M.shape}")
        if abs(np.linalg.det(M)) <= d * np.finfo(float).eps * np.linalg.norm(M) ** d:
            raise SingularMatrix(f"matrix for vertex {v} is singular")
    stack = np.stack(mats)
    stack.setflags(write=False)
    return stack


def locally_constant_cocycle(shift: MarkovShift, table, alpha=1.0, weights=None) -> CocycleSystem:
    """Cocycle ``x -> table[x_0]`` over the left shift."""
    stack = _table_stack(shift, table)
    base = ShiftBase(shift, weights)

    def generator(x):
        return stack[x.symbol(0)]

    def block(x, n):
        return stack[x.window(0, n)], x.shifted(n)

    return CocycleSystem(stack.shape[1], base, generator, alpha, block=block,
                         name="locally-constant",
                         meta={"shift": shift, "table": stack, "memory": 0,
                               "locally_constant": True})


def holder_shift_cocycle(shift: MarkovShift, table, field, eps, memory=3, beta=0.5,
                         alpha=1.0, weights=None) -> CocycleSystem:
    """``x -> table[x_0] (I + eps * sum_{0<|j|<=memory} beta^|j| field[x_j])``.

    Depends on the ``2*memory + 1`` central coordinates with geometrically
    decaying weights.
    """
    stack = _table_stack(shift, table)
    fstack = np.stack([np.asarray(field[v], dtype=float) for v in range(shift.vertex_count)])
    if fstack.shape[1:] != stack.shape[1:]:
        raise DimensionMismatch("field and table matrices differ in shape")
    d = stack.shape[1]
    js = [j for j in range(-memory, memory + 1) if j != 0]
    wts = np.array([beta ** abs(j) for j in js])
    base = ShiftBase(shift, weights, memory)

    def generator(x):
        pert = np.tensordot(wts, fstack[[x.symbol(j) for j in js]], axes=1)
        return stack[x.symbol(0)] @ (np.eye(d) + eps * pert)

    def block(x, n):
        w = x.window(-memory, n + memory)
        idx = np.arange(n)[:, None] + memory + np.array(js)[None, :]
        pert = np.einsum("j,njab->nab", wts, fstack[w[idx]])
        mats = stack[w[memory:memory + n]] @ (np.eye(d) + eps * pert)
        return mats, x.shifted(n)

    return CocycleSystem(d, base, generator, alpha, block=block, name="holder-shift",
                         meta={"shift": shift, "table": stack, "memory": memory,
                               "locally_constant": False, "eps": eps, "beta": beta})


def _on_local_leaf(R: ShiftPoint, S: ShiftPoint, side, horizon):
    rng = range(0, horizon) if side == "stable" else range(-horizon + 1, 1)
    for n in rng:
        if R.symbol(n) != S.symbol(n):
            return False
    return True


def _side(side):
    s = {"s": "stable", "u": "unstable"}.get(side, side)
    if s not in ("stable", "unstable"):
        raise ValueError("side must be 'stable' or 'unstable'")
    return s


def shift_holonomy(coc: CocycleSystem, R: ShiftPoint, S: ShiftPoint, side="stable",
                   N=50, tol=1e-10) -> HolonomyOperator:
    """Truncated stable (unstable) holonomy from the fibre at ``R`` to ``S``.

    Stable leaves agree on nonnegative indices, unstable ones on nonpositive
    indices.  The result unpacks as ``(H, tail_bound)``.
    """
    side = _side(side)
    memory = coc.meta.get("memory", 0)
    if not _on_local_leaf(R, S, side, N + memory + 1):
        raise NotOnSameLeaf(f"points do not share a local {side} set")
    c = coc if side == "stable" else coc.inverse()
    d = coc.fiber_dim
    horizon = N + N // 2
    if R is S or all(R.symbol(n) == S.symbol(n)
                     for n in range(-horizon - memory, horizon + memory + 1)):
        return HolonomyOperator(np.eye(d), side, N, 0.0, (R, S), np.zeros(N), 0.0, "exact",
                                np.eye(d))
    my, mz = [], []
    x, y = R, S
    for _ in range(horizon):
        my.append(c.generator(x))
        mz.append(c.generator(y))
        x, y = c.base.step(x), c.base.step(y)
    eye = np.eye(d)
    Hs, incs = accumulate(my, mz, [eye] * (horizon + 1))
    H = Hs[N]
    if not incs.any():
        return HolonomyOperator(H, side, N, 0.0, (R, S), incs, 0.0, "exact", Hs[-1])
    tail, rho = geometric_tail(incs, np.linalg.norm(H, 2), N)
    return HolonomyOperator(H, side, N, tail, (R, S), incs, rho, "truncated", Hs[-1])


def transition_map_shift(coc: CocycleSystem, P: PeriodicWord, U: HomoclinicWord, N=50):
    """``H^s_{sigma^l U, P} A^l(U) H^u_{P, U}``."""
    p, u = P.point(), U.point()
    Hu = shift_holonomy(coc, p, u, "unstable", N)
    Hs = shift_holonomy(coc, u.shifted(U.l), p, "stable", N)
    psi = Hs.matrix @ iterate(coc, u, U.l) @ Hu.matrix
    return psi, (Hu, Hs)


def simplicity_check_shift(coc: CocycleSystem, P: PeriodicWord, U: HomoclinicWord,
                           rel_gap=1e-4, minor_tol=1e-6, N=50) -> CriterionReport:
    """Pinching at ``P`` and twisting of the transition map along ``U``."""
    shift = coc.meta.get("shift")
    notes, assumptions = [], [
        "the sampled Markov measure is fully supported, so P and U lie in its support",
    ]
    if shift is not None and not shift.irreducible:
        notes.append("shift is not irreducible")
    F = iterate(coc, P.point(), P.period)
    pinch, eig = pinching_component(F, rel_gap)
    undecided = shift is not None and not shift.irreducible
    tails = []
    psi = None
    try:
        psi, hol = transition_map_shift(coc, P, U, N)
        tails = [h.tail_bound for h in hol]
        twist = twisting_component(psi, eig, minor_tol)
    except (IllConditionedEigenbasis, NumericalFailure) as exc:
        twist = {"ok": False, "state": "not_decided", "min_minor": None, "tol": minor_tol,
                 "reason": str(exc)}
    if U.trivial:
        notes.append("empty insertion: transition map is a power of the return map")
    verdict = decide(pinch, twist, extra_undecided=undecided)
    cfg = {"table": coc.meta.get("table"), "P": list(P.symbols),
           "insertion": list(U.insertion), "l": U.l, "rel_gap": rel_gap,
           "minor_tol": minor_tol, "N": N}
    return CriterionReport(
        verdict=verdict, pinching=pinch, twisting=twist, bunching=None,
        holonomy_tails=tails, homoclinic={"l": U.l, "transversality_angle": None,
                                          "insertion": list(U.insertion)},
        provenance={"config_hash": config_hash(cfg), "seeds": []},
        assumptions=assumptions, psi=psi, notes=notes)


# --- serialisation ----------------------------------------------------------

def shift_to_dict(shift: MarkovShift, table=None) -> dict:
    d = shift.to_dict()
    if table is not None:
        stack = _table_stack(shift, table)
        d["matrices"] = [M.tolist() for M in stack]
    return d


def shift_from_dict(d) -> tuple[MarkovShift, dict | None]:
    shift = MarkovShift.from_dict(d)
    table = None
    if "matrices" in d:
        if len(d["matrices"]) != shift.vertex_count:
            raise DimensionMismatch("one matrix per vertex is required")
        table = {v: np.array(M, dtype=float) for v, M in enumerate(d["matrices"])}
    return shift, table


__all__ = [
    "HomoclinicWord", "MarkovShift", "MetricValue", "PeriodicWord", "ShiftBase", "ShiftPoint",
    "enumerate_periodic", "holder_shift_cocycle", "locally_constant_cocycle",
    "make_homoclinic", "sample_markov_orbit", "shift_from_dict", "shift_holonomy",
    "shift_metric", "shift_to_dict", "simplicity_check_shift", "stationary_distribution",
    "transition_map_shift", "uniform_weights",
]
