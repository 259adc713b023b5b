"""Linear cocycles over invertible base maps and their Lyapunov spectra."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, NamedTuple

import numpy as np
from scipy import stats

from . import _kernels
from .errors import NonFiniteOrbit, Overflow, SingularMatrix
from .linalg import qr_positive

MAX_STEPS = 10**7
OVERFLOW = 1e300
N_BATCHES = 20


@dataclass(frozen=True, eq=False)
class CocycleSystem:
    """A base map plus a matrix-valued generator ``x -> A(x)``.

    ``base`` must provide ``step``, ``inverse_step``, ``inverse()`` and
    ``sample(rng, horizon)``.  ``block(x, n)`` is an optional fast path
    returning the stacked matrices ``A(x), ..., A(f^{n-1} x)`` and
    ``f^n x``; ``frame(x)`` is set for cocycles restricted to a subbundle
    (its columns give the ambient basis in which generator values are
    written).
    """

    fiber_dim: int
    base: Any
    generator: Callable[[Any], np.ndarray]
    holder_exponent: float = 1.0
    block: Callable[[Any, int], tuple] | None = None
    frame: Callable[[Any], np.ndarray] | None = None
    inverse_factory: Callable[[], "CocycleSystem"] | None = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.holder_exponent <= 1:
            raise ValueError("holder_exponent must lie in (0, 1]")

    def matrices(self, x, n):
        if self.block is not None:
            return self.block(x, n)
        d = self.fiber_dim
        out = np.empty((n, d, d))
        for i in range(n):
            out[i] = self.generator(x)
            x = self.base.step(x)
        return out, x

    def inverse(self) -> "CocycleSystem":
        """Cocycle ``x -> A(f^{-1} x)^{-1}`` over the inverse base."""
        if self.inverse_factory is not None:
            return self.inverse_factory()
        inv_base = self.base.inverse()
        gen = self.generator
        step_back = self.base.inverse_step

        def inv_gen(x):
            return np.linalg.inv(gen(step_back(x)))

        return CocycleSystem(self.fiber_dim, inv_base, inv_gen, self.holder_exponent,
                             inverse_factory=lambda: self, name=f"inverse({self.name})")

    def bridge(self, a, b):
        """Identification of the fiber at ``b`` with the fiber at ``a``.

        Identity for trivial bundles; for restricted cocycles the projection
        ``frame(a)^T frame(b)``.
        """
        if self.frame is None:
            return np.eye(self.fiber_dim)
        return self.frame(a).T @ self.frame(b)


class FixedPoint:
    """Trivial base: a single fixed point."""

    def step(self, x):
        return x

    inverse_step = step

    def inverse(self):
        return self

    def sample(self, rng, horizon=0):
        return 0


def constant_cocycle(A, base=None):
    base = FixedPoint() if base is None else base
    A = np.atleast_2d(np.asarray(A, dtype=float))

    def block(x, n):
        for _ in range(n):
            x = base.step(x)
        return np.broadcast_to(A, (n,) + A.shape).copy(), x

    return CocycleSystem(A.shape[0], base, lambda x: A, 1.0, block=block, name="constant")


def iterate(sys: CocycleSystem, x, n: int, max_steps: int = MAX_STEPS):
    """``A^n(x)``; negative ``n`` uses the inverse cocycle."""
    if abs(n) > max_steps:
        raise ValueError(f"|n|={abs(n)} exceeds max_steps={max_steps}")
    if n == 0:
        return np.eye(sys.fiber_dim)
    if n < 0:
        # A^{-m}(x) = (A^m(f^{-m} x))^{-1}
        return np.linalg.inv(iterate(sys, _back(sys.base, x, -n), -n))
    P = np.eye(sys.fiber_dim)
    for _ in range(n):
        with np.errstate(over="ignore", invalid="ignore"):
            P = sys.generator(x) @ P
        if not np.abs(P).max() < OVERFLOW:
            raise Overflow("partial product norm exceeded 1e300")
        x = sys.base.step(x)
    return P


def _back(base, x, n):
    for _ in range(n):
        x = base.inverse_step(x)
    return x


def step_n(base, x, n):
    if n >= 0:
        for _ in range(n):
            x = base.step(x)
        return x
    return _back(base, x, -n)


@dataclass(frozen=True)
class SpectrumEstimate:
    exponents: np.ndarray
    std_errors: np.ndarray
    steps: int
    renorm_period: int
    seed: int
    batch_exponents: np.ndarray | None = None

    def to_dict(self):
        return {
            "exponents": [float(v) for v in self.exponents],
            "std_errors": [float(v) for v in self.std_errors],
            "steps": int(self.steps),
            "renorm_period": int(self.renorm_period),
            "seed": int(self.seed),
        }


def random_frame(d, k, seed):
    rng = np.random.default_rng(seed)
    while True:
        try:
            return qr_positive(rng.standard_normal((d, d)))[0][:, :k]
        except SingularMatrix:  # pragma: no cover - measure zero
            continue


def lyapunov_spectrum_qr(sys: CocycleSystem, x0, N: int, k: int = 1, seed: int = 0,
                         *, chunk: int = 50_000, batches: int = N_BATCHES,
                         min_steps: int = 1000, burn_in: int = 500) -> SpectrumEstimate:
    """QR (Benettin) estimate of the full spectrum along one orbit.

    A random orthonormal frame (drawn from ``seed``) is pushed along the
    orbit of ``x0`` and re-factored every ``k`` steps; exponents are the
    time averages of the log diagonal of the triangular factors.  The first
    ``burn_in`` steps only align the frame and are not averaged.  Error
    bars come from ``batches`` batch means.
    """
    if N < min_steps:
        raise ValueError(f"N={N} below minimum {min_steps}")
    if k < 1:
        raise ValueError("renormalisation period must be >= 1")
    d = sys.fiber_dim
    if x0 is None:
        x0 = sys.base.sample(np.random.default_rng(seed), horizon=N)
    Q = random_frame(d, d, seed)
    chunk = max(k, (chunk // k) * k)
    x = x0
    left = burn_in
    while left > 0:
        m = min(chunk, left)
        mats, x = sys.matrices(x, m)
        Q, _, status = _kernels.qr_log_accumulate(Q, np.ascontiguousarray(mats), 1)
        if status != 0 or not np.all(np.isfinite(mats)):
            raise NonFiniteOrbit("frame alignment failed during burn-in")
        left -= m
    batch_sums = np.zeros((batches, d))
    batch_len = np.zeros(batches)
    done = 0
    while done < N:
        m = min(chunk, N - done)
        mats, x = sys.matrices(x, m)
        if not np.all(np.isfinite(mats)):
            raise NonFiniteOrbit("non-finite generator values along the orbit")
        Q, logs, status = _kernels.qr_log_accumulate(Q, np.ascontiguousarray(mats), k)
        if status == 1:
            raise Overflow(f"block product overflowed with renorm period k={k}")
        if status == 2:
            raise NonFiniteOrbit("frame collapsed (singular generator)")
        starts = done + np.arange(logs.shape[0]) * k
        lens = np.minimum(k, done + m - starts)
        idx = (starts * batches) // N
        np.add.at(batch_sums, idx, logs)
        np.add.at(batch_len, idx, lens)
        done += m
    total = batch_sums.sum(axis=0) / N
    per_batch = batch_sums / batch_len[:, None]
    se = per_batch.std(axis=0, ddof=1) / np.sqrt(batches)
    order = np.argsort(-total, kind="stable")
    return SpectrumEstimate(total[order], se[order], N, k, seed, per_batch[:, order])


def spectrum_ensemble(sys: CocycleSystem, N: int, k: int = 1, seed: int = 0,
                      orbits: int = 1, threads: int = 1, x0s=None) -> SpectrumEstimate:
    """Average several independent orbits; orbit ``i`` uses seed ``seed + i``.

    The reduction runs in orbit order, so the result does not depend on
    ``threads``.
    """
    def one(i):
        x0 = None if x0s is None else x0s[i]
        return lyapunov_spectrum_qr(sys, x0, N, k, seed + i)

    if threads > 1 and orbits > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            ests = list(pool.map(one, range(orbits)))
    else:
        ests = [one(i) for i in range(orbits)]
    if orbits == 1:
        return ests[0]
    batches = np.vstack([e.batch_exponents for e in ests])
    exps = np.mean([e.exponents for e in ests], axis=0)
    se = batches.std(axis=0, ddof=1) / np.sqrt(batches.shape[0])
    return SpectrumEstimate(exps, se, N, k, seed, batches)


class GapReport(NamedTuple):
    simple: Any  # True, False or "not_decided"
    multiplicities: list
    gaps: list
    resolution: list


def spectrum_gap_report(est: SpectrumEstimate, gap_tol: float = 1e-3) -> GapReport:
    ex, se = np.asarray(est.exponents), np.asarray(est.std_errors)
    mult = [1]
    unresolved = merged = False
    gaps, res = [], []
    for i in range(len(ex) - 1):
        g = float(ex[i] - ex[i + 1])
        r = 3.0 * float(np.hypot(se[i], se[i + 1]))
        gaps.append(g)
        res.append(r)
        if g <= gap_tol:
            merged = True
            mult[-1] += 1
        elif g <= r:
            unresolved = True
            mult[-1] += 1
        else:
            mult.append(1)
    if unresolved:
        simple = "not_decided"
    else:
        simple = not merged
    return GapReport(simple, mult, gaps, res)


def _log_condition_curve(sys, x, N):
    """log(|A^n(x)| |A^n(x)^{-1}|) for n = 1..N, scale-free accumulation."""
    mats, _ = sys.matrices(x, N)
    d = sys.fiber_dim
    out = np.empty(N)
    P = np.eye(d)
    for n in range(N):
        P = mats[n] @ P
        s = np.linalg.svd(P, compute_uv=False)
        out[n] = np.log(s[0]) - np.log(s[-1])
        P = P / s[0]
    return out


def _sample_points(sys, count, seed, horizon):
    rng = np.random.default_rng(seed)
    return [sys.base.sample(rng, horizon=horizon) for _ in range(count)]


def bunching_constant(sys: CocycleSystem, N: int, sample_count: int = 100, seed: int = 0):
    """Slope of ``n -> log max_x |A^n(x)| |A^n(x)^{-1}|`` over ``[N/2, N]``.

    The max runs over ``sample_count`` sampled base points, so the value
    is a lower bound on the true conformality constant.  Returns
    ``(c_hat, per_n_curve)``.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be positive")
    pts = _sample_points(sys, sample_count, seed, N)
    curve = np.max([_log_condition_curve(sys, x, N) for x in pts], axis=0)
    n = np.arange(1, N + 1)
    sel = n >= max(1, N // 2)
    if sel.sum() < 2:
        return float(curve[-1] / N), curve
    slope = np.polyfit(n[sel], curve[sel], 1)[0]
    return float(slope), curve


class BunchingFit(NamedTuple):
    ok: bool
    fitted_C: float
    fitted_lambda: float


def _fit_direction(curve, chi_alpha):
    n = np.arange(1, len(curve) + 1, dtype=float)
    y = curve - chi_alpha * n
    fit = stats.linregress(n, y)
    se = 0.0 if not np.isfinite(fit.stderr) else fit.stderr
    t = stats.t.ppf(0.975, max(len(n) - 2, 1))
    upper = fit.slope + t * se
    return upper < -1e-10, fit.intercept, fit.slope


def check_fiber_bunched(sys: CocycleSystem, chi: float, N: int = 20,
                        sample_count: int = 100, seed: int = 0) -> BunchingFit:
    """Fit ``log(|A^n||A^-n|) - chi*alpha*|n|`` to ``log C + |n| log lambda``.

    Forward and backward times are fitted separately; both need a slope
    below zero at 95% confidence.
    """
    if chi <= 0:
        raise ValueError("chi must be positive")
    ca = chi * sys.holder_exponent
    pts = _sample_points(sys, sample_count, seed, N)
    fwd = np.max([_log_condition_curve(sys, x, N) for x in pts], axis=0)
    inv = sys.inverse()
    bwd = np.max([_log_condition_curve(inv, x, N) for x in pts], axis=0)
    ok_f, a_f, b_f = _fit_direction(fwd, ca)
    ok_b, a_b, b_b = _fit_direction(bwd, ca)
    a, b = (a_f, b_f) if b_f >= b_b else (a_b, b_b)
    return BunchingFit(bool(ok_f and ok_b), float(np.exp(a)), float(np.exp(b)))


def birkhoff_log_det(sys: CocycleSystem, x0, N: int):
    mats, _ = sys.matrices(x0, N)
    return float(np.mean(np.log(np.abs(np.linalg.det(mats)))))


def with_name(sys: CocycleSystem, name: str) -> CocycleSystem:
    return replace(sys, name=name)
