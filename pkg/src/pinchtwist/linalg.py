"""Small dense linear algebra used throughout the package.

Everything here works on plain ``numpy`` arrays.  Matrices are small
(d <= 16), so clarity wins over blocking or batching tricks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionTooLarge, NoConvergence, SingularMatrix

RESIDUAL_TOL = 1e-9
REL_GAP = 1e-6
MAX_MINOR_DIM = 10


def qr_positive(M):
    """QR factorisation with a strictly positive diagonal in ``R``.

    Raises ``SingularMatrix`` when a pivot underflows relative to ``|M|``.
    """
    M = np.asarray(M, dtype=float)
    Q, R = np.linalg.qr(M)
    diag = np.diag(R)
    scale = np.linalg.norm(M) if M.size else 0.0
    if scale == 0.0 or np.abs(diag).min() <= M.shape[0] * np.finfo(float).eps * scale:
        raise SingularMatrix("pivot underflow in QR factorisation")
    signs = np.where(diag < 0, -1.0, 1.0)
    return Q * signs, R * signs[:, None]


@dataclass(frozen=True)
class EigenData:
    values: np.ndarray      # complex, sorted by modulus descending
    vectors: np.ndarray     # columns match ``values``
    moduli_gaps: np.ndarray  # |l_i| / |l_{i+1}| - 1

    @property
    def moduli(self):
        return np.abs(self.values)

    @property
    def min_gap(self):
        return float(self.moduli_gaps.min()) if self.moduli_gaps.size else np.inf

    @property
    def is_real(self):
        return bool(np.all(self.values.imag == 0.0))


def _gauge_vector(v):
    """Unit norm, first nonzero component positive real."""
    v = v / np.linalg.norm(v)
    nz = np.flatnonzero(np.abs(v) > 1e-14)
    if nz.size:
        c = v[nz[0]]
        v = v * (abs(c) / c)
    return v


def eigen_by_modulus(M, tol=RESIDUAL_TOL):
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise NoConvergence("non-finite matrix entries")
    try:
        vals, vecs = np.linalg.eig(M)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    # Round near-real eigenvalues of real matrices onto the axis so that
    # downstream code sees a real eigenbasis.
    vals = np.asarray(vals, dtype=complex)
    vecs = np.asarray(vecs, dtype=complex)
    scale = max(np.linalg.norm(M, 2), np.finfo(float).tiny)
    real_mask = np.abs(vals.imag) <= 1e-13 * scale
    vals = np.where(real_mask, vals.real + 0j, vals)
    vecs[:, real_mask] = vecs[:, real_mask].real

    order = sorted(range(len(vals)),
                   key=lambda i: (-abs(vals[i]), -vals[i].real, -vals[i].imag))
    vals = vals[order]
    vecs = np.column_stack([_gauge_vector(vecs[:, i]) for i in order])

    resid = np.linalg.norm(M @ vecs - vecs * vals, axis=0)
    if np.any(resid > tol * scale):
        raise NoConvergence(f"eigen residual {resid.max():.3e} exceeds tolerance")
    mod = np.abs(vals)
    with np.errstate(divide="ignore"):
        gaps = mod[:-1] / mod[1:] - 1.0 if len(mod) > 1 else np.zeros(0)
    return EigenData(values=vals, vectors=vecs, moduli_gaps=np.asarray(gaps, dtype=float))


def all_minors_nonzero(C, tol=1e-6):
    """Check every square minor of orders 1..d-1 of ``C``.

    Each minor is normalised by the product of the norms of the full rows
    it uses, which keeps the margin in [0, 1] (Hadamard) and independent of
    the scale of ``C``.  Returns ``(ok, min_margin)``.
    """
    C = np.asarray(C)
    d = C.shape[0]
    if d > MAX_MINOR_DIM:
        raise DimensionTooLarge(f"d={d} > {MAX_MINOR_DIM}")
    if d < 2:
        return True, 1.0
    row_norms = np.linalg.norm(C, axis=1)
    if np.any(row_norms == 0):
        return False, 0.0
    margin = np.inf
    for k in range(1, d):
        rows = list(itertools.combinations(range(d), k))
        cols = rows
        for I in rows:
            sub = C[np.ix_(I, range(d))]
            blocks = np.stack([sub[:, J] for J in cols])
            dets = np.abs(np.linalg.det(blocks)) if k > 1 else np.abs(blocks[:, 0, 0])
            m = dets.min() / np.prod(row_norms[list(I)])
            margin = min(margin, float(m))
    return bool(margin > tol), margin


@dataclass(frozen=True)
class Subspace:
    basis: np.ndarray

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.basis, dtype=float))
        if b.shape[0] < b.shape[1]:
            raise ValueError("basis must be ambient_dim x k with k <= ambient_dim")
        q, r = np.linalg.qr(b)
        signs = np.where(np.diag(r) < 0, -1.0, 1.0)  # keep orientation of the input
        object.__setattr__(self, "basis", q[:, : b.shape[1]] * signs)

    @classmethod
    def span(cls, *vectors):
        return cls(np.column_stack([np.asarray(v, dtype=float) for v in vectors]))

    @property
    def ambient_dim(self):
        return self.basis.shape[0]

    @property
    def dim(self):
        return self.basis.shape[1]


def principal_angles(U, V):
    """Principal angles (ascending) between two subspaces."""
    s = np.linalg.svd(U.basis.T @ V.basis, compute_uv=False)
    return np.sort(np.arccos(np.clip(s, -1.0, 1.0)))


def subspace_transverse(U, V, tol=RESIDUAL_TOL):
    """Return ``(ok, min_angle)``; ``ok`` iff ``[U | V]`` has full column rank."""
    if U.ambient_dim != V.ambient_dim or U.dim + V.dim > U.ambient_dim:
        return False, 0.0
    s = np.linalg.svd(np.hstack([U.basis, V.basis]), compute_uv=False)
    ok = bool(s[-1] > tol)
    angle = float(principal_angles(U, V)[0])
    if not ok:
        angle = min(angle, float(s[-1]))
    return ok, angle
