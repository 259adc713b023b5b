"""Diffeomorphisms of the torus ``T^d = R^d / Z^d``.

Maps act on lifts; ``step`` folds back into ``[0, 1)^d``.  Every map
knows its derivative and its inverse, which is all the cocycle layer
needs.
"""

from __future__ import annotations

import math

import numpy as np

from .. import _kernels
from ..cocycle import CocycleSystem
from ..errors import ConfigError, NotHyperbolic, NotUnimodular
from ..linalg import Subspace, eigen_by_modulus

HYPERBOLIC_BAND = 1e-9


def wrap(v):
    """Representative of ``v mod Z^d`` in ``[-1/2, 1/2)^d``."""
    v = np.asarray(v, dtype=float)
    return v - np.floor(v + 0.5)


class TorusMap:
    dim: int
    linear_part: np.ndarray
    kind: str
    volume_preserving = True

    def lift(self, x):
        raise NotImplementedError

    def inverse_lift(self, x):
        raise NotImplementedError

    def derivative(self, x):
        raise NotImplementedError

    def inverse(self) -> "TorusMap":
        raise NotImplementedError

    def step(self, x):
        return np.mod(self.lift(x), 1.0)

    def inverse_step(self, x):
        return np.mod(self.inverse_lift(x), 1.0)

    def sample(self, rng, horizon=0):
        """A Lebesgue-random point (the invariant volume)."""
        return rng.random(self.dim)

    def orbit(self, x, n):
        """Points ``x, f x, ..., f^n x`` folded into the unit cube."""
        out = np.empty((n + 1, self.dim))
        out[0] = np.mod(x, 1.0)
        for i in range(n):
            out[i + 1] = self.step(out[i])
        return out

    def orbit_derivatives(self, x, n):
        """``(Df at f^i x for i < n, f^n x)``."""
        mats = np.empty((n, self.dim, self.dim))
        for i in range(n):
            mats[i] = self.derivative(x)
            x = self.step(x)
        return mats, x

    def is_linear_at(self, x) -> bool:
        """True when the map agrees with its linear part near ``x``."""
        return False

    def to_dict(self) -> dict:
        raise NotImplementedError


class LinearMap(TorusMap):
    kind = "linear"

    def __init__(self, A, _inverse=None):
        A = np.asarray(A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        Ai = np.rint(A).astype(np.int64)
        if not np.array_equal(Ai, A):
            raise ValueError("linear torus maps need an integer matrix")
        det = round(np.linalg.det(Ai))
        if abs(det) != 1:
            raise NotUnimodular(f"|det A| = {abs(det)} != 1")
        self.dim = Ai.shape[0]
        self.linear_part = Ai
        self.matrix = Ai.astype(float)
        self._inv = _inverse

    def lift(self, x):
        return self.matrix @ np.asarray(x, dtype=float)

    def inverse_lift(self, x):
        return self.inverse().lift(x)

    def derivative(self, x):
        return self.matrix.copy()

    def is_linear_at(self, x):
        return True

    def inverse(self):
        if self._inv is None:
            Ainv = np.rint(np.linalg.inv(self.matrix)).astype(np.int64)
            self._inv = LinearMap(Ainv, _inverse=self)
        return self._inv

    def orbit_derivatives(self, x, n):
        x = np.asarray(x, dtype=float)
        for _ in range(n):
            x = self.step(x)
        return np.broadcast_to(self.matrix, (n, self.dim, self.dim)).copy(), x

    def to_dict(self):
        return {"kind": "linear", "dim": self.dim, "matrix": self.linear_part.tolist()}


def linear_anosov(A) -> LinearMap:
    """Hyperbolic toral automorphism ``x -> A x``."""
    f = LinearMap(A)
    moduli = eigen_by_modulus(f.matrix).moduli
    if np.any(np.abs(moduli - 1.0) <= HYPERBOLIC_BAND):
        raise NotHyperbolic(f"eigenvalue moduli {moduli} touch the unit circle")
    return f


class StandardMap(TorusMap):
    """``(z, w) -> (z + w, w + lam sin 2pi(z + w))`` and its inverse."""

    kind = "standard"
    dim = 2

    def __init__(self, lam, inverted=False):
        self.lam = float(lam)
        self.inverted = inverted
        self.linear_part = np.array([[1, -1], [0, 1]] if inverted else [[1, 1], [0, 1]])

    def _forward(self, x):
        z, w = x
        a = z + w
        return np.array([a, w + self.lam * math.sin(2 * math.pi * a)])

    def _backward(self, x):
        z, w = x
        w0 = w - self.lam * math.sin(2 * math.pi * z)
        return np.array([z - w0, w0])

    def _dforward(self, x):
        c = self.lam * 2 * math.pi * math.cos(2 * math.pi * (x[0] + x[1]))
        return np.array([[1.0, 1.0], [c, 1.0 + c]])

    def _dbackward(self, x):
        c = self.lam * 2 * math.pi * math.cos(2 * math.pi * x[0])
        return np.array([[1.0 + c, -1.0], [-c, 1.0]])

    def lift(self, x):
        return self._backward(x) if self.inverted else self._forward(x)

    def inverse_lift(self, x):
        return self._forward(x) if self.inverted else self._backward(x)

    def derivative(self, x):
        return self._dbackward(x) if self.inverted else self._dforward(x)

    def inverse(self):
        return StandardMap(self.lam, not self.inverted)

    def orbit_derivatives(self, x, n):
        if self.inverted:
            return super().orbit_derivatives(x, n)
        return _kernels.standard_orbit(np.asarray(x, dtype=float), self.lam, n)

    def to_dict(self):
        if self.inverted:
            raise ConfigError("inverse standard maps are not serialisable")
        return {"kind": "standard", "dim": 2, "lambda": self.lam}


def standard_map(lam) -> StandardMap:
    return StandardMap(lam)


class ProductMap(TorusMap):
    kind = "product"

    def __init__(self, f, g):
        self.factors = (f, g)
        self.dim = f.dim + g.dim
        L = np.zeros((self.dim, self.dim), dtype=np.int64)
        L[: f.dim, : f.dim] = f.linear_part
        L[f.dim:, f.dim:] = g.linear_part
        self.linear_part = L
        self.volume_preserving = f.volume_preserving and g.volume_preserving

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        return x[: self.factors[0].dim], x[self.factors[0].dim:]

    def lift(self, x):
        a, b = self._split(x)
        return np.concatenate([self.factors[0].lift(a), self.factors[1].lift(b)])

    def inverse_lift(self, x):
        a, b = self._split(x)
        return np.concatenate([self.factors[0].inverse_lift(a), self.factors[1].inverse_lift(b)])

    def derivative(self, x):
        a, b = self._split(x)
        D = np.zeros((self.dim, self.dim))
        k = self.factors[0].dim
        D[:k, :k] = self.factors[0].derivative(a)
        D[k:, k:] = self.factors[1].derivative(b)
        return D

    def inverse(self):
        return ProductMap(self.factors[0].inverse(), self.factors[1].inverse())

    def orbit_derivatives(self, x, n):
        a, b = self._split(x)
        ma, ea = self.factors[0].orbit_derivatives(a, n)
        mb, eb = self.factors[1].orbit_derivatives(b, n)
        k = self.factors[0].dim
        mats = np.zeros((n, self.dim, self.dim))
        mats[:, :k, :k] = ma
        mats[:, k:, k:] = mb
        return mats, np.concatenate([ea, eb])

    def to_dict(self):
        return {"kind": "product", "dim": self.dim,
                "factors": [f.to_dict() for f in self.factors]}


def product_map(f, g) -> TorusMap:
    """``f x g``; two linear factors give a linear map."""
    if isinstance(f, LinearMap) and isinstance(g, LinearMap):
        return LinearMap(ProductMap(f, g).linear_part)
    return ProductMap(f, g)


class LocalRotation:
    """Twist ``h`` rotating by ``theta * rho(|x - z| / radius)`` in ``plane``.

    ``rho(t) = (1 - t^2)^3``.  The rotation keeps ``|x - z|`` fixed, so the
    angle is the same before and after and the inverse is the twist with
    ``-theta``.  Volume is preserved exactly.
    """

    def __init__(self, z, plane, theta, radius):
        self.z = np.mod(np.asarray(z, dtype=float), 1.0)
        basis = plane.basis if isinstance(plane, Subspace) else np.asarray(plane, dtype=float)
        if basis.shape != (self.z.size, 2):
            raise ValueError("plane must be a d x 2 basis")
        if np.abs(basis.T @ basis - np.eye(2)).max() > 1e-12:
            basis = Subspace(basis).basis
        self.plane = basis
        if not 0 < radius < 0.5:
            raise ValueError("radius must lie in (0, 1/2)")
        self.theta = float(theta)
        self.radius = float(radius)

    def contains(self, x):
        return float(np.linalg.norm(wrap(np.asarray(x) - self.z))) < self.radius

    def derivative(self, x):
        """``Dh`` at ``x``."""
        D = np.eye(self.z.size)
        _kernels.twist_apply(np.array(x, dtype=float), D, self.z[None, :], self.plane[None],
                             np.array([self.theta]), np.array([self.radius]), 1.0)
        return D

    def to_dict(self):
        return {"z": self.z.tolist(), "plane": self.plane.tolist(),
                "theta": self.theta, "radius": self.radius}


class PerturbedMap(TorusMap):
    """``f o h_1 o ... o h_m`` for local rotations with disjoint supports.

    ``inverted=True`` represents ``h^{-1} o f^{-1}`` built from the same data.
    """

    kind = "perturbed"

    def __init__(self, base, rotations, inverted=False):
        self.base = base
        self.rotations = tuple(rotations)
        self.inverted = inverted
        self.dim = base.dim
        self.linear_part = base.linear_part
        self.volume_preserving = base.volume_preserving
        rs = self.rotations
        self._centers = np.array([r.z for r in rs]).reshape(len(rs), self.dim)
        self._planes = np.array([r.plane for r in rs]).reshape(len(rs), self.dim, 2)
        self._thetas = np.array([r.theta for r in rs], dtype=float)
        self._radii = np.array([r.radius for r in rs], dtype=float)

    def _twist(self, x, sign):
        x = np.array(x, dtype=float)
        D = np.eye(self.dim)
        _kernels.twist_apply(x, D, self._centers, self._planes, self._thetas,
                             self._radii, float(sign))
        return x, D

    def in_support(self, x):
        return any(r.contains(x) for r in self.rotations)

    def is_linear_at(self, x):
        if not isinstance(self.base, LinearMap):
            return False
        y = self.base.lift(x) if self.inverted else x
        return not self.in_support(y)

    def lift(self, x):
        if self.inverted:
            return self._twist(self.base.lift(x), -1)[0]
        return self.base.lift(self._twist(x, 1)[0])

    def inverse_lift(self, x):
        if self.inverted:
            return self.base.inverse_lift(self._twist(x, 1)[0])
        return self._twist(self.base.inverse_lift(x), -1)[0]

    def derivative(self, x):
        if self.inverted:
            y = self.base.lift(x)
            return self._twist(y, -1)[1] @ self.base.derivative(x)
        y, Dh = self._twist(x, 1)
        return self.base.derivative(y) @ Dh

    def twist_derivative(self, x):
        """``Dh`` at ``x`` (identity outside the supports)."""
        return self._twist(x, 1)[1]

    def inverse(self):
        return PerturbedMap(self.base.inverse(), self.rotations, not self.inverted)

    def orbit_derivatives(self, x, n):
        if isinstance(self.base, LinearMap) and not self.inverted:
            return _kernels.perturbed_linear_orbit(
                self.base.matrix, np.asarray(x, dtype=float), n, self._centers,
                self._planes, self._thetas, self._radii)
        return super().orbit_derivatives(x, n)

    def to_dict(self):
        if self.inverted:
            raise ConfigError("inverse perturbed maps are not serialisable")
        d = self.base.to_dict()
        d["perturbations"] = [r.to_dict() for r in self.rotations]
        return d


def perturb_local_rotation(f, z, plane, theta, radius, *, clearance=None, K=200):
    """``g = f o h`` with ``h`` a local rotation centred at ``z``.

    ``clearance`` is an optional list of ``(point, map_for_orbit)`` whose
    first ``K`` iterates must avoid the ball; see ``check_clearance``.
    """
    rot = LocalRotation(z, plane, theta, radius)
    if isinstance(f, PerturbedMap) and not f.inverted:
        g = PerturbedMap(f.base, f.rotations + (rot,))
    else:
        g = PerturbedMap(f, (rot,))
    if clearance:
        from .points import check_clearance

        for pts in clearance:
            check_clearance(rot, pts, K)
    return g


class CustomMap(TorusMap):
    """Map given by callables; used for synthetic examples."""

    kind = "custom"

    def __init__(self, dim, lift, derivative, inverse_lift, linear_part,
                 inverse_derivative=None):
        self.dim = dim
        self._lift = lift
        self._der = derivative
        self._ilift = inverse_lift
        self._ider = inverse_derivative
        self.linear_part = np.asarray(linear_part, dtype=np.int64)

    def lift(self, x):
        return np.asarray(self._lift(np.asarray(x, dtype=float)), dtype=float)

    def inverse_lift(self, x):
        return np.asarray(self._ilift(np.asarray(x, dtype=float)), dtype=float)

    def derivative(self, x):
        return np.asarray(self._der(np.asarray(x, dtype=float)), dtype=float)

    def inverse(self):
        fwd_der = self._der
        fwd_lift = self._lift
        ider = self._ider or (lambda y: np.linalg.inv(fwd_der(self._ilift(y))))
        return CustomMap(self.dim, self._ilift, ider, fwd_lift,
                         np.rint(np.linalg.inv(self.linear_part)), fwd_der)

    def to_dict(self):
        raise ConfigError("custom maps are not serialisable")


def map_from_dict(spec: dict) -> TorusMap:
    kind = spec.get("kind")
    if kind == "linear":
        f = LinearMap(spec["matrix"])
    elif kind == "anosov":
        f = linear_anosov(spec["matrix"])
    elif kind == "standard":
        f = standard_map(spec["lambda"])
    elif kind == "product":
        fs = spec["factors"]
        if len(fs) != 2:
            raise ConfigError("product maps take exactly two factors")
        f = product_map(map_from_dict(fs[0]), map_from_dict(fs[1]))
    else:
        raise ConfigError(f"unknown map kind {kind!r}")
    if "dim" in spec and spec["dim"] != f.dim:
        raise ConfigError(f"dim {spec['dim']} does not match the map ({f.dim})")
    for p in spec.get("perturbations", []):
        f = perturb_local_rotation(f, p["z"], np.asarray(p["plane"], dtype=float),
                                   p["theta"], p["radius"])
    return f


def derivative_cocycle(f: TorusMap) -> CocycleSystem:
    """``x -> Df_x`` in the global trivialisation of the tangent bundle."""

    def inverse_factory():
        return derivative_cocycle(f.inverse())

    return CocycleSystem(f.dim, f, f.derivative, 1.0, block=f.orbit_derivatives,
                         inverse_factory=inverse_factory, name=f"D({f.kind})",
                         meta={"map": f})


def _default_field(x):
    a, b = 2 * np.pi * x[0], 2 * np.pi * x[-1]
    return np.array([[np.sin(a), np.cos(b)], [np.cos(a + b), np.sin(a - b)]])


def near_identity_cocycle(f: TorusMap, eps, field=None) -> CocycleSystem:
    """``x -> I + eps * field(x)`` over ``f``; the default field is 2 x 2 trigonometric."""
    field = _default_field if field is None else field
    d = np.asarray(field(np.zeros(f.dim))).shape[0]

    def generator(x):
        return np.eye(d) + eps * np.asarray(field(np.mod(x, 1.0)), dtype=float)

    return CocycleSystem(d, f, generator, 1.0, name=f"near-identity({eps})",
                         meta={"map": f, "eps": eps})
