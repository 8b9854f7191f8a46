"""Lattice step laws and the walk-level constants derived from them.

A step law is a finitely supported, mean-zero distribution on Z^2.  All
moment checks run in exact rational arithmetic before anything is converted
to floating point, so "mean zero" is an exact statement.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, reduce
from typing import Iterable, Mapping, NamedTuple, Sequence, Union

import numpy as np

from .errors import (
    CharFnUnitCircleZero,
    DegenerateCovariance,
    InvalidStepLaw,
    NonZeroMean,
)

__all__ = [
    "LatticePoint",
    "StepLaw",
    "AnisotropicCoords",
    "as_point",
    "build_step_law",
    "builtin_law",
    "load_law",
    "law_from_json",
    "characteristic_fn",
    "tilde_coords",
    "BUILTIN_LAWS",
]


class LatticePoint(NamedTuple):
    x1: int
    x2: int

    def __neg__(self):
        return LatticePoint(-self.x1, -self.x2)

    def __add__(self, other):
        return LatticePoint(self.x1 + other[0], self.x2 + other[1])

    def __sub__(self, other):
        return LatticePoint(self.x1 - other[0], self.x2 - other[1])

    def norm2(self) -> int:
        # Python ints: exact for any magnitude
        return self.x1 * self.x1 + self.x2 * self.x2


PointLike = Union[LatticePoint, Sequence[int], str]


def as_point(p: PointLike) -> LatticePoint:
    """Coerce ``(x1, x2)``, ``[x1, x2]`` or ``"x1,x2"`` to a LatticePoint."""
    if isinstance(p, LatticePoint):
        return p
    if isinstance(p, str):
        parts = p.replace("(", "").replace(")", "").split(",")
        if len(parts) != 2:
            raise ValueError(f"cannot parse lattice point from {p!r}")
        return LatticePoint(int(parts[0]), int(parts[1]))
    x1, x2 = p
    if int(x1) != x1 or int(x2) != x2:
        raise ValueError(f"lattice point must have integer coordinates, got {p!r}")
    return LatticePoint(int(x1), int(x2))


def _as_fraction(w) -> Fraction:
    if isinstance(w, Fraction):
        return w
    if isinstance(w, (int, np.integer)):
        return Fraction(int(w))
    if isinstance(w, (tuple, list)) and len(w) == 2:
        return Fraction(int(w[0]), int(w[1]))
    if isinstance(w, str):
        return Fraction(w)
    # floats: recover the intended rational (1/3 given as 0.333...)
    return Fraction(float(w)).limit_denominator(2**32)


@dataclass(frozen=True, eq=False)
class StepLaw:
    """Finitely supported zero-mean step distribution on Z^2.

    Build instances with :func:`build_step_law`; the constructor does not
    validate.
    """

    support: tuple[tuple[LatticePoint, float], ...]
    weights: tuple[Fraction, ...]
    Q: np.ndarray
    kappa: float
    sigma: float
    period: int
    irreducible: bool = True
    name: str | None = None
    mean: tuple[Fraction, Fraction] = (Fraction(0), Fraction(0))
    _det_q: Fraction = field(default=Fraction(0), repr=False)

    @property
    def nu(self) -> int:
        return self.period

    @cached_property
    def steps(self) -> np.ndarray:
        return np.array([z for z, _ in self.support], dtype=np.int64)

    @cached_property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.support], dtype=np.float64)

    @cached_property
    def max_step(self) -> int:
        """Largest |coordinate| of any support point."""
        return int(np.abs(self.steps).max())

    @cached_property
    def max_norm(self) -> float:
        return float(np.sqrt((self.steps.astype(float) ** 2).sum(axis=1)).max())

    @cached_property
    def det_q(self) -> float:
        return float(self._det_q)

    @cached_property
    def q_inv(self) -> np.ndarray:
        return np.linalg.inv(self.Q)

    @cached_property
    def sqrt_q_inv(self) -> np.ndarray:
        vals, vecs = np.linalg.eigh(self.q_inv)
        return (vecs * np.sqrt(vals)) @ vecs.T

    @cached_property
    def is_symmetric(self) -> bool:
        table = dict(zip((z for z, _ in self.support), self.weights))
        return all(table.get(-z) == w for z, w in table.items())

    @cached_property
    def law_hash(self) -> str:
        canon = sorted((z.x1, z.x2, w.numerator, w.denominator) for (z, _), w in zip(self.support, self.weights))
        return hashlib.sha256(json.dumps(canon).encode()).hexdigest()

    def prob(self, z: PointLike) -> float:
        z = as_point(z)
        for s, p in self.support:
            if s == z:
                return p
        return 0.0

    def reflected(self) -> "StepLaw":
        """The dual law p^(z) = p(-z)."""
        name = None if self.name is None else f"{self.name}-reflected"
        return build_step_law([(-z, w) for (z, _), w in zip(self.support, self.weights)], name=name)

    def to_json(self) -> dict:
        return {
            "support": [[z.x1, z.x2, w.numerator, w.denominator] for (z, _), w in zip(self.support, self.weights)]
        }

    def __eq__(self, other):
        return isinstance(other, StepLaw) and self.law_hash == other.law_hash

    def __hash__(self):
        return hash(self.law_hash)


class AnisotropicCoords(NamedTuple):
    tilde_x: np.ndarray
    norm: float


def _sublattice_index(points: Sequence[LatticePoint]) -> int:
    minors = [a.x1 * b.x2 - a.x2 * b.x1 for a, b in itertools.combinations(points, 2)]
    return reduce(math.gcd, (abs(m) for m in minors), 0)


def _period(points: Sequence[LatticePoint]) -> int:
    # index of the lattice generated by (z, 1) in Z^3, which equals the period
    # once the z's generate Z^2
    def det3(a, b, c):
        return (a.x1 * (b.x2 - c.x2) - a.x2 * (b.x1 - c.x1) + (b.x1 * c.x2 - b.x2 * c.x1))

    dets = (abs(det3(a, b, c)) for a, b, c in itertools.combinations(points, 3))
    return reduce(math.gcd, dets, 0)


def _torus_unit_point(points: Sequence[LatticePoint], index: int) -> tuple[float, float]:
    # the dual of a sublattice of index d sits inside (1/d) Z^2
    for k1 in range(index):
        for k2 in range(index):
            if (k1, k2) == (0, 0):
                continue
            if all((k1 * z.x1 + k2 * z.x2) % index == 0 for z in points):
                t = (2 * math.pi * k1 / index, 2 * math.pi * k2 / index)
                return tuple(v - 2 * math.pi if v > math.pi else v for v in t)
    raise AssertionError("no dual point found for a proper sublattice")


def build_step_law(support: Iterable | Mapping, name: str | None = None) -> StepLaw:
    """Validate a finite support and derive the walk constants.

    Parameters
    ----------
    support : iterable of (point, weight) or mapping point -> weight
        Weights may be ints, Fractions, ``(num, den)`` pairs, decimal strings
        or floats; they are normalized by their total.

    Raises
    ------
    NonZeroMean, DegenerateCovariance, CharFnUnitCircleZero
    """
    items = support.items() if isinstance(support, Mapping) else support
    merged: dict[LatticePoint, Fraction] = {}
    for pt, w in items:
        z = as_point(pt)
        f = _as_fraction(w)
        if f <= 0:
            raise InvalidStepLaw(f"weight for {tuple(z)} must be positive, got {w!r}")
        merged[z] = merged.get(z, Fraction(0)) + f
    if not merged:
        raise InvalidStepLaw("support must contain at least one point")

    pts = sorted(merged)
    total = sum(merged.values())
    weights = tuple(merged[z] / total for z in pts)

    m1 = sum(w * z.x1 for z, w in zip(pts, weights))
    m2 = sum(w * z.x2 for z, w in zip(pts, weights))
    if m1 != 0 or m2 != 0:
        raise NonZeroMean(f"step law has mean ({m1}, {m2}), expected (0, 0)")

    q11 = sum(w * z.x1 * z.x1 for z, w in zip(pts, weights))
    q12 = sum(w * z.x1 * z.x2 for z, w in zip(pts, weights))
    q22 = sum(w * z.x2 * z.x2 for z, w in zip(pts, weights))
    det = q11 * q22 - q12 * q12
    if det <= 0:
        raise DegenerateCovariance(f"covariance matrix is singular (det Q = {det})")

    index = _sublattice_index(pts)
    if index != 1:
        theta = _torus_unit_point(pts, index)
        raise CharFnUnitCircleZero(
            f"support generates a sublattice of index {index}; "
            f"characteristic function equals 1 at theta={theta}",
            theta=theta,
        )

    Q = np.array([[float(q11), float(q12)], [float(q12), float(q22)]])
    det_f = float(det)
    return StepLaw(
        support=tuple((z, float(w)) for z, w in zip(pts, weights)),
        weights=weights,
        Q=Q,
        kappa=math.pi * math.sqrt(det_f),
        sigma=det_f ** 0.25,
        period=_period(pts),
        irreducible=True,
        name=name,
        mean=(m1, m2),
        _det_q=det,
    )


def _uniform(points):
    return [(p, 1) for p in points]


BUILTIN_LAWS = {
    "srw": lambda: build_step_law(_uniform([(1, 0), (-1, 0), (0, 1), (0, -1)]), name="srw"),
    "lazy-srw": lambda: build_step_law(
        [((0, 0), 4)] + [(p, 1) for p in [(1, 0), (-1, 0), (0, 1), (0, -1)]], name="lazy-srw"
    ),
    "kings": lambda: build_step_law(
        _uniform([(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0)]), name="kings"
    ),
    "longstep": lambda: build_step_law(
        _uniform([(3, 0), (-3, 0), (0, 3), (0, -3), (1, 0), (-1, 0), (0, 1), (0, -1)]), name="longstep"
    ),
}


def builtin_law(name: str) -> StepLaw:
    try:
        return BUILTIN_LAWS[name]()
    except KeyError:
        raise KeyError(f"unknown builtin law {name!r}; choose from {sorted(BUILTIN_LAWS)}") from None


def law_from_json(doc: Mapping) -> StepLaw:
    """Build a law from ``{"support": [[dx, dy, num, den], ...]}``."""
    try:
        rows = doc["support"]
    except (KeyError, TypeError):
        raise InvalidStepLaw("law document must have a 'support' list") from None
    support = []
    for row in rows:
        if len(row) != 4:
            raise InvalidStepLaw(f"support rows are [dx, dy, num, den], got {row!r}")
        dx, dy, num, den = row
        support.append(((dx, dy), (num, den)))
    return build_step_law(support, name=doc.get("name"))


def load_law(spec: str | Mapping | StepLaw) -> StepLaw:
    """Resolve a builtin name, a JSON file path or an in-memory document."""
    if isinstance(spec, StepLaw):
        return spec
    if isinstance(spec, Mapping):
        return law_from_json(spec)
    if spec in BUILTIN_LAWS:
        return builtin_law(spec)
    if os.path.exists(spec):
        with open(spec) as fh:
            return law_from_json(json.load(fh))
    raise KeyError(f"{spec!r} is neither a builtin law ({', '.join(sorted(BUILTIN_LAWS))}) nor a file")


def characteristic_fn(law: StepLaw, theta) -> complex | np.ndarray:
    """E exp(i theta . X); accepts one theta or an array of shape (..., 2).

    The imaginary part vanishes identically for symmetric laws.
    """
    th = np.asarray(theta, dtype=float)
    phase = th @ law.steps.T.astype(float)
    val = np.exp(1j * phase) @ law.probs
    return complex(val) if th.ndim == 1 else val


def tilde_coords(law: StepLaw, x: PointLike) -> AnisotropicCoords:
    """sigma * Q^{-1/2} x and its Euclidean norm."""
    v = np.asarray(as_point(x), dtype=float)
    t = law.sigma * (law.sqrt_q_inv @ v)
    return AnisotropicCoords(t, float(math.hypot(t[0], t[1])))


def tilde_norm2(law: StepLaw, x) -> np.ndarray | float:
    """sigma^2 x . Q^{-1} x, vectorized over trailing axis of size 2."""
    v = np.asarray(x, dtype=float)
    return law.sigma ** 2 * np.einsum("...i,ij,...j->...", v, law.q_inv, v)
