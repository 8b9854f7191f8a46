"""Potential theory of the walk killed on a finite set A.

Hitting distributions come from a Dirichlet problem on a disc U(R) whose
outer boundary is closed by a constant far-field vector c, solved jointly
with the field.  Writing h0(z, xi) = P_z[hit A at xi before leaving U(R)]
and e(z) = P_z[leave U(R) before A], the field is h = h0 + e c with

    c_xi = (1 - sum_eta Pi(eta, xi)) / sum_eta e(eta),

where Pi and e(eta) are the one-step return and escape quantities from the
points of A.  This makes the entrance matrix on A doubly stochastic, so
sum_xi u_A(xi) = 1 holds to rounding.  The field error decays like R^-2
(the naive absorbing boundary is only logarithmic), and values are
Richardson-extrapolated from R and 2R as (4 h_2R - h_R) / 3.
"""
from __future__ import annotations

import math
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._dirichlet import DiscSystem
from .errors import ExteriorReducible, RadiusTooSmall
from .kernels import Window, evolve
from .model import LatticePoint, PointLike, StepLaw, as_point, load_law
from .potential import PotentialTable, get_table

__all__ = [
    "KillingSet",
    "KilledSystem",
    "green_singleton",
    "hitting_distribution",
    "entrance_distribution",
    "u_A",
    "u_A_many",
    "u_tolerance",
    "green_killed",
    "u_limit_consistency",
    "mu_from_infinity",
    "parse_points",
]

DEFAULT_RT = 128


def parse_points(text: str) -> list[LatticePoint]:
    """Parse ``"x1,y1;x2,y2;..."``."""
    pts = [as_point(chunk) for chunk in text.split(";") if chunk.strip()]
    if not pts:
        raise ValueError("empty point list")
    return pts


class KillingSet:
    """Finite nonempty A with a designated anchor xi0.

    The anchor defaults to the lexicographically smallest point.
    """

    def __init__(self, points: Iterable[PointLike] | str, anchor: PointLike | None = None):
        if isinstance(points, str):
            points = parse_points(points)
        pts = sorted({as_point(p) for p in points})
        if not pts:
            raise ValueError("killing set must be nonempty")
        self.points: tuple[LatticePoint, ...] = tuple(pts)
        self._set = frozenset(pts)
        a = pts[0] if anchor is None else as_point(anchor)
        if a not in self._set:
            raise ValueError(f"anchor {tuple(a)} is not in A")
        self.anchor = a

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)

    def __contains__(self, z) -> bool:
        return as_point(z) in self._set

    def __eq__(self, other):
        return isinstance(other, KillingSet) and self.points == other.points

    def __hash__(self):
        return hash(self.points)

    def __repr__(self):
        body = ";".join(f"{p.x1},{p.x2}" for p in self.points)
        return f"KillingSet('{body}', anchor={tuple(self.anchor)})"

    @property
    def diam(self) -> float:
        return max(math.hypot(p.x1 - q.x1, p.x2 - q.x2) for p in self.points for q in self.points)

    @property
    def max_norm(self) -> float:
        return max(math.hypot(*p) for p in self.points)

    def index(self, xi: PointLike) -> int:
        return self.points.index(as_point(xi))

    def reflected(self) -> "KillingSet":
        return KillingSet([-p for p in self.points], anchor=-self.anchor)

    def with_anchor(self, anchor: PointLike) -> "KillingSet":
        return KillingSet(self.points, anchor)

    def check_exterior(self, law: StepLaw) -> None:
        """Raise ExteriorReducible unless every pair of points off A within
        distance diam(A) + 3 of A can reach one another while avoiding A."""
        r = int(math.ceil(self.diam)) + 3
        margin = r + 2 * law.max_step
        lo1 = min(p.x1 for p in self.points) - margin
        hi1 = max(p.x1 for p in self.points) + margin
        lo2 = min(p.x2 for p in self.points) - margin
        hi2 = max(p.x2 for p in self.points) + margin
        steps = [tuple(map(int, s)) for s in law.steps]

        def near(z):
            return any((z[0] - p.x1) ** 2 + (z[1] - p.x2) ** 2 <= r * r for p in self.points)

        def reach(src, sign):
            seen = {src}
            todo = deque([src])
            while todo:
                z = todo.popleft()
                for s in steps:
                    w = (z[0] + sign * s[0], z[1] + sign * s[1])
                    if lo1 <= w[0] <= hi1 and lo2 <= w[1] <= hi2 and w not in seen and w not in self._set:
                        seen.add(w)
                        todo.append(w)
            return seen

        targets = [
            (a, b)
            for a in range(lo1, hi1 + 1)
            for b in range(lo2, hi2 + 1)
            if (a, b) not in self._set and near((a, b))
        ]
        src = (lo1, lo2)
        fwd, bwd = reach(src, 1), reach(src, -1)
        for z in targets:
            if z not in fwd or z not in bwd:
                raise ExteriorReducible(
                    f"point {z} and the far field do not communicate while avoiding A={self!r}"
                )


@dataclass
class _Closed:
    """Closed-boundary field for one radius."""

    system: DiscSystem
    H: np.ndarray  # (n, |A|)
    c: np.ndarray  # far-field constants
    residual: float

    def at(self, z: LatticePoint, A: KillingSet) -> np.ndarray:
        if z in A:
            v = np.zeros(len(A))
            v[A.index(z)] = 1.0
            return v
        k = self.system.index(z)
        return self.H[k].copy() if k >= 0 else self.c.copy()


def _solve_closed(law: StepLaw, A: KillingSet, R: int) -> _Closed:
    S = DiscSystem(law, R, A.points)
    k = len(A)
    X, res = S.solve(np.column_stack([S.hole_flux, S.exit_flux]))
    S.release()
    h0, e = X[:, :k], X[:, k]
    Pi = np.zeros((k, k))
    eA = np.zeros(k)
    for i, eta in enumerate(A.points):
        for s, w in zip(law.steps, law.probs):
            z = (eta.x1 + int(s[0]), eta.x2 + int(s[1]))
            if z in A:
                Pi[i, A.index(z)] += w
            elif not S.in_disc(z):
                eA[i] += w
            else:
                j = S.index(z)
                Pi[i] += w * h0[j]
                eA[i] += w * e[j]
    c = (1.0 - Pi.sum(axis=0)) / eA.sum()
    return _Closed(S, h0 + e[:, None] * c[None, :], c, res)


_FIELD_CACHE: dict[tuple, tuple[_Closed, _Closed]] = {}
_FIELD_LOCK = threading.Lock()


class KilledSystem:
    """A law, a killing set and the shared potential table.

    ``R_t`` is the default Dirichlet radius; fields are solved at R_t and
    2 R_t once and shared by every query.  Caches are written under a lock.
    """

    def __init__(
        self,
        law: StepLaw | str,
        A: KillingSet | Iterable[PointLike] | str,
        potential: PotentialTable | None = None,
        R_t: int = DEFAULT_RT,
    ):
        self.law = load_law(law)
        self.A = A if isinstance(A, KillingSet) else KillingSet(A)
        self.A.check_exterior(self.law)
        self.potential = potential if potential is not None else get_table(self.law)
        if R_t <= self.A.max_norm + self.law.max_step:
            raise RadiusTooSmall(f"R_t={R_t} does not contain A with a step of margin")
        self.R_t = int(R_t)
        self.hitting_cache: dict[tuple[LatticePoint, int], np.ndarray] = {}
        self.uA_cache: dict[LatticePoint, float] = {}
        self._lock = threading.Lock()
        self._dual: KilledSystem | None = None

    def __repr__(self):
        return f"KilledSystem(law={self.law.name!r}, A={self.A!r}, R_t={self.R_t})"

    def fields(self, R: int) -> tuple[_Closed, _Closed]:
        key = (self.law.law_hash, self.A.points, int(R))
        with _FIELD_LOCK:
            pair = _FIELD_CACHE.get(key)
        if pair is None:
            pair = (_solve_closed(self.law, self.A, R), _solve_closed(self.law, self.A, 2 * R))
            with _FIELD_LOCK:
                _FIELD_CACHE.setdefault(key, pair)
                pair = _FIELD_CACHE[key]
        return pair

    def radius_for(self, x: LatticePoint) -> int:
        need = 2.0 * (math.hypot(*x) + self.A.diam)
        if self.R_t > need:
            return self.R_t
        # smallest power of two above the requirement; 8(|x| + diam A) would
        # put tens of millions of unknowns in the 2R solve for |x| ~ 100
        return 1 << int(math.floor(math.log2(max(need, 32.0)))) + 1

    def field_value(self, x: LatticePoint, R: int) -> tuple[np.ndarray, np.ndarray]:
        """(extrapolated H(x, .), error estimate) with the convention H = delta on A.

        The estimate |H_2R - H_R| / 3 is the size of the removed R^-2 term.
        """
        f1, f2 = self.fields(R)
        v1, v2 = f1.at(x, self.A), f2.at(x, self.A)
        return (4.0 * v2 - v1) / 3.0, np.abs(v2 - v1) / 3.0

    def far_field(self, R: int | None = None) -> np.ndarray:
        f1, f2 = self.fields(R or self.R_t)
        return (4.0 * f2.c - f1.c) / 3.0

    @property
    def dual(self) -> "KilledSystem":
        if self._dual is None:
            law = self.law.reflected()
            self._dual = KilledSystem(law, self.A.reflected(), get_table(law, self.potential.tol), self.R_t)
        return self._dual


def green_singleton(table: PotentialTable, x: PointLike, y: PointLike) -> float:
    """g_{0}(x, y) = delta(x, 0) + a(x) + a(-y) - a(x - y)."""
    x, y = as_point(x), as_point(y)
    d = 1.0 if x == (0, 0) else 0.0
    return d + table.a(x) + table.a(-y) - table.a(x - y)


def hitting_distribution(sys: KilledSystem, x: PointLike, R_t: int | None = None) -> np.ndarray:
    """H_A(x, .) as a vector ordered like ``sys.A.points`` (delta on A)."""
    x = as_point(x)
    A = sys.A
    if x in A:
        v = np.zeros(len(A))
        v[A.index(x)] = 1.0
        return v
    if len(A) == 1:
        return np.ones(1)
    if R_t is None:
        R_t = sys.radius_for(x)
    elif R_t <= 2.0 * (math.hypot(*x) + A.diam):
        raise RadiusTooSmall(f"R_t={R_t} must exceed 2(|x| + diam A) = {2.0 * (math.hypot(*x) + A.diam):.2f}")
    key = (x, int(R_t))
    v = sys.hitting_cache.get(key)
    if v is None:
        v, _ = sys.field_value(x, int(R_t))
        with sys._lock:
            sys.hitting_cache.setdefault(key, v)
    return v.copy()


def _entrance(sys: KilledSystem, x: LatticePoint) -> tuple[np.ndarray, np.ndarray]:
    """P_x[S_sigma = .] with sigma >= 1, and its error estimate."""
    A = sys.A
    if len(A) == 1:
        return np.ones(1), np.zeros(1)
    if x not in A:
        return sys.field_value(x, sys.R_t)
    v = np.zeros(len(A))
    err = np.zeros(len(A))
    for s, w in zip(sys.law.steps, sys.law.probs):
        hv, he = sys.field_value(LatticePoint(x.x1 + int(s[0]), x.x2 + int(s[1])), sys.R_t)
        v += w * hv
        err += w * he
    return v, err


def entrance_distribution(sys: KilledSystem, x: PointLike) -> np.ndarray:
    """P_x[S_sigma = .] with sigma = first time >= 1 in A."""
    return _entrance(sys, as_point(x))[0]


def u_A(sys: KilledSystem, x: PointLike) -> float:
    """u_A(x) = delta(x, xi0) + a(x - xi0) - E_x[a(S_sigma - xi0)].

    For A = {xi0} this reduces to a^dagger(x - xi0) through the same
    arithmetic.  Points beyond the solved disc use the far-field vector.
    """
    x = as_point(x)
    v = sys.uA_cache.get(x)
    if v is not None:
        return v
    xi0 = sys.A.anchor
    H, _ = _entrance(sys, x)
    t = sys.potential
    corr = math.fsum(h * t.a(xi - xi0) for h, xi in zip(H, sys.A.points))
    v = ((1.0 if x == xi0 else 0.0) + t.a(x - xi0)) - corr
    with sys._lock:
        sys.uA_cache.setdefault(x, v)
    return v


def u_A_many(sys: KilledSystem, points: Iterable[PointLike]) -> np.ndarray:
    """u_A at many points; potential values are fetched in one batch."""
    pts = [as_point(p) for p in points]
    xi0 = sys.A.anchor
    sys.potential.many([p - xi0 for p in pts] + [xi - xi0 for xi in sys.A.points])
    return np.array([u_A(sys, p) for p in pts])


def u_tolerance(sys: KilledSystem, x: PointLike) -> float:
    """Error bound for u_A(x) propagated from the field estimate |H_2R - H_R|."""
    x = as_point(x)
    _, err = _entrance(sys, x)
    t = sys.potential
    spread = max(abs(t.a(xi - sys.A.anchor)) for xi in sys.A.points)
    return float(err.sum() * spread + 4.0 * t.abs_error)


def green_killed(sys: KilledSystem, x: PointLike, y: PointLike, n_terms: int = 2 ** 12) -> tuple[float, float]:
    """Partial sum G^N = sum_{n<=N} p_A^n(x, y) and a bound on the remainder.

    Since A contains xi0, p_A^n <= p_{xi0}^n, so the remainder is at most
    g_{xi0}(x, y) - sum_{n<=N} p_{xi0}^n(x, y); mass leaving the window is
    charged at g_{xi0}(y, y), the largest value of g_{xi0}(., y).
    """
    x, y = as_point(x), as_point(y)
    xi0 = sys.A.anchor
    win = Window.around(x, n_terms, extra=list(sys.A.points) + [y])
    run_A = evolve(sys.law, x, n_terms, win, kill=sys.A.points, probes=[y], snapshots=())
    run_0 = evolve(sys.law, x, n_terms, win, kill=[xi0], probes=[y], snapshots=())
    part_A = math.fsum(run_A.probe(y))
    part_0 = math.fsum(run_0.probe(y))
    g0 = green_singleton(sys.potential, x - xi0, y - xi0)
    gyy = green_singleton(sys.potential, y - xi0, y - xi0)
    leak = float(run_0.leakage[-1])
    return part_A, max(0.0, g0 - part_0) + leak * gyy


def u_limit_consistency(
    sys: KilledSystem,
    x: PointLike,
    probes: Sequence[PointLike],
    n_terms: int = 2 ** 12,
    return_bound: bool = False,
):
    """max_y |g_A(x,y) + a(x-y) - sum_xi H_A(x,xi) a(xi-y) - u_A(x)|.

    For A = {0}, g_A is closed form.  Otherwise g_A is replaced by the
    killed partial sum of ``n_terms`` terms; with ``return_bound`` the
    largest remainder bound over the probes is returned alongside.
    """
    x = as_point(x)
    ys = [as_point(y) for y in probes]
    if len(set(ys)) != len(ys) or any(y in sys.A for y in ys):
        raise ValueError("probes must be distinct points outside A")
    t = sys.potential
    H = hitting_distribution(sys, x)
    u = u_A(sys, x)
    exact = len(sys.A) == 1 and sys.A.anchor == (0, 0)
    dev, bound = 0.0, 0.0
    for y in ys:
        if exact:
            g = green_singleton(t, x, y)
        else:
            g, b = green_killed(sys, x, y, n_terms)
            bound = max(bound, b)
        s = math.fsum(h * t.a(xi - y) for h, xi in zip(H, sys.A.points))
        dev = max(dev, abs(g + t.a(x - y) - s - u))
    return (dev, bound) if return_bound else dev


def mu_from_infinity(sys: KilledSystem) -> np.ndarray:
    """Harmonic measure from infinity, (u_{-A}(-xi))_{xi in A}."""
    dual = sys.dual
    return np.array([u_A(dual, -xi) for xi in sys.A.points])
