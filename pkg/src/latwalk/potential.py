"""Potential kernel a(x) = sum_n [p^n(0) - p^n(-x)] and a^dagger.

Production values come from the torus integral

    a(x) = (2 pi)^-2 \\int_{[-pi, pi]^2} (1 - e^{i theta.x}) / (1 - phi(theta)) dtheta,

evaluated with tensor Gauss-Legendre rules on four collapsed triangles that
meet at theta = 0 (theta_1 = +-pi s, theta_2 = pi s t and the transposes).
The Jacobian pi^2 s cancels the 1/|theta|^2 behaviour of 1/(1 - phi), so the
transformed integrand is analytic and the rules converge geometrically.
Each value is certified by comparing two refinement levels.

The literal series is kept as an independent oracle
(:func:`potential_a_series_oracle`).
"""
from __future__ import annotations

import json
import math
import os
import threading
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import QuadratureNonConvergent, WindowTooSmall
from .kernels import Window, evolve
from .model import LatticePoint, PointLike, StepLaw, as_point, tilde_norm2

__all__ = [
    "PotentialTable",
    "potential_a",
    "potential_a_series_oracle",
    "series_oracle_many",
    "a_dagger",
    "estimate_cstar",
    "get_table",
]

MAX_ORDER = 3000
_CHUNK = 1 << 15


@lru_cache(maxsize=4)
def _nodes(law: StepLaw, order: int):
    """Collapsed-triangle nodes theta (K, 2) and weights w/(1 - phi)/(2 pi)^2."""
    xs, ws = np.polynomial.legendre.leggauss(order)
    s = 0.5 * (xs + 1.0)
    S, T = np.meshgrid(s, xs, indexing="ij")
    W = (np.outer(0.5 * ws, ws) * S * math.pi ** 2).ravel()
    S, T = S.ravel(), T.ravel()
    ps, pt = math.pi * S, math.pi * S * T
    theta = np.concatenate([
        np.column_stack([ps, pt]),
        np.column_stack([-ps, pt]),
        np.column_stack([pt, ps]),
        np.column_stack([pt, -ps]),
    ])
    W = np.tile(W, 4)
    phi = np.exp(1j * (theta @ law.steps.T.astype(float))) @ law.probs
    c = W / (1.0 - phi) / (2.0 * math.pi) ** 2
    return theta, c


def _base_order(l1: int) -> int:
    return 32 + int(math.ceil(1.25 * l1))


def _quad_rect(law: StepLaw, r1: np.ndarray, r2: np.ndarray, order: int) -> np.ndarray:
    """a on the product grid r1 x r2 with a fixed rule (separable phases)."""
    theta, c = _nodes(law, order)
    acc = np.zeros((r1.size, r2.size), dtype=complex)
    for k in range(0, theta.shape[0], _CHUNK):
        th, ck = theta[k:k + _CHUNK], c[k:k + _CHUNK]
        e1 = np.exp(1j * np.outer(th[:, 0], r1)) * ck[:, None]
        e2 = np.exp(1j * np.outer(th[:, 1], r2))
        acc += e1.T @ e2
    return (c.sum() - acc).real


def _quad_points(law: StepLaw, pts: np.ndarray, order: int) -> np.ndarray:
    theta, c = _nodes(law, order)
    out = np.zeros(pts.shape[0], dtype=complex)
    step = max(1, _CHUNK * 8 // max(1, pts.shape[0]))
    for k in range(0, theta.shape[0], step):
        ph = np.exp(1j * (theta[k:k + step] @ pts.T.astype(float)))
        out += c[k:k + step] @ ph
    return (c.sum() - out).real


def _certified(fn, l1: int, tol: float):
    """Run ``fn(order)`` at two levels until they agree within ``tol``."""
    n1 = _base_order(l1)
    v1 = fn(n1)
    while True:
        n2 = n1 + max(16, n1 // 2)
        if n2 > MAX_ORDER:
            raise QuadratureNonConvergent(
                f"potential quadrature not certified to {tol:g} within order {MAX_ORDER}"
            )
        v2 = fn(n2)
        err = np.abs(v2 - v1)
        if np.all(err <= tol):
            return v2, err
        n1, v1 = n2, v2


class PotentialTable:
    """Memoized a(x) values for one law, with certified error bookkeeping.

    Values are filled on demand by quadrature.  ``radius`` is the largest
    r such that every |x|_inf <= r is present.  Insertion is guarded by a
    lock and is idempotent.
    """

    def __init__(self, law: StepLaw, tol: float = 1e-10, cache_dir: str | os.PathLike | None = None):
        if tol <= 0:
            raise ValueError("tol must be positive")
        self.law = law
        self.tol = float(tol)
        self._values: dict[LatticePoint, float] = {LatticePoint(0, 0): 0.0}
        self._abs_error = 0.0
        self._lock = threading.Lock()
        self.radius = 0
        self.cache_dir = None if cache_dir is None else Path(cache_dir)
        if self.cache_dir is not None:
            path = self.cache_path
            if path.exists():
                self._load(path)

    # -- persistence -------------------------------------------------------
    @property
    def cache_path(self) -> Path:
        return self.cache_dir / f"potential-{self.law.law_hash[:16]}.json"

    def _load(self, path: Path) -> None:
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("law_hash") != self.law.law_hash or float(doc.get("tol", 1.0)) > self.tol:
            return
        with self._lock:
            for x1, x2, v in doc["entries"]:
                self._values.setdefault(LatticePoint(int(x1), int(x2)), float(v))
            self._abs_error = max(self._abs_error, float(doc.get("abs_error", 0.0)))
            self.radius = max(self.radius, int(doc.get("radius", 0)))

    def save(self, path: str | os.PathLike | None = None) -> Path:
        path = Path(path) if path is not None else self.cache_path
        path.parent.mkdir(parents=True, exist_ok=True)
        with self._lock:
            entries = [[p.x1, p.x2, v] for p, v in sorted(self._values.items())]
            doc = {
                "law_hash": self.law.law_hash,
                "tol": self.tol,
                "entries": entries,
                "abs_error": self._abs_error,
                "radius": self.radius,
            }
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w") as fh:
            json.dump(doc, fh)
        os.replace(tmp, path)
        return path

    # -- values ------------------------------------------------------------
    @property
    def abs_error(self) -> float:
        return self._abs_error

    @property
    def values(self) -> dict[LatticePoint, float]:
        return dict(self._values)

    def _insert(self, pts: Iterable[LatticePoint], vals: Iterable[float], err: float) -> None:
        with self._lock:
            for p, v in zip(pts, vals):
                self._values.setdefault(p, float(v))
            self._abs_error = max(self._abs_error, float(err))

    def a(self, x: PointLike) -> float:
        x = as_point(x)
        v = self._values.get(x)
        if v is None:
            self.many([x])
            v = self._values[x]
        return v

    __call__ = a

    def a_dagger(self, x: PointLike) -> float:
        x = as_point(x)
        return (1.0 if x == (0, 0) else 0.0) + self.a(x)

    def many(self, points) -> np.ndarray:
        """a at many points (array (M, 2) or iterable of points)."""
        pts = [as_point(p) for p in (points.tolist() if isinstance(points, np.ndarray) else points)]
        missing = sorted({p for p in pts if p not in self._values})
        if missing:
            self._compute(missing)
        return np.array([self._values[p] for p in pts])

    def _compute(self, missing: list[LatticePoint]) -> None:
        arr = np.array(missing, dtype=np.int64)
        lo, hi = arr.min(axis=0), arr.max(axis=0)
        area = int(np.prod(hi - lo + 1))
        if len(missing) > 64 and area <= 4 * len(missing):
            r1 = np.arange(lo[0], hi[0] + 1)
            r2 = np.arange(lo[1], hi[1] + 1)
            l1 = int(max(abs(lo[0]), abs(hi[0])) + max(abs(lo[1]), abs(hi[1])))
            grid, err = _certified(lambda n: _quad_rect(self.law, r1, r2, n), l1, self.tol)
            X1, X2 = np.meshgrid(r1, r2, indexing="ij")
            self._insert(
                (LatticePoint(int(a), int(b)) for a, b in zip(X1.ravel(), X2.ravel())),
                grid.ravel(),
                float(err.max()),
            )
            return
        # scattered points: group by required order so near points stay cheap
        l1s = np.abs(arr).sum(axis=1)
        order = np.argsort(l1s, kind="stable")
        groups: list[list[int]] = []
        for idx in order:
            if groups and l1s[idx] <= 1.5 * l1s[groups[-1][0]] + 8:
                groups[-1].append(idx)
            else:
                groups.append([idx])
        for g in groups:
            sub = arr[g]
            vals, err = _certified(lambda n: _quad_points(self.law, sub, n), int(l1s[g].max()), self.tol)
            self._insert((missing[i] for i in g), vals, float(err.max()))

    def fill(self, radius: int) -> np.ndarray:
        """Fill the square |x|_inf <= radius and return it as a dense grid."""
        r = np.arange(-radius, radius + 1)
        X1, X2 = np.meshgrid(r, r, indexing="ij")
        vals = self.many(np.column_stack([X1.ravel(), X2.ravel()]))
        self.radius = max(self.radius, radius)
        return vals.reshape(X1.shape)


_TABLES: dict[str, PotentialTable] = {}
_TABLES_LOCK = threading.Lock()


def get_table(law: StepLaw, tol: float = 1e-10) -> PotentialTable:
    """Shared table per law; honours LATWALK_CACHE for disk persistence."""
    with _TABLES_LOCK:
        t = _TABLES.get(law.law_hash)
        if t is None or t.tol > tol:
            t = PotentialTable(law, tol, cache_dir=os.environ.get("LATWALK_CACHE") or None)
            _TABLES[law.law_hash] = t
        return t


def potential_a(law: StepLaw, x: PointLike, tol: float = 1e-10) -> float:
    """a(x) to within ``tol`` (raises QuadratureNonConvergent otherwise)."""
    return get_table(law, tol).a(x)


def a_dagger(table: PotentialTable, x: PointLike) -> float:
    return table.a_dagger(x)


def potential_a_series_oracle(law: StepLaw, x: PointLike, N: int, window: Window | None = None) -> float:
    """Truncated series sum_{n<=N} [p^n(0) - p^n(-x)], averaged over the last
    ``period`` partial sums so that periodic walks do not oscillate.

    Converges like O(|x|^2 / N); meant as an oracle, not a production path.
    """
    return float(series_oracle_many(law, [x], N, window)[0])


def series_oracle_many(law: StepLaw, points, N: int, window: Window | None = None) -> np.ndarray:
    """:func:`potential_a_series_oracle` for many points from one evolution."""
    if N < 1:
        raise ValueError("N must be >= 1")
    pts = [as_point(p) for p in points]
    if window is None:
        reach = max(math.hypot(*p) for p in pts)
        spread = 8.0 * math.sqrt(float(np.linalg.eigvalsh(law.Q).max()))
        radius = int(math.ceil(spread * math.sqrt(N) + reach)) + law.max_step + 1
        window = Window((0, 0), radius)
    probes = [LatticePoint(0, 0)] + [-p for p in pts]
    run = evolve(law, (0, 0), N, window, probes=probes, snapshots=())
    if run.leakage[-1] >= 1e-10:
        raise WindowTooSmall(f"leakage {run.leakage[-1]:.2e} at time {N} exceeds 1e-10")
    nu = law.period
    out = np.empty(len(pts))
    for k, p in enumerate(pts):
        partial = np.cumsum(run.probes[:, 0] - run.probes[:, k + 1])
        out[k] = 0.0 if p == (0, 0) else float(np.mean(partial[N - nu + 1:N + 1]))
    return out


def _circle_points(radius: float, angles: Sequence[float]) -> list[LatticePoint]:
    pts = []
    for psi in angles:
        p = LatticePoint(int(round(radius * math.cos(psi))), int(round(radius * math.sin(psi))))
        if p not in pts:
            pts.append(p)
    return pts


def estimate_cstar(
    law: StepLaw,
    radii: Sequence[int],
    angles: Sequence[float] | None = None,
    table: PotentialTable | None = None,
) -> tuple[float, float]:
    """Estimate c* in a(x) = kappa^-1 log||x|| + c* + o(1).

    Returns (c_hat, spread): c_hat is the mean of a(x) - kappa^-1 log||x||
    over the sample points at the largest radius, spread the largest
    deviation of any sample (at any radius) from c_hat.
    """
    if not radii:
        raise ValueError("need at least one radius")
    radii = sorted(radii)
    if angles is None:
        angles = [k * math.pi / 4 for k in range(8)]
    table = table or get_table(law)
    samples: list[np.ndarray] = []
    for R in radii:
        pts = _circle_points(R, angles)
        vals = table.many(pts)
        norms = np.sqrt(tilde_norm2(law, np.array(pts, dtype=float)))
        samples.append(vals - np.log(norms) / law.kappa)
    c_hat = float(np.mean(samples[-1]))
    spread = float(max(np.max(np.abs(s - c_hat)) for s in samples))
    return c_hat, spread
