"""Exact free evolution p^n on bounded windows and the Gaussian comparator.

The walk is evolved on the disc U(center, radius) = {z : |z - center| < radius}.
Mass that steps out of the disc is removed and accumulated as ``leakage``;
in-window values are therefore P_start[S_n = y, walk stayed in the disc], which
differ from p^n(y - start) by at most the leakage.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import _stencil
from .errors import StartOutsideWindow, WindowTooSmall
from .model import LatticePoint, PointLike, StepLaw, as_point, tilde_norm2

__all__ = [
    "Window",
    "FieldSlice",
    "EvolutionRun",
    "evolve_free",
    "evolve",
    "gaussian_density",
    "llt_deviation",
    "default_radius",
]

_MAGIC = b"LWF1"
_HEADER = struct.Struct("<4sqqqQd")


def default_radius(start: PointLike, n: int, c: float = 6.0, center: PointLike = (0, 0)) -> int:
    """|start - center| + c sqrt(n), rounded up so the start is strictly inside."""
    s, ctr = as_point(start), as_point(center)
    d = math.hypot(s.x1 - ctr.x1, s.x2 - ctr.x2)
    return int(math.floor(d + c * math.sqrt(max(n, 1)))) + 1


@dataclass(frozen=True)
class Window:
    """Lattice disc U(center, radius), stored as its bounding square plus a mask."""

    center: LatticePoint
    radius: int

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError(f"radius must be a positive integer, got {self.radius!r}")
        object.__setattr__(self, "radius", int(self.radius))

    @classmethod
    def around(cls, start: PointLike, n: int, c: float = 6.0, center: PointLike = (0, 0), extra: Iterable = ()):
        """Default window for an n-step run; ``extra`` points are forced inside."""
        r = default_radius(start, n, c, center)
        ctr = as_point(center)
        for p in extra:
            p = as_point(p)
            r = max(r, int(math.floor(math.hypot(p.x1 - ctr.x1, p.x2 - ctr.x2))) + 2)
        return cls(ctr, r)

    @property
    def half(self) -> int:
        return self.radius - 1

    @property
    def shape(self) -> tuple[int, int]:
        return (2 * self.half + 1, 2 * self.half + 1)

    def contains(self, z: PointLike) -> bool:
        z = as_point(z)
        d1, d2 = z.x1 - self.center.x1, z.x2 - self.center.x2
        return d1 * d1 + d2 * d2 < self.radius * self.radius

    def index(self, z: PointLike) -> tuple[int, int]:
        z = as_point(z)
        return (z.x1 - self.center.x1 + self.half, z.x2 - self.center.x2 + self.half)

    @cached_property
    def mask(self) -> np.ndarray:
        d = np.arange(-self.half, self.half + 1)
        return (d[:, None] ** 2 + d[None, :] ** 2) < self.radius ** 2

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        d1 = np.arange(-self.half, self.half + 1) + self.center.x1
        d2 = np.arange(-self.half, self.half + 1) + self.center.x2
        return np.meshgrid(d1, d2, indexing="ij")


@dataclass(frozen=True, eq=False)
class FieldSlice:
    """Probability mass on a window at time n, with cumulative leakage."""

    window: Window
    n: int
    mass: np.ndarray
    leakage: float

    def value(self, z: PointLike) -> float:
        if not self.window.contains(z):
            return 0.0
        return float(self.mass[self.window.index(z)])

    __getitem__ = value

    def total(self) -> float:
        return math.fsum(self.mass.ravel())

    def nonzero_points(self) -> list[LatticePoint]:
        X1, X2 = self.window.coords
        sel = self.mass > 0
        return [LatticePoint(int(a), int(b)) for a, b in zip(X1[sel], X2[sel])]

    def to_csv(self, path) -> None:
        X1, X2 = self.window.coords
        m = self.window.mask
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x1", "x2", "value"])
            for a, b, v in zip(X1[m], X2[m], self.mass[m]):
                w.writerow([int(a), int(b), repr(float(v))])

    def to_binary(self, path) -> None:
        c = self.window.center
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, c.x1, c.x2, self.window.radius, self.n, self.leakage))
            fh.write(np.ascontiguousarray(self.mass, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "FieldSlice":
        with open(path, "rb") as fh:
            head = fh.read(_HEADER.size)
            magic, c1, c2, radius, n, leak = _HEADER.unpack(head)
            if magic != _MAGIC:
                raise ValueError(f"{path}: not a LWF1 field dump")
            win = Window((c1, c2), radius)
            cells = np.frombuffer(fh.read(), dtype="<f8").reshape(win.shape).copy()
        return cls(win, n, cells, leak)


@dataclass
class EvolutionRun:
    """Raw output of one engine run (shared by the free and killed APIs)."""

    window: Window
    start: LatticePoint
    n: int
    snapshots: dict[int, np.ndarray]
    leak_per_step: np.ndarray
    kill_points: tuple[LatticePoint, ...]
    kill_log: np.ndarray
    kill_marginal: np.ndarray
    probe_points: tuple[LatticePoint, ...]
    probes: np.ndarray
    final: np.ndarray = field(repr=False)

    @property
    def leakage(self) -> np.ndarray:
        """Cumulative leakage after each step."""
        return np.cumsum(self.leak_per_step)

    @property
    def killed(self) -> np.ndarray:
        return np.cumsum(self.kill_marginal)

    def probe(self, z: PointLike) -> np.ndarray:
        return self.probes[:, self.probe_points.index(as_point(z))]


class _Geometry:
    """Padded working grid for a window and a law."""

    def __init__(self, law: StepLaw, window: Window):
        self.law = law
        self.window = window
        P = law.max_step
        self.pad = P
        h = window.half
        size = 2 * h + 1 + 2 * P
        self.size = size
        d = np.arange(-h, h + 1)
        half_rows = np.floor(np.sqrt(np.maximum(window.radius ** 2 - 1 - d ** 2, 0))).astype(np.int64)
        jlo = np.full(size, 1, dtype=np.int64)
        jhi = np.full(size, 0, dtype=np.int64)
        jlo[P:P + 2 * h + 1] = h - half_rows + P
        jhi[P:P + 2 * h + 1] = h + half_rows + P
        self.jlo, self.jhi = jlo, jhi
        self.disc_ilo, self.disc_ihi = P, P + 2 * h

        # per-cell probability of stepping out of the disc
        mask = window.mask
        out = np.zeros(mask.shape)
        for (z, p) in law.support:
            src = _shift(mask, z.x1, z.x2)
            out += p * (~src)
        out[~mask] = 0.0
        ii, jj = np.nonzero(out > 0)
        self.leak_i = (ii + P).astype(np.int64)
        self.leak_j = (jj + P).astype(np.int64)
        self.leak_w = out[ii, jj].astype(np.float64)
        self.terms = _stencil.stencil_terms(law)

    def cell(self, z: LatticePoint) -> tuple[int, int]:
        i, j = self.window.index(z)
        return i + self.pad, j + self.pad

    def buffer(self) -> np.ndarray:
        return np.zeros((self.size, self.size))

    def crop(self, buf: np.ndarray) -> np.ndarray:
        P = self.pad
        h = self.window.half
        return buf[P:P + 2 * h + 1, P:P + 2 * h + 1].copy()


def _shift(mask: np.ndarray, a: int, b: int) -> np.ndarray:
    """out[i, j] = mask[i + a, j + b], False beyond the array."""
    out = np.zeros_like(mask)
    n1, n2 = mask.shape
    src = mask[max(a, 0):n1 + min(a, 0), max(b, 0):n2 + min(b, 0)]
    out[max(-a, 0):n1 - max(a, 0), max(-b, 0):n2 - max(b, 0)] = src
    return out


_GEOMETRY_CACHE: dict = {}


def _geometry(law: StepLaw, window: Window) -> _Geometry:
    key = (law.law_hash, window)
    g = _GEOMETRY_CACHE.get(key)
    if g is None:
        if len(_GEOMETRY_CACHE) > 8:
            _GEOMETRY_CACHE.clear()
        g = _GEOMETRY_CACHE[key] = _Geometry(law, window)
    return g


def evolve(
    law: StepLaw,
    start: PointLike,
    n: int,
    window: Window | None = None,
    *,
    kill: Sequence[PointLike] = (),
    probes: Sequence[PointLike] = (),
    snapshots: Sequence[int] | None = None,
    initial: "FieldSlice | None" = None,
    log_horizon: int = 2 ** 14,
    window_c: float = 6.0,
) -> EvolutionRun:
    """Run the exact evolution engine.

    ``kill`` points absorb mass after every step (times >= 1).  ``snapshots``
    defaults to ``(n,)``.  With ``initial`` the run continues from that slice
    (its time is the starting time and ``start`` is ignored for reach
    bounds).
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    start = as_point(start)
    kill = tuple(as_point(p) for p in kill)
    probes = tuple(as_point(p) for p in probes)
    if window is None:
        window = initial.window if initial is not None else Window.around(start, n, c=window_c, extra=kill)
    if initial is None and not window.contains(start):
        raise StartOutsideWindow(f"start {tuple(start)} is outside {window}")
    for p in kill:
        if not window.contains(p):
            raise StartOutsideWindow(f"killing point {tuple(p)} is outside {window}")
    geo = _geometry(law, window)
    cur, nxt = geo.buffer(), geo.buffer()
    t0 = 0
    if initial is not None:
        if initial.window != window:
            raise ValueError("continuation must use the slice's own window")
        P = geo.pad
        h = window.half
        cur[P:P + 2 * h + 1, P:P + 2 * h + 1] = initial.mass
        t0 = initial.n
        reach = 1 << 40
    else:
        cur[geo.cell(start)] = 1.0
        reach = law.max_step
    snap_times = np.array(sorted(set(snapshots if snapshots is not None else (t0 + n,))), dtype=np.int64)
    if snap_times.size and (snap_times[0] < t0 or snap_times[-1] > t0 + n):
        raise ValueError("snapshot times must lie within the run")
    snaps = np.zeros((snap_times.size, geo.size, geo.size))
    ki = np.array([geo.cell(p)[0] for p in kill], dtype=np.int64)
    kj = np.array([geo.cell(p)[1] for p in kill], dtype=np.int64)
    inside = [window.contains(p) for p in probes]
    pi = np.array([geo.cell(p)[0] if ok else geo.pad for p, ok in zip(probes, inside)], dtype=np.int64)
    pj = np.array([geo.cell(p)[1] if ok else 0 for p, ok in zip(probes, inside)], dtype=np.int64)
    si, sj = geo.cell(start) if initial is None else (0, 0)

    _stencil.configure_threads()
    tw, tax, tay, tbx, tby, tpair = geo.terms
    leak, klog, kmarg, trace, final = _stencil._evolve(
        cur, nxt, int(n), int(t0), tw, tax, tay, tbx, tby, tpair, geo.jlo, geo.jhi,
        geo.disc_ilo, geo.disc_ihi, si, sj, reach, geo.leak_i, geo.leak_j, geo.leak_w,
        ki, kj, pi, pj, snap_times, snaps, int(log_horizon),
    )
    for col, ok in enumerate(inside):
        if not ok:
            trace[:, col] = 0.0
    if initial is not None:
        leak[0] = initial.leakage
    return EvolutionRun(
        window=window,
        start=start,
        n=int(n),
        snapshots={int(t): geo.crop(s) for t, s in zip(snap_times, snaps)},
        leak_per_step=leak,
        kill_points=kill,
        kill_log=klog,
        kill_marginal=kmarg,
        probe_points=probes,
        probes=trace,
        final=geo.crop(final),
    )


def evolve_free(law: StepLaw, start: PointLike, n: int, window: Window | None = None, **kw) -> FieldSlice:
    """Exact n-step distribution of the walk from ``start``, confined to ``window``.

    The default window is the disc of radius |start| + 6 sqrt(n) around the
    origin.
    """
    run = evolve(law, start, n, window, **kw)
    t = max(run.snapshots)
    return FieldSlice(run.window, t, run.snapshots[t], float(run.leakage[-1]))


def gaussian_density(law: StepLaw, t: float, x) -> float | np.ndarray:
    """(2 pi t)^{-1} exp(-||x||^2 / 2t) in the walk's anisotropic norm."""
    if t <= 0:
        raise ValueError("t must be positive")
    return np.exp(-tilde_norm2(law, x) / (2.0 * t)) / (2.0 * math.pi * t)


def llt_deviation(law: StepLaw, n: int, window: Window | None = None) -> float:
    """max_x n |p^n(x) - nu g_{sigma^2 n}(x~)| over window points with p^n(x) > 0."""
    if n < 1:
        raise ValueError("n must be >= 1")
    need = 6.0 * math.sqrt(n)
    if window is None:
        window = Window((0, 0), int(math.ceil(need)) + 1)
    elif window.radius < need:
        raise WindowTooSmall(f"radius {window.radius} < 6 sqrt(n) = {need:.1f}")
    sl = evolve_free(law, (0, 0), n, window)
    X1, X2 = window.coords
    sel = sl.mass > 0
    pts = np.stack([X1[sel], X2[sel]], axis=-1)
    g = law.period * gaussian_density(law, law.sigma ** 2 * n, pts)
    return float(n * np.max(np.abs(sl.mass[sel] - g)))
