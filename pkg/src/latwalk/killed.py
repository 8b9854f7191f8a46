"""Exact time-dependent quantities of the killed walk.

The killed kernel p_A^n is the free evolution with the cells of A zeroed
after every step; what is removed at step k is exactly
P_x[sigma_A = k, S_k = xi].  Escape probabilities from a disc are the
solution of a finite linear system and involve no truncation.
"""
from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from ._dirichlet import DiscSystem
from .errors import InvariantViolation, RadiusTooSmall
from .harmonic import KilledSystem, KillingSet
from .kernels import FieldSlice, Window, evolve
from .model import LatticePoint, PointLike, StepLaw, as_point, load_law

__all__ = [
    "KilledFieldSlice",
    "EscapeSolve",
    "evolve_killed",
    "first_hitting_law",
    "escape_probability",
    "sigma_law_singleton",
]


@dataclass(frozen=True, eq=False)
class KilledFieldSlice(FieldSlice):
    """Live mass p_A^n(start, .) plus the record of what A absorbed.

    ``absorption_log[k, i]`` is P_start[sigma_A = k, S_k = A[i]] for k up to
    the log horizon; ``absorption_marginal[k]`` is P_start[sigma_A = k] for
    every k <= n.
    """

    A: KillingSet | None = None
    killed_mass: float = 0.0
    absorption_log: np.ndarray | None = None
    absorption_marginal: np.ndarray | None = None

    def mass_defect(self) -> float:
        return abs(self.total() + self.killed_mass + self.leakage - 1.0)


def _default_window(sys: KilledSystem, start: LatticePoint, n: int) -> Window:
    return Window.around(start, n, extra=sys.A.points)


def evolve_killed(
    sys: KilledSystem,
    start: PointLike,
    n: int,
    window: Window | None = None,
    log_horizon: int = 2 ** 14,
) -> KilledFieldSlice:
    """p_A^n(start, .) on ``window`` with the absorption record."""
    start = as_point(start)
    if window is None:
        window = _default_window(sys, start, n)
    run = evolve(sys.law, start, n, window, kill=sys.A.points, log_horizon=log_horizon)
    killed = math.fsum(run.kill_marginal)
    sl = KilledFieldSlice(
        window=window,
        n=n,
        mass=run.snapshots[n],
        leakage=float(run.leakage[-1]),
        A=sys.A,
        killed_mass=killed,
        absorption_log=run.kill_log,
        absorption_marginal=run.kill_marginal,
    )
    if sl.mass_defect() > 1e-12 * max(n, 1):
        raise InvariantViolation(f"mass accounting off by {sl.mass_defect():.3e} at n={n}")
    return sl


def first_hitting_law(
    sys: KilledSystem,
    start: PointLike,
    xi: PointLike,
    n_max: int,
    window: Window | None = None,
) -> np.ndarray:
    """(P_start[sigma_A = n, S_n = xi])_{n = 0..n_max}; entry 0 is always 0."""
    xi = as_point(xi)
    if xi not in sys.A:
        raise ValueError(f"{tuple(xi)} is not a point of A")
    if n_max > 2 ** 24:
        raise ValueError("n_max too large for a per-point absorption log")
    sl = evolve_killed(sys, start, n_max, window, log_horizon=n_max)
    return sl.absorption_log[:, sys.A.index(xi)].copy()


class _DiscValues(Mapping):
    """Read-only map from points of U(R) to solved values."""

    def __init__(self, system: DiscSystem, v: np.ndarray, on_A: dict[LatticePoint, float]):
        self._system = system
        self._v = v
        self._on_A = on_A

    def __getitem__(self, z) -> float:
        z = as_point(z)
        if z in self._on_A:
            return self._on_A[z]
        k = self._system.index(z)
        if k < 0:
            raise KeyError(tuple(z))
        return float(self._v[k])

    def __iter__(self):
        for a, b in zip(self._system.x1, self._system.x2):
            yield LatticePoint(int(a), int(b))
        yield from self._on_A

    def __len__(self):
        return self._system.n + len(self._on_A)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(x1, x2, value) for the points off A."""
        return self._system.x1, self._system.x2, self._v


@dataclass(frozen=True)
class EscapeSolve:
    """P_x[tau_{U(R)} < sigma_A] for every x in U(R)."""

    A: KillingSet
    R: int
    values: _DiscValues
    residual: float


def escape_probability(sys: KilledSystem, R: int) -> EscapeSolve:
    """Exact escape probabilities from the disc U(R) before hitting A.

    Points of A get the one-step value, consistent with sigma_A >= 1.
    """
    R = int(R)
    if R < sys.A.diam + 2:
        raise RadiusTooSmall(f"R={R} < diam(A) + 2")
    for xi in sys.A:
        if xi.x1 ** 2 + xi.x2 ** 2 >= R * R:
            raise RadiusTooSmall(f"A point {tuple(xi)} is outside U({R})")
    S = DiscSystem(sys.law, R, sys.A.points)
    v, res = S.solve(S.exit_flux)
    S.release()
    np.clip(v, 0.0, 1.0, out=v)
    on_A = {}
    for xi in sys.A:
        acc = []
        for s, w in zip(sys.law.steps, sys.law.probs):
            z = (xi.x1 + int(s[0]), xi.x2 + int(s[1]))
            if z in sys.A:
                continue
            acc.append(w if not S.in_disc(z) else w * v[S.index(z)])
        on_A[xi] = math.fsum(acc)
    return EscapeSolve(sys.A, R, _DiscValues(S, v, on_A), res)


def sigma_law_singleton(
    law: StepLaw | str,
    x: PointLike,
    n_max: int,
    window: Window | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(pmf, cdf) of sigma_{0} from x for n = 0..n_max."""
    law = load_law(law)
    sys = KilledSystem(law, [(0, 0)])
    sl = evolve_killed(sys, x, n_max, window, log_horizon=0)
    pmf = sl.absorption_marginal.copy()
    return pmf, np.cumsum(pmf)
