"""Path sampling: independent oracles for escape and hitting quantities and
direct checks of the overshoot and confinement bounds.

Replicas are grouped in fixed blocks of ``BLOCK`` paths.  Block b draws
from an SFC64 stream seeded by ``SeedSequence(seed, spawn_key=(b,))``, so
results depend only on (seed, replicas) and never on how blocks are
scheduled.  Aggregation uses integer counts and ``math.fsum``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np
from scipy import stats

from .errors import ExcessTruncation
from .harmonic import KilledSystem
from .model import PointLike, StepLaw, as_point, load_law

__all__ = [
    "BLOCK",
    "SamplerConfig",
    "EstimateWithCI",
    "mc_escape",
    "mc_hitting",
    "mc_overshoot",
    "mc_confinement",
    "confinement_slope",
]

BLOCK = 1 << 16
TRUNCATION_LIMIT = 1e-4


@dataclass(frozen=True)
class SamplerConfig:
    seed: int = 0
    replicas: int = 1_000_000
    max_steps: int = 10_000_000

    def __post_init__(self):
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class EstimateWithCI:
    mean: float
    std_error: float
    replicas_used: int
    truncated_fraction: float
    extras: dict = field(default_factory=dict)

    def interval(self, z: float = 3.0) -> tuple[float, float]:
        return (self.mean - z * self.std_error, self.mean + z * self.std_error)

    def to_json(self) -> dict:
        out = {
            "mean": self.mean,
            "std_error": self.std_error,
            "replicas_used": self.replicas_used,
            "truncated_fraction": self.truncated_fraction,
        }
        if self.extras:
            out["extras"] = self.extras
        return out


def _workers() -> int:
    want = os.environ.get("LATWALK_THREADS")
    return max(1, int(want)) if want else (os.cpu_count() or 1)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.SFC64(np.random.SeedSequence(seed, spawn_key=(block,))))


@dataclass
class _BlockResult:
    code: np.ndarray  # 0 = truncated, >0 = stop category
    x1: np.ndarray
    x2: np.ndarray


# Stop rules understood by the compiled walker.
_DISC_SET = 0  # code 1: |S|^2 >= R^2; code 2 + i: S = A[i]
_STRIP = 1  # code 1: |first coordinate| >= R


@dataclass(frozen=True)
class _StopRule:
    kind: int
    R: int
    ax: np.ndarray
    ay: np.ndarray


def _disc_set_rule(R: int, A_points) -> _StopRule:
    ax = np.array([p[0] for p in A_points], dtype=np.int64)
    ay = np.array([p[1] for p in A_points], dtype=np.int64)
    return _StopRule(_DISC_SET, int(R), ax, ay)


@numba.njit(cache=True, nogil=True)
def _walk_chunk(x, y, u, cum, dx, dy, kind, R, ax, ay, code):
    """Advance each path through its row of uniforms until it stops."""
    R2 = R * R
    nsup = cum.shape[0]
    for i in range(x.shape[0]):
        xi, yi = x[i], y[i]
        for t in range(u.shape[1]):
            v = u[i, t]
            k = 0
            while k < nsup - 1 and v >= cum[k]:
                k += 1
            xi += dx[k]
            yi += dy[k]
            c = 0
            if kind == 0:
                if xi * xi + yi * yi >= R2:
                    c = 1
                else:
                    for a in range(ax.shape[0]):
                        if xi == ax[a] and yi == ay[a]:
                            c = 2 + a
                            break
            elif xi >= R or xi <= -R:
                c = 1
            if c != 0:
                code[i] = c
                break
        x[i], y[i] = xi, yi


def _run_block(law: StepLaw, start, m: int, rng, rule: _StopRule, max_steps: int) -> _BlockResult:
    """Walk ``m`` paths from ``start`` until the stop rule fires.

    Uniforms are drawn as (active paths) x (chunk) matrices, chunk length
    doubling from 16 up to 256, so the stream consumed is a function of
    the block alone.
    """
    cum = np.cumsum(law.probs)
    cum[-1] = 1.0
    dx = law.steps[:, 0].astype(np.int64)
    dy = law.steps[:, 1].astype(np.int64)
    code = np.zeros(m, dtype=np.int64)
    fx = np.full(m, start[0], dtype=np.int64)
    fy = np.full(m, start[1], dtype=np.int64)
    idx = np.arange(m)
    x, y = fx.copy(), fy.copy()
    done_steps, chunk = 0, 16
    while idx.size and done_steps < max_steps:
        S = min(chunk, max_steps - done_steps)
        c = np.zeros(idx.size, dtype=np.int64)
        _walk_chunk(x, y, rng.random((idx.size, S)), cum, dx, dy, rule.kind, rule.R, rule.ax, rule.ay, c)
        done_steps += S
        chunk = min(2 * chunk, 256)
        fin = c != 0
        if fin.any():
            sel = idx[fin]
            code[sel] = c[fin]
            fx[sel], fy[sel] = x[fin], y[fin]
            keep = ~fin
            idx, x, y = idx[keep], x[keep], y[keep]
    if idx.size:
        fx[idx], fy[idx] = x, y
    return _BlockResult(code, fx, fy)


def _sample(law: StepLaw, start, cfg: SamplerConfig, rule: _StopRule, max_steps: int | None = None):
    n_blocks = -(-cfg.replicas // BLOCK)
    sizes = [min(BLOCK, cfg.replicas - b * BLOCK) for b in range(n_blocks)]
    steps = cfg.max_steps if max_steps is None else max_steps

    def job(b):
        return _run_block(law, start, sizes[b], _block_rng(cfg.seed, b), rule, steps)

    workers = min(_workers(), n_blocks)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(job, range(n_blocks)))
    else:
        results = [job(b) for b in range(n_blocks)]
    return _BlockResult(
        np.concatenate([r.code for r in results]),
        np.concatenate([r.x1 for r in results]),
        np.concatenate([r.x2 for r in results]),
    )


def _bernoulli(hits: int, n: int, truncated: int, extras=None) -> EstimateWithCI:
    p = hits / n
    return EstimateWithCI(p, math.sqrt(p * (1.0 - p) / n), n, truncated / n, extras or {})


def _check_truncation(res: _BlockResult, n: int) -> int:
    trunc = int(np.count_nonzero(res.code == 0))
    if trunc / n > TRUNCATION_LIMIT:
        raise ExcessTruncation(f"{trunc} of {n} paths reached max_steps")
    return trunc


def mc_hitting(sys: KilledSystem, x: PointLike, R: int, cfg: SamplerConfig) -> dict:
    """Frequencies of {leave U(R) first} and {enter A first, at xi}.

    Returns {"escape": EstimateWithCI, "hit": [EstimateWithCI per point of A]}.
    """
    x = as_point(x)
    if x.x1 ** 2 + x.x2 ** 2 >= R * R:
        raise ValueError(f"start {tuple(x)} is not in U({R})")
    res = _sample(sys.law, x, cfg, _disc_set_rule(R, sys.A.points))
    n = cfg.replicas
    trunc = _check_truncation(res, n)
    counts = np.bincount(res.code, minlength=2 + len(sys.A))
    return {
        "escape": _bernoulli(int(counts[1]), n, trunc),
        "hit": [_bernoulli(int(counts[2 + i]), n, trunc) for i in range(len(sys.A))],
    }


def mc_escape(sys: KilledSystem, x: PointLike, R: int, cfg: SamplerConfig) -> EstimateWithCI:
    """Frequency of {tau_{U(R)} < sigma_A} with binomial standard error."""
    return mc_hitting(sys, x, R, cfg)["escape"]


def mc_overshoot(
    law: StepLaw | str,
    x: PointLike,
    R: int,
    cfg: SamplerConfig,
    tails: Sequence[float] = (),
) -> EstimateWithCI:
    """Estimate E_x[|S_tau| - R] / R for the exit time tau of U(R).

    ``extras["tails"]`` maps each h in ``tails`` to the frequency of
    |S_tau| > R + h.
    """
    law = load_law(law)
    x = as_point(x)
    if x.x1 ** 2 + x.x2 ** 2 >= R * R:
        raise ValueError(f"start {tuple(x)} is not in U({R})")
    res = _sample(law, x, cfg, _disc_set_rule(R, ()))
    n = cfg.replicas
    trunc = _check_truncation(res, n)
    ok = res.code == 1
    r = np.sqrt((res.x1[ok] ** 2 + res.x2[ok] ** 2).astype(float))
    over = (r - R) / R
    m = over.size
    mean = math.fsum(over) / m
    var = math.fsum((over - mean) ** 2) / max(m - 1, 1)
    tail = {float(h): int(np.count_nonzero(r > R + h)) / m for h in tails}
    return EstimateWithCI(mean, math.sqrt(var / m), n, trunc / n, {"tails": tail} if tails else {})


def mc_confinement(law: StepLaw | str, R: int, N: int, cfg: SamplerConfig) -> EstimateWithCI:
    """P_0[|first coordinate| < R for all k <= N]."""
    law = load_law(law)
    if R <= 0 or N < 0:
        raise ValueError("R must be positive and N nonnegative")
    n = cfg.replicas
    if N == 0:
        return EstimateWithCI(1.0, 0.0, n, 0.0)

    rule = _StopRule(_STRIP, int(R), np.zeros(0, np.int64), np.zeros(0, np.int64))
    res = _sample(law, (0, 0), cfg, rule, max_steps=N)
    stayed = int(np.count_nonzero(res.code == 0))
    return _bernoulli(stayed, n, 0)


def confinement_slope(
    law: StepLaw | str,
    R: int,
    Ns: Sequence[int],
    cfg: SamplerConfig,
) -> tuple[float, float, list[EstimateWithCI]]:
    """Least-squares slope and R^2 of ln p_hat against N / R^2."""
    est = [mc_confinement(law, R, N, cfg) for N in Ns]
    if any(e.mean <= 0 for e in est):
        raise ValueError("confinement estimate is zero; use more replicas or smaller N")
    fit = stats.linregress(np.asarray(Ns, float) / R ** 2, np.log([e.mean for e in est]))
    return float(fit.slope), float(fit.rvalue ** 2), est
