"""Asymptotic predictors, exact-vs-predicted ratio tables and run bundles.

"lg" in the asymptotic formulas is the natural logarithm throughout.
Exact values come from the deterministic engines: killed evolutions for
time-dependent quantities and the escape solver for disc exits.  Free
kernels p^n(z) come from one free evolution from the origin.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
import platform
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy import integrate

from . import __version__
from .errors import ConfigInvalid, InvalidStepLaw, InvariantViolation, LatwalkError, ParityZero
from .harmonic import KilledSystem, KillingSet, u_A
from .kernels import Window, evolve
from .killed import escape_probability
from .model import LatticePoint, PointLike, StepLaw, as_point, load_law, tilde_norm2

log = logging.getLogger(__name__)

__all__ = [
    "LawId",
    "RatioRow",
    "RatioReport",
    "ExactSource",
    "predicted_value",
    "ratio_series",
    "run_experiment",
    "load_config",
    "validate_config",
    "lem3_integral",
]

CSV_FIELDS = ["law_id", "param_n_or_R", "x1", "x2", "y1", "y2", "exact", "predicted", "ratio"]


class LawId(str, enum.Enum):
    THM1 = "THM1"
    COR1 = "COR1"
    PROP1_ESCAPE = "PROP1_ESCAPE"
    LEM1_RETURN = "LEM1_RETURN"
    LEM1_FAR = "LEM1_FAR"
    LEM3_CDF = "LEM3_CDF"
    PROP3_FREE = "PROP3_FREE"
    PROP4_HALF = "PROP4_HALF"
    SIGMA_MARGINAL = "SIGMA_MARGINAL"

    @property
    def scale(self) -> str:
        return "R" if self is LawId.PROP1_ESCAPE else "n"

    @property
    def needs_y(self) -> bool:
        return self in (LawId.THM1, LawId.COR1, LawId.PROP3_FREE, LawId.PROP4_HALF)


# ---------------------------------------------------------------------------
# exact sources


@dataclass
class _Run:
    n: int
    probes: tuple[LatticePoint, ...]
    trace: np.ndarray
    leakage: np.ndarray
    kill_log: np.ndarray | None = None
    kill_marginal: np.ndarray | None = None


class ExactSource:
    """Caches the deterministic runs that feed ratio tables.

    One free run from the origin (probing every needed displacement) and one
    killed run per start point are kept; a request is served from a cached
    run whenever its horizon and probe set cover it.
    """

    def __init__(self, window_c: float = 6.0):
        self.window_c = window_c
        self._free: dict[str, _Run] = {}
        self._killed: dict[tuple, _Run] = {}
        self._lock = threading.Lock()

    def free_run(self, law: StepLaw, n: int, displacements: Iterable[PointLike]) -> _Run:
        disp = tuple(sorted({as_point(z) for z in displacements}))
        with self._lock:
            run = self._free.get(law.law_hash)
            if run is not None and run.n >= n and set(disp) <= set(run.probes):
                return run
        if run is not None:
            n = max(n, run.n)
            disp = tuple(sorted(set(disp) | set(run.probes)))
        win = Window.around((0, 0), n, c=self.window_c, extra=disp)
        r = evolve(law, (0, 0), n, win, probes=disp, snapshots=())
        new = _Run(n, disp, r.probes, r.leakage)
        with self._lock:
            self._free[law.law_hash] = new
        return new

    def p_n(self, law: StepLaw, z: PointLike, n: int) -> float:
        z = as_point(z)
        run = self.free_run(law, n, [z])
        return float(run.trace[n, run.probes.index(z)])

    def killed_run(self, sys: KilledSystem, x: PointLike, n: int, probes: Iterable[PointLike] = ()) -> _Run:
        x = as_point(x)
        probes = tuple(sorted({as_point(y) for y in probes}))
        key = (sys.law.law_hash, sys.A.points, x)
        with self._lock:
            run = self._killed.get(key)
            if run is not None and run.n >= n and set(probes) <= set(run.probes):
                return run
        if run is not None:
            n = max(n, run.n)
            probes = tuple(sorted(set(probes) | set(run.probes)))
        win = Window.around(x, n, c=self.window_c, extra=list(sys.A.points) + list(probes))
        r = evolve(sys.law, x, n, win, kill=sys.A.points, probes=probes, snapshots=(), log_horizon=n)
        live = r.final.sum()
        total = math.fsum([float(live), math.fsum(r.kill_marginal), float(r.leakage[-1])])
        if abs(total - 1.0) > 1e-12 * max(n, 1):
            raise InvariantViolation(f"killed run mass accounting off by {abs(total - 1.0):.3e}")
        new = _Run(n, probes, r.probes, r.leakage, r.kill_log, r.kill_marginal)
        with self._lock:
            self._killed[key] = new
        return new


_DEFAULT_SOURCE = ExactSource()


# ---------------------------------------------------------------------------
# predictors


def lem3_integral(law: StepLaw, x: PointLike, n: int) -> float:
    """int_{x~^2/n}^inf exp(-u / 2 sigma^2) du / u by adaptive quadrature."""
    lo = float(tilde_norm2(law, np.array(as_point(x), dtype=float))) / n
    if lo <= 0:
        raise ValueError("the integral diverges at x = 0")
    lam = 1.0 / (2.0 * law.sigma ** 2)
    val, _ = integrate.quad(lambda u: math.exp(-lam * u) / u, lo, np.inf, epsabs=1e-10, epsrel=1e-10, limit=200)
    return val


def _mu(sys: KilledSystem, y: LatticePoint) -> float:
    """u_{-A}(-y), evaluated on the dual system."""
    return u_A(sys.dual, -y)


def _pn_or_raise(source: ExactSource, law: StepLaw, z: LatticePoint, n: int) -> float:
    v = source.p_n(law, z, n)
    if v == 0.0:
        raise ParityZero(f"p^{n}({tuple(z)}) = 0")
    return v


def predicted_value(id: LawId | str, sys: KilledSystem, params: Mapping[str, Any], source: ExactSource | None = None) -> float:
    """Leading-order prediction for ``id`` at ``params`` (keys n or R, x, y)."""
    id = LawId(id)
    source = source or _DEFAULT_SOURCE
    law = sys.law
    k = law.kappa
    x = as_point(params["x"])
    if id is LawId.PROP1_ESCAPE:
        return k * u_A(sys, x) / math.log(params["R"])
    n = int(params["n"])
    if n < 2:
        raise ValueError("n must be >= 2 for logarithmic predictors")
    ln = math.log(n)
    if id is LawId.THM1:
        y = as_point(params["y"])
        return 4 * k * k * u_A(sys, x) * _mu(sys, y) / ln ** 2 * _pn_or_raise(source, law, y - x, n)
    if id is LawId.COR1:
        xi = as_point(params["y"])
        return 4 * k * k * u_A(sys, x) * _mu(sys, xi) / ln ** 2 * _pn_or_raise(source, law, xi - x, n)
    if id is LawId.SIGMA_MARGINAL:
        return 4 * k * k * u_A(sys, x) / ln ** 2 * _pn_or_raise(source, law, -x, n)
    if id is LawId.PROP3_FREE:
        return _pn_or_raise(source, law, as_point(params["y"]) - x, n)
    if id is LawId.PROP4_HALF:
        return 2 * k * u_A(sys, x) / ln * _pn_or_raise(source, law, as_point(params["y"]) - x, n)
    _require_origin(sys, id)
    if id is LawId.LEM1_RETURN:
        _pn_or_raise(source, law, -x, n)
        return 2 * law.period * k * sys.potential.a_dagger(x) / (n * ln ** 2)
    if id is LawId.LEM1_FAR:
        return 4 * k * math.log(math.hypot(*x)) / ln ** 2 * _pn_or_raise(source, law, -x, n)
    if id is LawId.LEM3_CDF:
        return lem3_integral(law, x, n) / ln
    raise AssertionError(id)


def _require_origin(sys: KilledSystem, id: LawId) -> None:
    if sys.A.points != (LatticePoint(0, 0),):
        raise ValueError(f"{id.value} is stated for A = {{0}}")


def exact_value(id: LawId | str, sys: KilledSystem, params: Mapping[str, Any], source: ExactSource | None = None) -> tuple[float, float]:
    """(exact value, leakage allowance) for one grid point."""
    id = LawId(id)
    source = source or _DEFAULT_SOURCE
    x = as_point(params["x"])
    if id is LawId.PROP1_ESCAPE:
        return escape_probability(sys, int(params["R"])).values[x], 0.0
    n = int(params["n"])
    if id in (LawId.THM1, LawId.PROP3_FREE, LawId.PROP4_HALF):
        y = as_point(params["y"])
        run = source.killed_run(sys, x, n, [y])
        return float(run.trace[n, run.probes.index(y)]), float(run.leakage[n])
    run = source.killed_run(sys, x, n)
    if id is LawId.COR1:
        return float(run.kill_log[n, sys.A.index(params["y"])]), float(run.leakage[n])
    if id is LawId.LEM3_CDF:
        return math.fsum(run.kill_marginal[:n]), float(run.leakage[n])
    return float(run.kill_marginal[n]), float(run.leakage[n])


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class RatioRow:
    scale: int
    x: LatticePoint
    y: LatticePoint | None
    exact: float
    predicted: float

    @property
    def ratio(self) -> float:
        return self.exact / self.predicted


@dataclass
class RatioReport:
    law: LawId
    rows: list[RatioRow] = field(default_factory=list)
    skipped: list[tuple[dict, str]] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def ratios(self) -> list[float]:
        return [r.ratio for r in self.rows]

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            y = ("", "") if r.y is None else (r.y.x1, r.y.x2)
            w.writerow([self.law.value, r.scale, r.x.x1, r.x.x2, *y, repr(r.exact), repr(r.predicted), repr(r.ratio)])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "law_id": self.law.value,
            "rows": [
                {
                    self.law.scale: r.scale,
                    "x": list(r.x),
                    "y": None if r.y is None else list(r.y),
                    "exact": r.exact,
                    "predicted": r.predicted,
                    "ratio": r.ratio,
                }
                for r in self.rows
            ],
            "skipped": [{"params": p, "reason": why} for p, why in self.skipped],
            "metadata": self.metadata,
        }


def _jsonable(params: Mapping[str, Any]) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()}


def ratio_series(
    id: LawId | str,
    sys: KilledSystem,
    grid: Sequence[Mapping[str, Any]],
    source: ExactSource | None = None,
) -> RatioReport:
    """One row per grid point, sorted by n (or R).

    Rows whose predictor vanishes by parity, or whose exact value does not
    exceed the leakage allowance, are skipped with the reason logged.
    """
    id = LawId(id)
    source = source or _DEFAULT_SOURCE
    t0 = time.perf_counter()
    report = RatioReport(id, metadata={"law_hash": sys.law.law_hash, "law": sys.law.name, "A": [list(p) for p in sys.A]})
    key = id.scale
    pts = sorted(grid, key=lambda p: (int(p[key]), tuple(as_point(p["x"])), tuple(as_point(p.get("y", (0, 0))))))
    if id is not LawId.PROP1_ESCAPE and pts:
        n_max = max(int(p["n"]) for p in pts)
        source.free_run(sys.law, n_max, [as_point(p.get("y", (0, 0))) - as_point(p["x"]) for p in pts] + [-as_point(p["x"]) for p in pts])
        by_x: dict[LatticePoint, list] = {}
        for p in pts:
            by_x.setdefault(as_point(p["x"]), []).append(as_point(p["y"]) if id.needs_y and id is not LawId.COR1 else None)
        for x, ys in by_x.items():
            source.killed_run(sys, x, n_max, [y for y in ys if y is not None])
    for p in pts:
        try:
            pred = predicted_value(id, sys, p, source)
        except ParityZero as exc:
            report.skipped.append((_jsonable(p), f"parity: {exc}"))
            log.info("skipping %s %s: %s", id.value, p, exc)
            continue
        exact, leak = exact_value(id, sys, p, source)
        if not pred > 0:
            report.skipped.append((_jsonable(p), "nonpositive prediction"))
            continue
        if exact <= leak:
            report.skipped.append((_jsonable(p), f"exact value {exact:.3e} below leakage {leak:.3e}"))
            log.info("skipping %s %s: below leakage", id.value, p)
            continue
        y = as_point(p["y"]) if id.needs_y else None
        report.rows.append(RatioRow(int(p[key]), as_point(p["x"]), y, exact, pred))
    report.metadata["tolerances"] = {"potential": sys.potential.abs_error}
    report.metadata["wall_time"] = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# configs and run bundles


DEFAULT_M = 4.0
_PARABOLIC = (LawId.THM1, LawId.COR1)


def load_config(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc


def _pair(v, what) -> LatticePoint:
    try:
        return as_point(v)
    except Exception as exc:  # noqa: BLE001
        raise ConfigInvalid(f"bad {what}: {v!r}") from exc


def validate_config(cfg: Mapping[str, Any]) -> tuple[LawId, KilledSystem, list[dict]]:
    """Check a config and expand it into (law id, system, grid).

    Grid points outside the parabolic regime |x| v |y| <= M sqrt(n) are
    refused for the THM1 and COR1 ids.
    """
    try:
        id = LawId(cfg["law_id"])
    except (KeyError, ValueError) as exc:
        raise ConfigInvalid(f"law_id missing or unknown: {cfg.get('law_id')!r}") from exc
    if "law" not in cfg:
        raise ConfigInvalid("config needs a 'law'")
    law = load_law(cfg["law"])  # InvalidStepLaw propagates
    A_spec = cfg.get("A", "0,0")
    pts = A_spec if isinstance(A_spec, str) else [_pair(p, "A point") for p in A_spec]
    A = KillingSet(pts, cfg.get("anchor"))
    sys = KilledSystem(law, A, R_t=int(cfg.get("R_t", 128)))
    pairs = cfg.get("pairs")
    if pairs is None:
        if "x" not in cfg:
            raise ConfigInvalid("config needs 'x' or 'pairs'")
        pairs = [{"x": cfg["x"], "y": cfg.get("y")}]
    scale = id.scale
    values = cfg.get(scale)
    if not isinstance(values, list) or not values:
        raise ConfigInvalid(f"{id.value} needs a nonempty list '{scale}'")
    M = float(cfg.get("M", DEFAULT_M))
    grid = []
    for pr in pairs:
        x = _pair(pr["x"], "x")
        y = None
        if id.needs_y:
            if pr.get("y") is None:
                raise ConfigInvalid(f"{id.value} needs y")
            y = _pair(pr["y"], "y")
        for v in values:
            if int(v) != v or v < 2:
                raise ConfigInvalid(f"bad {scale} value {v!r}")
            p = {scale: int(v), "x": tuple(x)}
            if y is not None:
                p["y"] = tuple(y)
            if id in _PARABOLIC:
                reach = max(math.hypot(*x), math.hypot(*y))
                if reach > M * math.sqrt(v):
                    raise ConfigInvalid(f"{p} is outside the parabolic regime |x| v |y| <= {M} sqrt(n)")
            grid.append(p)
    return id, sys, grid


def _check_bands(report: RatioReport, cfg: Mapping[str, Any]) -> dict:
    """Evaluate the optional acceptance bands stored in the config."""
    checks = {}
    r = report.ratios
    band = cfg.get("final_band")
    if band is not None:
        checks["final_band"] = bool(r) and band[0] <= r[-1] <= band[1]
    start = cfg.get("monotone_from")
    if start is not None:
        dist = [abs(v - 1.0) for v in r[int(start):]]
        checks["monotone"] = all(b < a for a, b in zip(dist, dist[1:]))
    return checks


def run_experiment(config: str | Path | Mapping[str, Any], out_dir: str | Path, source: ExactSource | None = None) -> int:
    """Run a config and write config.json, report.csv, report.json and
    manifest.json into ``out_dir``.

    Returns 0 on success, 1 if a configured band check fails and 2 on an
    invalid config or law or a detected invariant violation.
    """
    t0 = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = load_config(config) if not isinstance(config, Mapping) else dict(config)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    manifest: dict[str, Any] = {
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seeds": {"seed": cfg.get("seed", 0)},
    }
    code = 0
    try:
        id, sys, grid = validate_config(cfg)
        report = ratio_series(id, sys, grid, source or ExactSource(float(cfg.get("window_c", 6.0))))
        wall = report.metadata.pop("wall_time", None)
        (out / "report.csv").write_text(report.csv_text())
        (out / "report.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")
        checks = _check_bands(report, cfg)
        manifest.update(law_hash=sys.law.law_hash, rows=len(report.rows), skipped=len(report.skipped), checks=checks, solve_time=wall)
        manifest["status"] = "ok" if all(checks.values()) else "band-check-failed"
        code = 0 if all(checks.values()) else 1
    except (InvalidStepLaw, InvariantViolation, ConfigInvalid, LatwalkError) as exc:
        manifest["status"] = "error"
        manifest["error"] = {"type": type(exc).__name__, "message": str(exc)}
        code = 2
    manifest["wall_time"] = time.perf_counter() - t0
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return code
