"""Command-line entry point: ``latwalk <verb> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from .errors import LatwalkError


def _point(text: str):
    from .model import as_point

    return as_point(text)


def _add_law(p: argparse.ArgumentParser) -> None:
    p.add_argument("--law", default="srw", help="builtin name (srw, lazy-srw, kings, longstep) or a JSON file")


def _emit(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _key(p) -> str:
    return f"{p[0]},{p[1]}"


def cmd_potential(args) -> int:
    from .model import load_law
    from .potential import get_table, potential_a_series_oracle

    law = load_law(args.law)
    table = get_table(law, args.tol)
    out = {"law": law.name, "x": list(args.x), "a": table.a(args.x), "a_dagger": table.a_dagger(args.x), "abs_error": table.abs_error}
    if args.series:
        out["series"] = potential_a_series_oracle(law, args.x, args.series)
    if table.cache_dir is not None:
        table.save()
    _emit(out, args.out)
    return 0


def cmd_u(args) -> int:
    from .harmonic import KilledSystem, hitting_distribution, mu_from_infinity, u_A, u_tolerance

    sys_ = KilledSystem(args.law, args.set, R_t=args.R_t)
    H = hitting_distribution(sys_, args.x)
    mu = mu_from_infinity(sys_)
    out = {
        "uA": u_A(sys_, args.x),
        "hitting": {_key(p): float(h) for p, h in zip(sys_.A, H)},
        "mu": {_key(p): float(m) for p, m in zip(sys_.A, mu)},
        "tolerances": {"uA": u_tolerance(sys_, args.x), "potential": sys_.potential.abs_error},
    }
    _emit(out, args.out)
    return 0


def cmd_killed(args) -> int:
    from .harmonic import KilledSystem
    from .kernels import Window
    from .killed import evolve_killed

    sys_ = KilledSystem(args.law, args.set)
    win = Window.around(args.start, args.n, c=args.window_c, extra=list(sys_.A))
    sl = evolve_killed(sys_, args.start, args.n, win)
    if args.out:
        if args.binary:
            sl.to_binary(args.out)
        else:
            sl.to_csv(args.out)
    print(json.dumps({"n": sl.n, "live": sl.total(), "killed_mass": sl.killed_mass, "leakage": sl.leakage}))
    return 0


def cmd_escape(args) -> int:
    from .harmonic import KilledSystem
    from .killed import escape_probability

    sys_ = KilledSystem(args.law, args.set)
    es = escape_probability(sys_, args.R)
    x1, x2, v = es.values.as_arrays()
    out = {
        "R": es.R,
        "A": [list(p) for p in es.A],
        "residual": es.residual,
        "values": {f"{a},{b}": float(c) for a, b, c in zip(x1, x2, v)},
        "on_A": {_key(p): es.values[p] for p in es.A},
    }
    _emit(out, args.out)
    return 0


def cmd_mc(args) -> int:
    from .harmonic import KilledSystem
    from .montecarlo import SamplerConfig, mc_confinement, mc_escape, mc_overshoot

    cfg = SamplerConfig(seed=args.seed, replicas=args.replicas, max_steps=args.max_steps)
    if args.kind == "escape":
        est = mc_escape(KilledSystem(args.law, args.set), args.x, args.R, cfg)
    elif args.kind == "overshoot":
        est = mc_overshoot(args.law, args.x, args.R, cfg, tails=args.tails or ())
    else:
        est = mc_confinement(args.law, args.R, args.N, cfg)
    if args.json:
        print(json.dumps(est.to_json(), sort_keys=True))
    else:
        print(f"{est.mean:.6g} +- {est.std_error:.2g} ({est.replicas_used} replicas, truncated {est.truncated_fraction:g})")
    return 0


def _resolve_config(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    shipped = resources.files("latwalk") / "configs" / path
    if shipped.is_file():
        return Path(str(shipped))
    return p


def cmd_verify(args) -> int:
    from .harness import load_config, run_experiment

    cfg_path = _resolve_config(args.config)
    cfg = load_config(cfg_path)
    if args.law_id and cfg.get("law_id") != args.law_id:
        print(f"config law_id {cfg.get('law_id')!r} does not match --law-id {args.law_id}", file=sys.stderr)
        return 2
    out = args.out or f"out-{cfg.get('law_id', 'run').lower()}"
    code = run_experiment(cfg, out)
    _print_report(Path(out))
    return code


def _print_report(d: Path) -> None:
    man = json.loads((d / "manifest.json").read_text())
    if (d / "report.csv").exists():
        print((d / "report.csv").read_text(), end="")
    print(f"status: {man.get('status')}", end="")
    if "error" in man:
        print(f" ({man['error']['type']}: {man['error']['message']})", end="")
    print()
    for name, ok in sorted(man.get("checks", {}).items()):
        print(f"check {name}: {'pass' if ok else 'fail'}")


def cmd_report(args) -> int:
    d = Path(args.dir)
    if not (d / "manifest.json").exists():
        print(f"no manifest.json in {d}", file=sys.stderr)
        return 2
    _print_report(d)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="latwalk", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("potential", help="potential kernel a(x)")
    _add_law(p)
    p.add_argument("--x", type=_point, required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--series", type=int, default=0, help="also evaluate the truncated series with N terms")
    p.add_argument("--out")
    p.set_defaults(func=cmd_potential)

    p = sub.add_parser("u", help="u_A, hitting distribution and harmonic measure from infinity")
    _add_law(p)
    p.add_argument("--set", required=True, help='killing set, e.g. "0,0;1,0"')
    p.add_argument("--x", type=_point, required=True)
    p.add_argument("--R-t", dest="R_t", type=int, default=128)
    p.add_argument("--out")
    p.set_defaults(func=cmd_u)

    p = sub.add_parser("killed", help="exact killed evolution p_A^n(start, .)")
    _add_law(p)
    p.add_argument("--set", required=True)
    p.add_argument("--start", type=_point, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--window-c", type=float, default=6.0)
    p.add_argument("--out")
    p.add_argument("--binary", action="store_true", help="write the binary slice format instead of CSV")
    p.set_defaults(func=cmd_killed)

    p = sub.add_parser("escape", help="exact escape probabilities from U(R)")
    _add_law(p)
    p.add_argument("--set", required=True)
    p.add_argument("--R", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_escape)

    p = sub.add_parser("mc", help="Monte Carlo estimators")
    p.add_argument("kind", choices=["escape", "overshoot", "confine"])
    _add_law(p)
    p.add_argument("--set", default="0,0")
    p.add_argument("--x", type=_point, default=(0, 0))
    p.add_argument("--R", type=int, default=16)
    p.add_argument("--N", type=int, default=200)
    p.add_argument("--tails", type=float, nargs="*")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicas", type=int, default=100_000)
    p.add_argument("--max-steps", type=int, default=10_000_000)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("verify", help="run a ratio-table config and write a report bundle")
    p.add_argument("--law-id")
    p.add_argument("--config", required=True, help="config file, or the name of a shipped config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="print a report bundle")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LatwalkError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
