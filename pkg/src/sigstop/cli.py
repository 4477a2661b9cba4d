"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 pricing-invariant violation under ``price --check``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .errors import AcceptanceError, ConfigError, NumericalError, SigstopError


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None,
                   help="JSON config file; flags override file values")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field, e.g. --set m_train=4096")
    p.add_argument("--model", type=str, default=None)
    p.add_argument("--strike", type=float, action="append", default=None)
    p.add_argument("--backend", type=str, action="append", default=None)
    p.add_argument("--m-train", type=int, default=None)
    p.add_argument("--m-test", type=int, default=None)
    p.add_argument("--n-fine", type=int, default=None)
    p.add_argument("--level", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--hurst", type=float, default=None)
    p.add_argument("--out-dir", type=str, default=None)
    p.add_argument("--cache-dir", type=str, default=None)
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--force-sim", action="store_true",
                   help="regenerate cached paths")


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _resolve_config(args) -> "ExperimentConfig":
    from .experiments import ExperimentConfig

    overrides: dict = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key] = _parse_value(raw)
    direct = {
        "model": args.model, "m_train": args.m_train, "m_test": args.m_test,
        "n_fine": args.n_fine, "level": args.level, "seed": args.seed,
        "repeats": args.repeats, "H": args.hurst, "out_dir": args.out_dir,
        "cache_dir": args.cache_dir,
    }
    overrides.update({k: v for k, v in direct.items() if v is not None})
    if args.strike:
        overrides["strikes"] = tuple(args.strike)
    if args.backend:
        overrides["backends"] = tuple(args.backend)
    if args.no_cache:
        overrides["use_cache"] = False
    if args.force_sim:
        overrides["force_sim"] = True
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.from_dict({}, overrides)


def _cmd_simulate(args) -> int:
    from .cache import batch_key, get_or_simulate

    cfg = _resolve_config(args)
    params = cfg.model_params()
    batch = get_or_simulate(params, cfg.n_fine, cfg.m_train, cfg.seed,
                            n_exercise=cfg.n_exercise, antithetic=cfg.antithetic,
                            root=cfg.cache_dir, force=cfg.force_sim,
                            use_cache=cfg.use_cache)
    key = batch_key(params, cfg.n_fine, cfg.m_train, cfg.seed,
                    cfg.n_exercise, cfg.antithetic)
    print(f"simulated {batch.n_paths} paths on {batch.n_fine}+1 grid "
          f"(model={cfg.model}, seed={cfg.seed}, cache key={key})")
    return 0


def _cmd_price(args) -> int:
    from .experiments import run_price_table
    from .models import black_scholes_put

    cfg = _resolve_config(args)
    out = run_price_table(cfg)
    print(f"wrote {out}")
    if args.check:
        import csv as _csv

        with open(out) as fh:
            rows = list(_csv.DictReader(fh))
        bad = []
        for row in rows:
            lower, lse = float(row["lower"]), float(row["lower_se"])
            upper, use = float(row["upper"]), float(row["upper_se"])
            euro = float(row["european"])
            if lower > upper + 3 * (lse + use):
                bad.append(f"sandwich violated at strike {row['strike']} {row['backend']}")
            if lower < euro - 3 * lse:
                bad.append(f"American below European at strike {row['strike']} {row['backend']}")
        if bad:
            for msg in bad:
                print("CHECK FAIL:", msg, file=sys.stderr)
            raise AcceptanceError("; ".join(bad))
        print(f"checks passed on {len(rows)} rows")
    return 0


def _cmd_ridge_sweep(args) -> int:
    from .experiments import run_ridge_sweep

    cfg = _resolve_config(args)
    out = run_ridge_sweep(cfg, args.ridge_lambda)
    print(f"wrote {out}")
    return 0


def _cmd_sample_study(args) -> int:
    from .experiments import run_sample_size_study

    cfg = _resolve_config(args)
    out = run_sample_size_study(cfg, args.m)
    print(f"wrote {out}")
    return 0


def _cmd_correlation_study(args) -> int:
    from .experiments import run_correlation_study

    cfg = _resolve_config(args)
    out = run_correlation_study(cfg, args.rho)
    print(f"wrote {out}")
    return 0


def _cmd_discretization_study(args) -> int:
    from .experiments import run_discretization_study

    cfg = _resolve_config(args)
    out = run_discretization_study(cfg, args.n, args.hurst_grid)
    print(f"wrote {out}")
    return 0


def _cmd_feature_importance(args) -> int:
    from .experiments import run_feature_importance

    cfg = _resolve_config(args)
    out = run_feature_importance(cfg, repeats=args.importance_repeats)
    print(f"wrote {out}")
    return 0


def _cmd_cache(args) -> int:
    from .cache import clear, list_entries

    if args.action == "ls":
        entries = list_entries(args.cache_dir)
        if not entries:
            print("cache empty")
        for e in entries:
            if e.get("corrupt"):
                print(f"{e['key']}  <corrupt sidecar>")
            else:
                p = e["params"]
                print(f"{e['key']}  {p['model']:14s} m={e['m']:<7d} "
                      f"n_fine={e['n_fine']:<5d} seed={e['seed']}")
    else:
        n = clear(args.cache_dir)
        print(f"removed {n} cached batches")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sigstop",
        description="Bermudan put bounds under rough volatility via signature methods",
    )
    ap.add_argument("--version", action="version", version=f"sigstop {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate (and cache) a scenario batch")
    _add_config_args(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("price", help="strike x backend price table")
    _add_config_args(p)
    p.add_argument("--check", action="store_true",
                   help="fail (exit 4) if sandwich/ordering invariants break")
    p.set_defaults(func=_cmd_price)

    p = sub.add_parser("ridge-sweep", help="kernel ridge-parameter sweep")
    _add_config_args(p)
    p.add_argument("--ridge-lambda", type=float, nargs="+",
                   default=[0.0, 1e-8, 1e-5, 1e-3, 1e-1, 1.0])
    p.set_defaults(func=_cmd_ridge_sweep)

    p = sub.add_parser("sample-study", help="bounds vs training sample size")
    _add_config_args(p)
    p.add_argument("--m", type=int, nargs="+", default=[1024, 2048, 4096, 8192])
    p.set_defaults(func=_cmd_sample_study)

    p = sub.add_parser("correlation-study", help="bounds vs spot-vol correlation")
    _add_config_args(p)
    p.add_argument("--rho", type=float, nargs="+",
                   default=[-1.0, -0.5, 0.0, 0.5, 1.0])
    p.set_defaults(func=_cmd_correlation_study)

    p = sub.add_parser("discretization-study",
                       help="duality gap vs fine-grid size and Hurst index")
    _add_config_args(p)
    p.add_argument("--n", type=int, nargs="+", default=[60, 120, 240])
    p.add_argument("--hurst-grid", type=float, nargs="+", default=[0.07, 0.3, 0.5])
    p.set_defaults(func=_cmd_discretization_study)

    p = sub.add_parser("feature-importance",
                       help="permutation importance of deep-backend features")
    _add_config_args(p)
    p.add_argument("--importance-repeats", type=int, default=20)
    p.set_defaults(func=_cmd_feature_importance)

    p = sub.add_parser("cache", help="inspect or clear the path cache")
    p.add_argument("action", choices=["ls", "clear"])
    p.add_argument("--cache-dir", type=str, default=None)
    p.set_defaults(func=_cmd_cache)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except AcceptanceError as exc:
        print(f"acceptance violation: {exc}", file=sys.stderr)
        return 4
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except SigstopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
