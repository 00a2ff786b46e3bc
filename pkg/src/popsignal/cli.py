"""Command-line entry point: ``popsignal <command> [options]``.

Exit codes: 0 success, 2 validation error, 3 missing data, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from . import signal as sig
from .core import MissingDataError, NumericError, ValidationError, save_series
from .embeddings import EmbeddingStore, load as load_embeddings, parse_synth_flag, synth_embeddings
from .gateway import GatewayConfig
from .query import MISALIGNED_PAST, NEGATIVE, NO_EXPANSION, STANDARD, ExpansionConfig

log = logging.getLogger("popsignal")

EXIT_OK, EXIT_VALIDATION, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4


def _global(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("global")
    g.add_argument("--config", type=Path, help="JSON file with defaults for any option")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--jobs", type=int, default=1, help="worker cap for parallel steps")
    g.add_argument("--out-dir", type=Path, default=Path("out"))
    g.add_argument("-v", "--verbose", action="store_true")


def _mining_opts(p):
    p.add_argument("--probes", type=Path, help="probe manifest (JSON), required")
    p.add_argument("--k-past", type=int, default=52)
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--positive-tag", default="fashionable")
    p.add_argument("--negative-tag", default="unfashionable")
    p.add_argument("--mode", choices=[STANDARD, NO_EXPANSION, MISALIGNED_PAST], default=STANDARD)
    p.add_argument("--misaligned-past", action="store_true", help="shorthand for --mode misaligned_past")
    p.add_argument("--m-per-query", type=int, default=25)
    p.add_argument("--backend", choices=["fixture", "live"], default="fixture")
    p.add_argument("--fixture-dir", type=Path)
    p.add_argument("--cache-dir", type=Path, help="default: <out-dir>/cache")
    p.add_argument("--max-retries", type=int, default=3)


def _embedding_opts(p):
    p.add_argument("--embeddings", type=Path, help="embedding CSV (image_id,f0,...)")
    p.add_argument("--synth-embeddings", metavar="SEED,D,SEP,SIGMA",
                   help="generate Gaussian-blob embeddings for mined images instead")


def _train_opts(p):
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--keep-noisy", action="store_true", help="train on all data, prune nothing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="popsignal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = sub

    p = sub.add_parser("mine", help="expand queries and fetch image hits")
    _global(p)
    _mining_opts(p)

    p = sub.add_parser("clean", help="confident-learning cleanup of mined images")
    _global(p)
    _embedding_opts(p)
    _train_opts(p)

    p = sub.add_parser("signal", help="form POP series for every mined probe")
    _global(p)
    _embedding_opts(p)
    p.add_argument("--variant", choices=list(sig.VARIANTS), default=sig.POP)
    p.add_argument("--misaligned-past", action="store_true",
                   help="assert the mined queries used the misaligned past window")

    p = sub.add_parser("forecast", help="sales forecasts (ridge) or a statistical batch")
    _global(p)
    p.add_argument("--manifest", type=Path, help="batch manifest for the statistical forecasters")
    p.add_argument("--sales", type=Path, help="sales table for the ridge forecaster")
    p.add_argument("--signals", type=Path, help="POP directory; omit for no exogenous input")
    p.add_argument("--window", type=int, default=52, help="exogenous weeks (28 first-order, 52 release)")
    p.add_argument("--horizon", type=int, default=6)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--name", help="method label written to the forecast table")
    p.add_argument("--output", type=Path, help="default: <out-dir>/forecast/<name>.csv")

    p = sub.add_parser("evaluate", help="metrics table from forecast tables")
    _global(p)
    p.add_argument("forecasts", nargs="*", type=Path, help="default: <out-dir>/forecast/*.csv")
    p.add_argument("--epsilon", type=float, default=0.03)
    p.add_argument("--output", type=Path, help="default: <out-dir>/metrics.csv")

    p = sub.add_parser("styles", help="NMF styles and style-level POP")
    _global(p)
    p.add_argument("--attributes", type=Path, help="attribute matrix CSV, required")
    p.add_argument("--k", type=int, help="number of styles, required")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--top-attributes", type=int, default=2)
    p.add_argument("--top-images", type=int, default=10)
    p.add_argument("--signals", type=Path, help="per-image POP directory (208-week series)")
    p.add_argument("--weeks-per-year", type=int, default=52)

    p = sub.add_parser("synthetic", help="end-to-end run on a seeded synthetic world")
    _global(p)
    p.add_argument("--seeds", type=int, nargs="*", help="several seeds (overrides --seed)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="FIELD=VALUE",
                   help="override a world/harness setting, e.g. --set groups=4 (repeatable)")
    return parser


REQUIRED = {"mine": ["probes"], "styles": ["attributes", "k"]}


def _parse(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` become defaults so explicit flags win."""
    args = parser.parse_args(argv)
    if args.config is not None:
        if not args.config.exists():
            raise MissingDataError(f"config file not found: {args.config}")
        try:
            doc = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ValidationError(f"{args.config}: expected a JSON object")
        defaults = {}
        for key, value in doc.items():
            dest = key.replace("-", "_")
            if dest in ("command", "config") or not hasattr(args, dest):
                raise ValidationError(f"config key {key!r} is not an option of {args.command!r}")
            # string defaults go through the option's type conversion
            defaults[dest] = str(value) if isinstance(getattr(args, dest), Path) else value
        sub = parser.subcommands.choices[args.command]
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    missing = [f"--{d.replace('_', '-')}" for d in REQUIRED.get(args.command, [])
               if getattr(args, d) is None]
    if missing:
        raise ValidationError(f"{args.command}: missing required option(s) {', '.join(missing)}")
    return args


def _store_for(args, out_dir: Path) -> EmbeddingStore:
    if args.embeddings and args.synth_embeddings:
        raise ValidationError("use either --embeddings or --synth-embeddings")
    if args.embeddings:
        return load_embeddings(args.embeddings)
    if not args.synth_embeddings:
        raise ValidationError("need --embeddings or --synth-embeddings")
    seed, dim, sep, sigma = parse_synth_flag(args.synth_embeddings)
    by_probe = pl.read_records(out_dir)
    manifest = pl.read_manifest(out_dir)
    ids, labels, seen = [], [], set()
    for rows in by_probe.values():
        for r in rows:
            if r["image_id"] not in seen:
                seen.add(r["image_id"])
                ids.append(r["image_id"])
                labels.append(1 if r["polarity"] == NEGATIVE else 0)
    for p in manifest["probes"]:
        if p["image_id"] not in seen:
            seen.add(p["image_id"])
            ids.append(p["image_id"])
            labels.append(0)
    return synth_embeddings(ids, labels, seed, dim, sep, sigma)


def cmd_mine(args) -> int:
    mode = MISALIGNED_PAST if args.misaligned_past else args.mode
    exp_cfg = ExpansionConfig(args.k_past, args.window, args.positive_tag, args.negative_tag, mode)
    gw = GatewayConfig(m_per_query=args.m_per_query, backend=args.backend,
                       cache_dir=args.cache_dir or args.out_dir / "cache",
                       fixture_dir=args.fixture_dir, max_retries=args.max_retries, jobs=args.jobs)
    manifest = pl.mine(pl.load_probes(args.probes), exp_cfg, gw, args.out_dir)
    print(f"{manifest['n_queries']} queries, {manifest['n_records']} records -> {args.out_dir}")
    if manifest["failures"]:
        print(f"{len(manifest['failures'])} queries failed:", file=sys.stderr)
        for key, err in manifest["failures"].items():
            print(f"  {key}: {err}", file=sys.stderr)
        return EXIT_MISSING
    return EXIT_OK


def cmd_clean(args) -> int:
    store = _store_for(args, args.out_dir)
    reports = pl.clean_stage(args.out_dir, store, seed=args.seed, folds=args.folds,
                             keep_noisy=args.keep_noisy, jobs=args.jobs, epochs=args.epochs,
                             lr=args.lr, l2=args.l2, hidden=args.hidden)
    for g, rep in reports.items():
        print(f"group {g}: C={rep.joint.tolist()} pruned={len(rep.pruned_ids)}")
    return EXIT_OK


def cmd_signal(args) -> int:
    if args.misaligned_past:
        mode = pl.read_manifest(args.out_dir)["expansion"]["mode"]
        if mode != MISALIGNED_PAST:
            raise ValidationError(f"--misaligned-past given but the queries were mined in {mode!r} mode")
    store = _store_for(args, args.out_dir)
    results = pl.signal_stage(args.out_dir, store, args.variant)
    print(f"{len(results)} {args.variant} series -> {args.out_dir / 'signals'}")
    return EXIT_OK


def cmd_forecast(args) -> int:
    if bool(args.manifest) == bool(args.sales):
        raise ValidationError("pass exactly one of --manifest or --sales")
    if args.manifest:
        name = args.name or "batch"
        out = args.output or args.out_dir / "forecast" / f"{name}.csv"
        rows = pl.forecast_batch(pl.load_batch_manifest(args.manifest), out, seed=args.seed)
    else:
        name = args.name or ("exo_ridge" if args.signals is None else "exo_ridge+pop")
        out = args.output or args.out_dir / "forecast" / f"{name}.csv"
        rows = pl.forecast_sales(args.sales, out, args.signals, window=args.window,
                                 horizon=args.horizon, lam=args.lam, method=name)
    print(f"{len(rows)} forecast rows -> {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    paths = args.forecasts or sorted((args.out_dir / "forecast").glob("*.csv"))
    if not paths:
        raise MissingDataError(f"no forecast tables under {args.out_dir / 'forecast'}")
    out = args.output or args.out_dir / "metrics.csv"
    rows = pl.evaluate_forecasts(paths, out, args.epsilon)
    for r in rows:
        if r["series_id"] == pl.POOLED:
            print(f"{r['method']:>20}  WAPE {r['wape'] or '-':>10}  MAE {r['mae']:>10}  ERP {r['erp'] or '-'}")
    return EXIT_OK


def cmd_styles(args) -> int:
    from .styles import dump_model, fit_nmf, load_attribute_matrix, style_attributes, style_pop

    A = load_attribute_matrix(args.attributes)
    model = fit_nmf(A, args.k, seed=args.seed, max_iter=args.max_iter, tol=args.tol)
    out = args.out_dir / "styles"
    dump_model(model, out, args.top_attributes, args.top_images)
    print(f"K={model.K} relative error {model.reconstruction_error:.6g} after {model.n_iter} iterations")
    if args.signals:
        per_image = {}
        for path in sorted(args.signals.glob("*.csv")):
            per_image[path.stem] = pl.load_signal(path).main
        for k in range(model.K):
            s = style_pop(model, k, per_image, args.top_images, args.weeks_per_year)
            save_series(s, out / f"style_pop_{k}.csv")
            print(f"style {k} {style_attributes(model, k, args.top_attributes)}: "
                  + " ".join(f"{v:.3f}" for v in s.values))
    return EXIT_OK


def _synth_overrides(items) -> dict:
    from dataclasses import fields

    from .synthetic import SynthConfig

    known = {f.name for f in fields(SynthConfig)} - {"seed", "train_kw"}
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep or name not in known:
            raise ValidationError(f"--set expects FIELD=VALUE with FIELD in {sorted(known)}; got {item!r}")
        try:
            out[name] = json.loads(value)
        except json.JSONDecodeError:
            raise ValidationError(f"--set {name}: {value!r} is not a number") from None
    return out


def cmd_synthetic(args) -> int:
    from .synthetic import SynthConfig, run_harness

    seeds = args.seeds if args.seeds else [args.seed]
    overrides = _synth_overrides(args.overrides)
    for seed in seeds:
        root = args.out_dir / f"seed{seed}" if len(seeds) > 1 else args.out_dir
        report = run_harness(SynthConfig(seed=seed, **overrides), root)
        w = report["wape"]
        line = "  ".join(f"{k}={v:.2f}" for k, v in w.items())
        print(f"seed {seed}: WAPE {line}  (POP gain {100 * report['relative_improvement']['pop']:.1f}%)")
    return EXIT_OK


COMMANDS = {"mine": cmd_mine, "clean": cmd_clean, "signal": cmd_signal, "forecast": cmd_forecast,
            "evaluate": cmd_evaluate, "styles": cmd_styles, "synthetic": cmd_synthetic}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MissingDataError as exc:
        print(f"missing data: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
