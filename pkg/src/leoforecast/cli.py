"""Command-line entry point: ``leoforecast <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .config import coerce, read_flat_config
from .farima import (
    choose_integer_d,
    estimate_d_preliminary,
    fit_arima,
    fit_farima,
    forecast,
    fracdiff_apply,
    select_order,
)
from .selfsim_stats import rescaled_range_hurst, variance_time_hurst
from .trace_io import read_trace, split_chronological, write_trace
from .traffic_gen import SCENARIOS, generate_scenario, scenario

log = logging.getLogger("leoforecast")


def _cmd_generate(args) -> int:
    spec = scenario(args.scenario, num_ticks=args.ticks, seed=args.seed, tick_ms=args.granularity)
    trace = generate_scenario(spec)
    write_trace(trace, args.out)
    print(f"wrote {len(trace)} samples at {trace.granularity_ms} ms to {args.out} (H = {spec.hurst:.3f})")
    return 0


def _cmd_analyze(args) -> int:
    trace = read_trace(args.input)
    estimator = rescaled_range_hurst if args.method == "rs" else variance_time_hurst
    est = estimator(trace.values, corrected=not args.raw)
    print(f"method      {est.method}")
    print(f"H           {est.H:.4f}{'  (clamped)' if est.clamped else ''}")
    print(f"beta        {est.beta:.4f}")
    print(f"d = H - 0.5 {est.d:.4f}")
    print(f"slope       {est.slope:.4f}")
    print(f"r2          {est.regression_r2:.4f}")
    print(f"blocks      {est.block_sizes[0]}..{est.block_sizes[-1]} ({len(est.block_sizes)} sizes)")
    return 0


def _fit(args, values: np.ndarray):
    x = values[-args.window :] if args.window else values
    p, q = args.p, args.q
    if args.model == "farima":
        d, _ = estimate_d_preliminary(x)
        if args.select_order:
            p, q = select_order(fracdiff_apply(x - x.mean(), d), p_max=max(args.p, 1))
        return fit_farima(x, p, q, method=args.method, d=d), x
    d = choose_integer_d(x)
    if args.select_order:
        y = x - x.mean()
        for _ in range(d):
            y = np.diff(y)
        p, q = select_order(y, p_max=max(args.p, 1))
    return fit_arima(x, p, q, d=d, method=args.method), x


def _print_model(model) -> None:
    print(f"order       ({model.p}, {model.d:.4f}, {model.q})")
    print(f"phi         {np.array2string(model.phi, precision=4)}")
    print(f"psi         {np.array2string(model.psi, precision=4)}")
    print(f"sigma2      {model.sigma2_eps:.6g}")
    print(f"mean        {model.mean:.6g}")
    flags = [n for n in ("reflected", "d_clamped") if getattr(model, n)]
    if not model.converged:
        flags.append("not converged")
    if flags:
        print(f"notes       {', '.join(flags)}")


def _cmd_fit(args) -> int:
    model, _ = _fit(args, read_trace(args.input).values)
    _print_model(model)
    return 0


def _cmd_forecast(args) -> int:
    model, x = _fit(args, read_trace(args.input).values)
    for value in forecast(model, x, args.h):
        print(repr(float(value)))
    return 0


def _cmd_train(args) -> int:
    from .transformer.model import TransformerConfig
    from .transformer.training import save_model, train

    values = {k: coerce(v) for k, v in read_flat_config(args.config).items()} if args.config else {}
    values.update(seq_len=args.seq_len, pred_len=args.pred_len)
    cfg = TransformerConfig.from_dict(values)
    tr, va, _ = split_chronological(read_trace(args.input))
    trained = train(tr, va, cfg)
    save_model(trained, args.out)
    best = trained.history["best_val_loss"][0]
    print(f"trained {len(trained.history['val_loss'])} epochs, best validation MSE {best:.4f}; saved {args.out}")
    return 0


def _cmd_bench(args) -> int:
    grid = bench.GridSpec.from_file(args.grid)
    results, problems = bench.run_grid(grid, args.out, resume=args.resume, workers=args.workers)
    bench.emit_tables(results, args.out)
    missing = len(grid.cells()) - len(results)
    if problems or missing:
        print(f"{missing} cells missing, {len(problems)} problems:", file=sys.stderr)
        for line in problems:
            print(f"  {line}", file=sys.stderr)
        return 1
    print(f"{len(results)} cells completed; tables in {args.out}")
    return 0


def _cmd_report(args) -> int:
    results = bench.load_results(args.input)
    if not results:
        print(f"no results in {args.input}", file=sys.stderr)
        return 1
    paths = bench.emit_tables(results, args.input)
    suffix = ".csv" if args.format == "csv" else ".txt"
    for path in paths:
        if path.name.startswith("table_") and path.suffix == suffix:
            print(f"# {path.stem.removeprefix('table_')}")
            print(path.read_text())
    print("winners: " + ", ".join(f"{m} {n}" for m, n in bench.winner_report(results).items()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="leoforecast", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a scenario trace")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), required=True)
    p.add_argument("--granularity", type=int, choices=(10, 100, 1000), default=10)
    p.add_argument("--ticks", type=int, default=60_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("analyze", help="estimate the Hurst parameter of a trace")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--method", choices=("rs", "vt"), default="rs")
    p.add_argument("--raw", action="store_true", help="plain log-log slope, no small-sample correction")
    p.set_defaults(func=_cmd_analyze)

    for name, func in (("fit", _cmd_fit), ("forecast", _cmd_forecast)):
        p = sub.add_parser(name, help=f"{name} an ARIMA/FARIMA model")
        p.add_argument("--in", dest="input", type=Path, required=True)
        p.add_argument("--model", choices=("arima", "farima"), default="farima")
        p.add_argument("--p", type=int, default=2)
        p.add_argument("--q", type=int, default=0)
        p.add_argument("--method", choices=("css", "whittle", "mle"), default="css")
        p.add_argument("--select-order", action="store_true")
        p.add_argument("--window", type=int, default=None, help="use only the last N values")
        if name == "forecast":
            p.add_argument("--h", type=int, required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("train", help="train the sparse-attention forecaster")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--seq-len", type=int, required=True)
    p.add_argument("--pred-len", type=int, required=True)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("bench", help="run a benchmark grid")
    p.add_argument("--grid", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("report", help="render tables from a benchmark directory")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--format", choices=("csv", "text"), default="text")
    p.set_defaults(func=_cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
