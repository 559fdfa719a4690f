"""Command line entry point: ``deepfolio <command> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from deepfolio import bcm, dam, ipm as ipm_mod
from deepfolio.backtest import read_equity_csv
from deepfolio.config import ConfigError, RunConfig, derive_seed, load_config
from deepfolio.market_data import DataError, align, ingest_csv, load_market, write_aligned_csv
from deepfolio.risk import metrics_report


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _config(args) -> RunConfig:
    return load_config(args.config, args.seed) if args.config else RunConfig(seed=args.seed or 0).validate()


def cmd_ingest(args) -> int:
    res = ingest_csv(args.input, index_asset=args.index)
    for e in res.errors:
        print(f"skipped {e}", file=sys.stderr)
    data = align(res.series, args.index)
    write_aligned_csv(data, args.output, args.index)
    print(f"{len(data)} bars x {data.m} assets -> {args.output} ({len(res.errors)} rows skipped)")
    return 0


def cmd_train(args) -> int:
    from deepfolio.orchestrator import run
    cfg = _config(args)
    report = run(cfg, args.out)
    print(json.dumps({"agent": asdict(report.agent), "crp": asdict(report.crp)}, indent=2))
    return 0


def cmd_backtest(args) -> int:
    from deepfolio.orchestrator import run
    cfg = _config(args)
    ck = Path(args.checkpoint)
    cfg.agent_checkpoint = str(ck / "agent.json")
    if cfg.modules.ipm:
        cfg.ipm.checkpoint = str(ck / "ipm.json")
    report = run(cfg, args.out)
    print(json.dumps({"agent": asdict(report.agent), "crp": asdict(report.crp)}, indent=2))
    return 0


def cmd_generate(args) -> int:
    """Fit (or load) one GAN per asset and write synthetic bars in the long CSV format."""
    from deepfolio.orchestrator import gan_pairs, load_data, split, rng_for
    cfg = _config(args)
    train, _, _ = split(load_data(cfg), cfg)
    pairs = gan_pairs(train, cfg, rng_for(cfg, "dam"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, pair in zip(train.assets, pairs):
        dam.save_pair(pair, out / f"gan_{name}.json")
    syn = dam.augment_episode(pairs, args.bars, rng_for(cfg, "generate"), f=cfg.dam.f,
                              fine_scale=1 / np.sqrt(cfg.dam.f))
    data = dam.prepend_synthetic(train.slice(len(train) - 1, len(train)), syn).slice(0, args.bars)
    write_aligned_csv(data, out / "synthetic.csv")
    print(f"{args.bars} synthetic bars x {len(pairs)} assets -> {out / 'synthetic.csv'}")
    return 0


def cmd_predict(args) -> int:
    """Run the NDyBM online over a dataset; write next-bar forecasts next to the realized changes."""
    data, _ = load_market(args.data, args.index)
    x = data.hlc_changes()
    m = data.m
    rng = np.random.default_rng(derive_seed(args.seed or 0, "ipm"))
    st = ipm_mod.init_state(3 * m, rng)
    preds = np.zeros_like(x)
    for t in range(len(x)):
        preds[t] = ipm_mod.ipm_step(st, x[t]).as_vector()
    names = [f"{k}_{a}" for k in ("close", "high", "low") for a in data.assets]
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp"] + [f"pred_{n}" for n in names] + [f"real_{n}" for n in names])
        for t in range(len(x)):
            w.writerow([str(data.timestamps[t + 1])] + [repr(float(v)) for v in preds[t]]
                       + [repr(float(v)) for v in x[t]])
    mse = float(np.mean((preds - x) ** 2))
    naive = float(np.mean((x[1:] - x[:-1]) ** 2)) if len(x) > 1 else float("nan")
    print(json.dumps({"mse": mse, "naive_mse": naive, "steps": len(x)}))
    return 0


def cmd_greedy(args) -> int:
    exp = bcm.solve_greedy(bcm.GreedyProblem(args.u, args.w, args.c))
    print(json.dumps({"w_star": [float(v) for v in exp.w_star], "objective": exp.objective_value}))
    return 0


def cmd_report(args) -> int:
    rep = metrics_report(read_equity_csv(args.equity))
    text = rep.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepfolio", description="Portfolio DRL engine")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config file)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="validate and align long-format OHLC CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--index", default=None, help="name of the market index series")
    s.set_defaults(func=cmd_ingest)

    for name, fn, hlp in (("train", cmd_train, "train an agent, then evaluate it on the test range"),
                          ("backtest", cmd_backtest, "evaluate a saved agent on the test range")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--config", default=None)
        s.add_argument("--out", required=True)
        if name == "backtest":
            s.add_argument("--checkpoint", required=True, help="output directory of an earlier train run")
        s.set_defaults(func=fn)

    s = sub.add_parser("generate", help="fit per-asset GANs and write synthetic bars")
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--bars", type=int, default=42)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("predict", help="online NDyBM forecasts over a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--index", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("greedy", help="solve the one-step greedy expert problem")
    s.add_argument("--u", type=_floats, required=True, help="price relatives, cash first")
    s.add_argument("--w", type=_floats, required=True, help="current weights, cash first")
    s.add_argument("--c", type=float, default=0.002, help="proportional cost rate")
    s.set_defaults(func=cmd_greedy)

    s = sub.add_parser("report", help="risk metrics from an equity CSV")
    s.add_argument("--equity", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, ValueError, FileNotFoundError, OSError) as exc:
        print(f"deepfolio {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
