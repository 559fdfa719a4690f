"""Train on the training range, evaluate the frozen agent and CRP on the test range, write artifacts."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np

from deepfolio import dam, ipm as ipm_mod
from deepfolio.agent.ddpg import Agent, AgentPolicy, load_agent, train_ddpg, train_rdpg, write_log
from deepfolio.backtest import BacktestResult, run_backtest, run_crp, write_equity_csv, write_fills_csv
from deepfolio.config import ConfigError, RunConfig, derive_seed, dump_config
from deepfolio.market_data import DataError, MarketData, load_market
from deepfolio.risk import MetricsReport
from deepfolio.synthetic import momentum_market

log = logging.getLogger(__name__)


@dataclass
class RunReport:
    agent: MetricsReport
    crp: MetricsReport
    seed: int
    modules: dict
    files: dict
    config: dict

    def to_dict(self) -> dict:
        return {"agent": asdict(self.agent), "crp": asdict(self.crp), "seed": self.seed,
                "modules": self.modules, "files": self.files, "config": self.config}


def rng_for(cfg: RunConfig, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(cfg.seed, name))


def load_data(cfg: RunConfig) -> MarketData:
    d = cfg.data
    if not d.path:
        return momentum_market(d.synthetic_bars, d.synthetic_assets, seed=d.synthetic_seed, phi=d.synthetic_phi)
    if not Path(d.path).exists():
        raise ConfigError(f"[data] path {d.path} does not exist")
    data, errors = load_market(d.path, d.index_asset or None)
    for e in errors:
        log.warning("ingest: %s", e)
    if d.assets:
        keep = [a.strip() for a in d.assets.split(",") if a.strip()]
        missing = [a for a in keep if a not in data.assets]
        if missing:
            raise ConfigError(f"[data] assets not in {d.path}: {', '.join(missing)}")
        cols = [0] + [data.assets.index(a) + 1 for a in keep]
        data = MarketData(data.timestamps, keep, data.open[:, cols], data.high[:, cols], data.low[:, cols],
                          data.close[:, cols], data.index_close)
    return data


def split(data: MarketData, cfg: RunConfig) -> tuple[MarketData, MarketData, int]:
    """(train, test, first decision index in test).

    The test slice starts ``k2 - 1`` bars early so the first decision has a
    full window; those lead-in bars are never traded.
    """
    d, k2 = cfg.data, cfg.agent.k2
    if d.train_end or d.test_start:
        train = data.between(d.train_start or None, d.train_end or None)
        test_core = data.between(d.test_start or None, d.test_end or None)
        first = int(np.searchsorted(data.timestamps, test_core.timestamps[0]))
        last = first + len(test_core)
        if data.timestamps[first] <= train.timestamps[-1]:
            raise ConfigError("test range must start after the training range ends")
    else:
        cut = int(len(data) * d.train_fraction)
        train, first, last = data.slice(0, cut), cut, len(data)
    lead = min(k2 - 1, first)
    test = data.slice(first - lead, last)
    if len(train) < k2 + cfg.agent.episode_length:
        raise ConfigError(f"training range has {len(train)} bars, need k2 + episode_length = "
                          f"{k2 + cfg.agent.episode_length}")
    if len(test) - lead < 2:
        raise ConfigError("test range needs at least two bars")
    return train, test, lead


def gan_pairs(train: MarketData, cfg: RunConfig, rng: np.random.Generator) -> list[dam.GanPair]:
    """One GAN per risky asset, trained on its training-range close changes or loaded from disk."""
    pre = cfg.dam.pretrained_dir
    pairs = []
    changes = train.hlc_changes()[:, :train.m]
    for j, name in enumerate(train.assets):
        if pre:
            path = Path(pre) / f"gan_{name}.json"
            if not path.exists():
                raise ConfigError(f"[dam] pretrained_dir has no {path.name}")
            pairs.append(dam.load_pair(path))
        else:
            pairs.append(dam.train_rgan(changes[:, j], cfg.dam.gan(), rng, asset_id=j + 1))
    return pairs


def make_augmenter(pairs, cfg: RunConfig):
    f = cfg.dam.f
    horizon = cfg.agent.dam_horizon

    def augment(ep: MarketData, rng: np.random.Generator) -> MarketData:
        # generators were fit to daily bars, so fine steps are shrunk to add back up to one bar
        syn = dam.augment_episode(pairs, horizon, rng, f=f, fine_scale=1 / np.sqrt(f))
        return dam.prepend_synthetic(ep, syn)
    return augment


def fresh_ipm(m: int, cfg: RunConfig) -> ipm_mod.NdybmState:
    if cfg.ipm.checkpoint:
        return ipm_mod.load_state(cfg.ipm.checkpoint)
    c = cfg.ipm
    return ipm_mod.init_state(3 * m, rng_for(cfg, "ipm"), d=c.d, rnn_dim=c.rnn_dim, sigma2=c.sigma2, lr=c.lr)


def train_agent(train: MarketData, cfg: RunConfig, out: Path | None = None):
    """Returns (agent, ipm state or None, training log)."""
    mods = cfg.modules
    agent_cfg = replace(cfg.agent, use_ipm=mods.ipm, use_bcm=mods.bcm)
    ipm_state = fresh_ipm(train.m, cfg) if mods.ipm else None
    augment = None
    if mods.dam:
        pairs = gan_pairs(train, cfg, rng_for(cfg, "dam"))
        if out is not None:
            for name, pair in zip(train.assets, pairs):
                dam.save_pair(pair, out / f"gan_{name}.json")
        augment = make_augmenter(pairs, cfg)
    rng = rng_for(cfg, "agent")
    if mods.variant == "ddpg":
        agent, rows = train_ddpg(train, agent_cfg, rng, ipm_state, augment)
    else:
        agent, rows = train_rdpg(train, agent_cfg, mods.variant.split("-")[1], rng, ipm_state, augment)
    return agent, ipm_state, rows


def evaluate(agent_actor, test: MarketData, lead: int, cfg: RunConfig,
             ipm_state: ipm_mod.NdybmState | None) -> tuple[BacktestResult, BacktestResult]:
    """Frozen actor on the test range (the IPM copy keeps learning online) and CRP alongside."""
    st = None if ipm_state is None else ipm_state.copy()
    policy = AgentPolicy(agent_actor, cfg.agent.k2, st)
    return run_backtest(policy, test, cfg.execution, start=lead), run_crp(test, cfg.execution, start=lead)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run(cfg: RunConfig, out_dir) -> RunReport:
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_data(cfg)
    train, test, lead = split(data, cfg)
    del data   # nothing past this point may reach back to the test range during training
    files = {}
    if cfg.agent_checkpoint:
        agent = load_agent(cfg.agent_checkpoint)
        ipm_state = None
        if cfg.modules.ipm:
            if not cfg.ipm.checkpoint:
                raise ConfigError("evaluating a saved agent with ipm on needs [ipm] checkpoint")
            ipm_state = ipm_mod.load_state(cfg.ipm.checkpoint)
    else:
        agent, ipm_state, rows = train_agent(train, cfg, out)
        write_log(rows, out / "training_log.csv")
        agent.save(out / "agent.json")
        files["training_log"] = "training_log.csv"
        files["agent_checkpoint"] = "agent.json"
        if ipm_state is not None:
            ipm_mod.save_state(ipm_state, out / "ipm.json")
            files["ipm_checkpoint"] = "ipm.json"
        if cfg.modules.dam:
            files["gan_checkpoints"] = [f"gan_{a}.json" for a in train.assets]
    res, crp = evaluate(agent.actor, test, lead, cfg, ipm_state)
    write_equity_csv(res, out / "equity_agent.csv", test.assets)
    write_equity_csv(crp, out / "equity_crp.csv", test.assets)
    files.update(equity_agent="equity_agent.csv", equity_crp="equity_crp.csv")
    if cfg.execution.mode == "realistic":
        write_fills_csv(res, out / "fills_agent.csv")
        files["fills_agent"] = "fills_agent.csv"
    _write_json(out / "metrics_agent.json", asdict(res.metrics))
    _write_json(out / "metrics_crp.json", asdict(crp.metrics))
    files.update(metrics_agent="metrics_agent.json", metrics_crp="metrics_crp.json")
    (out / "config.ini").write_text(dump_config(cfg))
    files["config"] = "config.ini"
    mods = {"ipm": ipm_state is not None, "dam": cfg.modules.dam and not cfg.agent_checkpoint,
            "bcm": agent.cfg.use_bcm and not cfg.agent_checkpoint, "variant": cfg.modules.variant}
    report = RunReport(res.metrics, crp.metrics, cfg.seed, mods, files, cfg.to_dict())
    _write_json(out / "report.json", report.to_dict())
    return report


__all__ = ["RunReport", "run", "load_data", "split", "train_agent", "evaluate", "gan_pairs", "DataError"]
