"""INI run configuration and per-module seed derivation.

Every hyperparameter lives in a ``[section]`` named after the module that uses
it. Unknown keys are errors so typos do not silently fall back to defaults.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

from deepfolio.agent.ddpg import AgentConfig
from deepfolio.backtest import ExecutionConfig
from deepfolio.dam import GanConfig

MASK64 = (1 << 64) - 1
VARIANTS = ("ddpg", "rdpg-dsr", "rdpg-d3r")


class ConfigError(ValueError):
    pass


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, name: str) -> int:
    """Seed for one named stream. Depends only on (master, name), never on which other modules exist."""
    tag = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")
    return splitmix64((master & MASK64) ^ splitmix64(tag))


@dataclass
class DataConfig:
    path: str = ""                 # aligned or raw long-format CSV; empty means synthetic
    index_asset: str = ""
    assets: str = ""               # comma list; empty means all
    train_start: str = ""
    train_end: str = ""
    test_start: str = ""
    test_end: str = ""
    train_fraction: float = 0.8    # used when no dates are given
    synthetic_bars: int = 3000
    synthetic_assets: int = 7
    synthetic_seed: int = 0
    synthetic_phi: float = 0.5


@dataclass
class ModulesConfig:
    ipm: bool = True
    dam: bool = True
    bcm: bool = True
    variant: str = "ddpg"


@dataclass
class IpmConfig:
    d: int = 3
    rnn_dim: int = 100
    lr: float = 1e-3
    sigma2: float = 1.0
    checkpoint: str = ""           # load instead of a fresh state


@dataclass
class DamConfig:
    seq_len: int = 95
    noise_dim: int = 8
    hidden: int = 32
    batch: int = 128
    steps: int = 2000
    lr: float = 1e-3
    zeta: float = 1.0
    f: int = 8
    pretrained_dir: str = ""       # directory of gan_<asset>.json files to load instead of training

    def gan(self) -> GanConfig:
        return GanConfig(self.seq_len, self.noise_dim, self.hidden, self.batch, self.steps, self.lr, self.zeta)


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    modules: ModulesConfig = field(default_factory=ModulesConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    ipm: IpmConfig = field(default_factory=IpmConfig)
    dam: DamConfig = field(default_factory=DamConfig)
    execution: ExecutionConfig = field(default_factory=ExecutionConfig)
    agent_checkpoint: str = ""     # evaluate this agent instead of training one

    def validate(self) -> "RunConfig":
        if self.modules.variant not in VARIANTS:
            raise ConfigError(f"[modules] variant must be one of {', '.join(VARIANTS)}, got {self.modules.variant!r}")
        d = self.data
        if not d.path and d.synthetic_assets < 1:
            raise ConfigError("[data] synthetic_assets must be at least 1")
        if not 0 < d.train_fraction < 1:
            raise ConfigError("[data] train_fraction must lie in (0, 1)")
        if d.train_end and d.test_start and d.test_start <= d.train_end:
            raise ConfigError(f"[data] test_start {d.test_start} must come after train_end {d.train_end}")
        if self.execution.mode not in ("idealized", "realistic"):
            raise ConfigError("[execution] mode must be idealized or realistic")
        if self.agent.use_ipm != self.modules.ipm or self.agent.use_bcm != self.modules.bcm:
            raise ConfigError("[agent] use_ipm/use_bcm must agree with [modules]")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["agent"]["fe_sizes"] = list(self.agent.fe_sizes)
        out["agent"]["fa_sizes"] = list(self.agent.fa_sizes)
        return out


SECTIONS = {"data": DataConfig, "modules": ModulesConfig, "agent": AgentConfig, "ipm": IpmConfig,
            "dam": DamConfig, "execution": ExecutionConfig}


def _convert(text: str, default, where: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "yes", "no", "on", "off", "1", "0"):
                raise ValueError(text)
            return low in ("true", "yes", "on", "1")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(x) for x in text.replace(" ", "").split(",") if x)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r} as {type(default).__name__}") from None
    return text


def _build(cls, items: dict, section: str):
    defaults = cls()
    names = {f.name for f in fields(cls)}
    kw = {}
    for key, text in items.items():
        if key not in names:
            raise ConfigError(f"[{section}] unknown key {key!r}; known keys: {', '.join(sorted(names))}")
        kw[key] = _convert(text, getattr(defaults, key), f"[{section}] {key}")
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_config(text: str, seed: int | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    unknown = set(cp.sections()) - set(SECTIONS) - {"run"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    parts = {name: _build(cls, dict(cp[name]) if cp.has_section(name) else {}, name)
             for name, cls in SECTIONS.items()}
    run = dict(cp["run"]) if cp.has_section("run") else {}
    extra = set(run) - {"seed", "agent_checkpoint"}
    if extra:
        raise ConfigError(f"[run] unknown key(s): {', '.join(sorted(extra))}")
    try:
        master = int(run.get("seed", "0")) if seed is None else seed
    except ValueError:
        raise ConfigError(f"[run] seed must be an integer, got {run['seed']!r}") from None
    # the module switches decide the agent flags unless the agent section sets them explicitly
    agent_items = dict(cp["agent"]) if cp.has_section("agent") else {}
    if "use_ipm" not in agent_items:
        parts["agent"].use_ipm = parts["modules"].ipm
    if "use_bcm" not in agent_items:
        parts["agent"].use_bcm = parts["modules"].bcm
    cfg = RunConfig(seed=master, agent_checkpoint=run.get("agent_checkpoint", ""), **parts)
    return cfg.validate()


def load_config(path, seed: int | None = None) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    return parse_config(p.read_text(), seed)


def dump_config(cfg: RunConfig) -> str:
    """INI text that parses back to ``cfg``."""
    lines = ["[run]", f"seed = {cfg.seed}"]
    if cfg.agent_checkpoint:
        lines.append(f"agent_checkpoint = {cfg.agent_checkpoint}")
    for name in SECTIONS:
        lines += ["", f"[{name}]"]
        for f in fields(SECTIONS[name]):
            v = getattr(getattr(cfg, name), f.name)
            if isinstance(v, tuple):
                v = ", ".join(map(str, v))
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
