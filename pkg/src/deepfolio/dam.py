"""Data augmentation module: one recurrent GAN per asset with an MMD-regularized generator.

The generator maps per-step Gaussian noise through an LSTM to one percentage
change per step. The discriminator reads a whole sequence with an LSTM and
scores it from its last hidden state. Data are standardized inside the pair,
so generated values come back in the asset's own units.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from deepfolio import market_data as md
from deepfolio.nn import tensor as T
from deepfolio.nn import Adam, Dense, LSTM, Module, backward, checkpoint
from deepfolio.nn.tensor import Tensor

PROB_FLOOR = 1e-7


# --- kernels and MMD ------------------------------------------------------------

def _as_rows(a) -> np.ndarray:
    a = np.asarray(a, float)
    return a.reshape(len(a), -1)


def median_bandwidth(samples_a, samples_b) -> float:
    """Median pairwise Euclidean distance over the pooled samples; 1.0 if that is 0."""
    pooled = np.vstack([_as_rows(samples_a), _as_rows(samples_b)])
    if len(pooled) < 2:
        raise ValueError("need at least two pooled samples for a bandwidth")
    med = float(np.median(pdist(pooled)))
    return med if med > 0 else 1.0


def _sqdist(a: Tensor, b: Tensor) -> Tensor:
    aa = (a * a).sum(axis=1, keepdims=True)
    bb = (b * b).sum(axis=1).reshape(1, b.shape[0])
    return aa + bb - 2.0 * (a @ b.T)


def _gram(a: Tensor, b: Tensor, sigma: float) -> Tensor:
    return T.exp(_sqdist(a, b) * (-1.0 / (2.0 * sigma * sigma)))


def mmd2_tensor(X, Y, sigma: float, unbiased: bool = True) -> Tensor:
    """Squared MMD as a graph node, differentiable in either argument.

    Biased form uses all pairs (self terms included), so MMD_b(X, X) = 0.
    Unbiased form drops i == j in the within-sample sums.
    """
    X, Y = T.as_tensor(X), T.as_tensor(Y)
    X = X.reshape(X.shape[0], -1)
    Y = Y.reshape(Y.shape[0], -1)
    M, N = X.shape[0], Y.shape[0]
    kxx, kyy, kxy = _gram(X, X, sigma), _gram(Y, Y, sigma), _gram(X, Y, sigma)
    if not unbiased:
        return kxx.mean() - 2.0 * kxy.mean() + kyy.mean()
    if M < 2 or N < 2:
        raise ValueError("unbiased MMD needs at least two samples on each side")
    off_x = 1.0 - np.eye(M)
    off_y = 1.0 - np.eye(N)
    return ((kxx * off_x).sum() * (1.0 / (M * (M - 1))) + (kyy * off_y).sum() * (1.0 / (N * (N - 1)))
            - kxy.sum() * (2.0 / (M * N)))


def mmd2_biased(X, Y, sigma: float | None = None) -> float:
    if len(X) < 1 or len(Y) < 1:
        raise ValueError("MMD needs non-empty samples")
    sigma = median_bandwidth(X, Y) if sigma is None else sigma
    return mmd2_tensor(_as_rows(X), _as_rows(Y), sigma, unbiased=False).item()


def mmd2_unbiased(X, Y, sigma: float | None = None) -> float:
    if len(X) < 2 or len(Y) < 2:
        raise ValueError("unbiased MMD needs at least two samples on each side")
    sigma = median_bandwidth(X, Y) if sigma is None else sigma
    return mmd2_tensor(_as_rows(X), _as_rows(Y), sigma, unbiased=True).item()


# --- networks -------------------------------------------------------------------

class Generator(Module):
    def __init__(self, noise_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.noise_dim = noise_dim
        self.lstm = self.add_module("lstm", LSTM(noise_dim, hidden, rng))
        self.out = self.add_module("out", Dense(hidden, 1, rng))

    def forward(self, z) -> Tensor:
        z = T.as_tensor(z)
        B, steps = z.shape[0], z.shape[1]
        return self.out(self.lstm(z)).reshape(B, steps)


class Discriminator(Module):
    def __init__(self, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.lstm = self.add_module("lstm", LSTM(1, hidden, rng))
        self.out = self.add_module("out", Dense(hidden, 1, rng))

    def forward(self, x) -> Tensor:
        x = T.as_tensor(x)
        B, steps = x.shape
        h = self.lstm(x.reshape(B, steps, 1))[:, -1]
        return T.sigmoid(self.out(h)).reshape(B)


@dataclass
class GanConfig:
    seq_len: int = 95
    noise_dim: int = 8
    hidden: int = 32
    batch: int = 128
    steps: int = 2000
    lr: float = 1e-3
    zeta: float = 1.0


@dataclass
class GanPair:
    generator: Generator
    discriminator: Discriminator
    zeta: float = 1.0
    asset_id: int = 0
    seq_len: int = 95
    loc: float = 0.0
    scale: float = 1.0
    trained: bool = False
    history: list = field(default_factory=list)

    @property
    def noise_dim(self) -> int:
        return self.generator.noise_dim

    def noise(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(size=(n, self.seq_len, self.noise_dim))

    def generate(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` sequences of percentage changes in data units, shape (n, seq_len)."""
        return self.generator(self.noise(n, rng)).data * self.scale + self.loc


def make_pair(cfg: GanConfig, rng: np.random.Generator, asset_id: int = 0) -> GanPair:
    return GanPair(Generator(cfg.noise_dim, cfg.hidden, rng), Discriminator(cfg.hidden, rng),
                   zeta=cfg.zeta, asset_id=asset_id, seq_len=cfg.seq_len)


# --- losses and training --------------------------------------------------------------

def _log_prob(p: Tensor) -> tuple[Tensor, Tensor]:
    p = T.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return T.log(p), T.log(1.0 - p)


def disc_loss(pair: GanPair, real, fake) -> Tensor:
    """-(1/b) sum[log D(h) + log(1 - D(G(z)))]; ``fake`` is treated as data."""
    log_real, _ = _log_prob(pair.discriminator(real))
    _, log_fake = _log_prob(pair.discriminator(fake))
    return -(log_real.mean() + log_fake.mean())


def gen_loss(pair: GanPair, real, noise, sigma: float | None = None) -> Tensor:
    """(1/b) sum log(1 - D(G(z))) + zeta * unbiased MMD^2(real, G(z))."""
    fake = pair.generator(noise)
    _, log_fake = _log_prob(pair.discriminator(fake))
    loss = log_fake.mean()
    if pair.zeta:
        real = np.asarray(real, float)
        sigma = median_bandwidth(real, fake.data) if sigma is None else sigma
        loss = loss + pair.zeta * mmd2_tensor(real, fake, sigma)
    return loss


def gan_losses(pair: GanPair, real_batch, noise_batch, sigma: float | None = None) -> tuple[float, float]:
    real_batch = np.asarray(real_batch, float)
    if len(real_batch) < 2:
        raise ValueError("batch size must be at least 2")
    fake = pair.generator(noise_batch).data
    return disc_loss(pair, real_batch, fake).item(), gen_loss(pair, real_batch, noise_batch, sigma).item()


def windows(series, length: int) -> np.ndarray:
    """All overlapping windows (stride 1) of ``series``."""
    x = np.asarray(series, float)
    if len(x) < length + 1:
        raise ValueError(f"series of length {len(x)} gives fewer than 2 windows of length {length}")
    return np.lib.stride_tricks.sliding_window_view(x, length).copy()


def fused_gradients(pair: GanPair, real: np.ndarray, z: np.ndarray) -> tuple[float, float]:
    """Fill ``.grad`` of both nets from one forward pass; returns (disc loss, gen loss).

    The discriminator sees real and fake rows as one batch. Back-propagating
    ``disc - zeta * mmd`` leaves the exact discriminator gradient in D, and
    in G the negative of the generator gradient, since the fake half of the
    discriminator loss is minus the generator's adversarial term. G's
    gradients are negated afterwards. Both gradients refer to the same
    (pre-update) discriminator.
    """
    b = len(real)
    fake = pair.generator(z)
    p = pair.discriminator(T.concat([T.as_tensor(real), fake], axis=0))
    log_real, _ = _log_prob(p[:b])
    _, log_fake = _log_prob(p[b:])
    adv = log_fake.mean()
    disc = -(log_real.mean() + adv)
    total = disc
    mmd = 0.0
    if pair.zeta:
        sigma = median_bandwidth(real, fake.data)
        mmd_t = mmd2_tensor(real, fake, sigma)
        mmd = mmd_t.item()
        total = disc - pair.zeta * mmd_t
    pair.generator.zero_grad()
    pair.discriminator.zero_grad()
    backward(total)
    for prm in pair.generator.parameters().values():
        prm.grad *= -1.0
    return disc.item(), adv.item() + pair.zeta * mmd


def train_rgan(series, cfg: GanConfig | None = None, rng: np.random.Generator | None = None,
               asset_id: int = 0, freeze_generator: bool = False, log_every: int = 0) -> GanPair:
    """One discriminator and one generator Adam step per batch.

    Both steps use gradients from a single shared forward pass (see
    ``fused_gradients``), which roughly halves the cost per batch.
    """
    cfg = cfg or GanConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    data = windows(series, cfg.seq_len)
    pair = make_pair(cfg, rng, asset_id)
    pair.loc = float(np.mean(series))
    pair.scale = float(np.std(series)) or 1.0
    data = (data - pair.loc) / pair.scale
    d_opt = Adam(pair.discriminator.parameters(), cfg.lr)
    g_opt = Adam(pair.generator.parameters(), cfg.lr)
    for step in range(cfg.steps):
        real = data[rng.integers(0, len(data), size=cfg.batch)]
        z = pair.noise(cfg.batch, rng)
        dl, gl = fused_gradients(pair, real, z)
        d_opt.step()
        if not freeze_generator:
            g_opt.step()
        if log_every and step % log_every == 0:
            pair.history.append((step, dl, gl))
    pair.trained = True
    return pair


def discriminator_accuracy(pair: GanPair, real, rng: np.random.Generator) -> float:
    real = (np.asarray(real, float) - pair.loc) / pair.scale
    fake = pair.generator(pair.noise(len(real), rng)).data
    p_real = pair.discriminator(real).data
    p_fake = pair.discriminator(fake).data
    return float((np.sum(p_real > 0.5) + np.sum(p_fake <= 0.5)) / (2 * len(real)))


def save_pair(pair: GanPair, path) -> None:
    state = {f"G.{k}": v for k, v in pair.generator.state_dict().items()}
    state.update({f"D.{k}": v for k, v in pair.discriminator.state_dict().items()})
    meta = {"kind": "rgan", "zeta": pair.zeta, "asset_id": pair.asset_id, "seq_len": pair.seq_len,
            "loc": pair.loc, "scale": pair.scale, "noise_dim": pair.noise_dim,
            "hidden": pair.generator.lstm.hidden, "trained": pair.trained}
    checkpoint.save(path, state, meta)


def load_pair(path) -> GanPair:
    state, meta = checkpoint.load(path)
    if meta.get("kind") != "rgan":
        raise ValueError(f"{path} is not a GAN checkpoint")
    cfg = GanConfig(seq_len=meta["seq_len"], noise_dim=meta["noise_dim"], hidden=meta["hidden"], zeta=meta["zeta"])
    pair = make_pair(cfg, np.random.default_rng(0), meta["asset_id"])
    pair.generator.load_state_dict({k[2:]: v for k, v in state.items() if k.startswith("G.")})
    pair.discriminator.load_state_dict({k[2:]: v for k, v in state.items() if k.startswith("D.")})
    pair.loc, pair.scale, pair.trained = meta["loc"], meta["scale"], meta["trained"]
    return pair


# --- downsampling, validation and augmentation -------------------------------------------

def downsample_to_hlc(fine, f: int) -> np.ndarray:
    """Group ``f`` fine changes into one bar; returns rows of (close, high, low) changes.

    The group's opening level counts towards the high and low, so high >= 0 >= low.
    """
    r = np.asarray(fine, float)
    if f < 1 or len(r) % f:
        raise ValueError(f"length {len(r)} is not a multiple of {f}")
    if np.any(1.0 + r <= 0):
        raise ValueError("fine changes must exceed -100%")
    c = np.cumprod(1.0 + r.reshape(-1, f), axis=1)
    close = c[:, -1] - 1.0
    high = np.maximum(1.0, c.max(axis=1)) - 1.0
    low = np.minimum(1.0, c.min(axis=1)) - 1.0
    return np.column_stack([close, high, low])


def kolmogorov_sf(lam: float, terms: int = 100) -> float:
    """Q(lam) = 2 sum_k (-1)^(k-1) exp(-2 k^2 lam^2), the asymptotic KS tail."""
    if lam <= 0.2:
        return 1.0  # series converges slowly here and Q is 1 to double precision
    k = np.arange(1, terms + 1)
    q = 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k * k * lam * lam))
    return float(min(1.0, max(0.0, q)))


def ks_2sample(a, b) -> tuple[float, float]:
    """Two-sample KS statistic and its asymptotic p-value."""
    a, b = np.sort(np.ravel(a)), np.sort(np.ravel(b))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("KS test needs non-empty samples")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / len(a)
    fb = np.searchsorted(b, pooled, side="right") / len(b)
    D = float(np.max(np.abs(fa - fb)))
    ne = len(a) * len(b) / (len(a) + len(b))
    return D, kolmogorov_sf(np.sqrt(ne) * D)


def ks_validate(generated, holdout) -> float:
    """Mean over generated series of the best p-value against any holdout window."""
    generated, holdout = list(generated), list(holdout)
    if not generated or not holdout:
        raise ValueError("ks_validate needs generated and holdout series")
    return float(np.mean([max(ks_2sample(g, h)[1] for h in holdout) for g in generated]))


@dataclass
class SyntheticEpisode:
    close: np.ndarray   # (horizon, m) percentage changes
    high: np.ndarray
    low: np.ndarray

    @property
    def horizon(self) -> int:
        return self.close.shape[0]


def augment_episode(pairs: list[GanPair], horizon: int, rng: np.random.Generator, f: int = 8,
                    fine_scale: float = 1.0) -> SyntheticEpisode:
    """Generate ``horizon`` synthetic HLC bars per asset.

    ``fine_scale`` shrinks generated changes before grouping; use 1/sqrt(f)
    when the generator was fit to bars that are already coarse.
    """
    m = len(pairs)
    out = np.zeros((3, horizon, m))
    if horizon == 0:
        return SyntheticEpisode(out[0], out[1], out[2])
    for j, pair in enumerate(pairs):
        if not pair.trained:
            raise ValueError(f"GAN for asset {pair.asset_id} is not trained")
        need = horizon * f
        n_seq = -(-need // pair.seq_len)
        fine = pair.generate(n_seq, rng).ravel()[:need] * fine_scale
        fine = np.maximum(fine, -0.99)
        out[:, :, j] = downsample_to_hlc(fine, f).T
    return SyntheticEpisode(out[0], out[1], out[2])


def prepend_synthetic(data: md.MarketData, syn: SyntheticEpisode) -> md.MarketData:
    """Put synthetic bars in front of ``data``; the real part is left untouched.

    Synthetic paths are scaled so the last synthetic close equals the first real
    open. The index is flat over the synthetic bars.
    """
    n = syn.horizon
    if n == 0:
        return data
    m = data.m
    prev = np.vstack([np.ones(m), np.cumprod(1.0 + syn.close, axis=0)[:-1]])
    close = prev * (1.0 + syn.close)
    scale = data.open[0, 1:] / close[-1]
    prev, close = prev * scale, close * scale
    high = np.maximum(prev * (1.0 + syn.high), np.maximum(prev, close))
    low = np.minimum(prev * (1.0 + syn.low), np.minimum(prev, close))
    ones = np.ones((n, 1))
    step = data.timestamps[1] - data.timestamps[0] if len(data) > 1 else np.timedelta64(1, "D")
    stamps = data.timestamps[0] - step * np.arange(n, 0, -1)
    ix = None
    if data.index_close is not None:
        ix = np.concatenate([np.full(n, data.index_close[0]), data.index_close])
    cat = lambda a, b: np.vstack([np.hstack([ones, a]), b])
    return md.MarketData(np.concatenate([stamps, data.timestamps]), data.assets, cat(prev, data.open),
                         cat(high, data.high), cat(low, data.low), cat(close, data.close), ix)
