"""Noise-prediction network and trainer.

The predictor is a small 1-D UNet over the arranged weekly window: stride-2
convolutional encoder, nearest-neighbor upsampling decoder with concatenated
skips, GroupNorm + SiLU throughout, a sinusoidal step embedding injected
into every residual block, and cross-attention over per-timestep condition
tokens at the two coarsest resolutions. Unconditional models share the
backbone but have no attention blocks at all.

Numpy in, numpy out at the package boundary; torch only inside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import ConditionTokens
from .diffusion import NoiseSchedule
from .errors import DataError, NumericError, PreconditionError

_MAX_WIDTH_FACTOR = 8  # channel widths double per level, capped at base * this


def _single_thread() -> None:
    # bit-reproducibility across batch compositions relies on this
    if torch.get_num_threads() != 1:
        torch.set_num_threads(1)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters of the noise predictor."""

    depth: int = 6
    heads: int = 8
    base_channels: int = 32
    time_embed_dim: int = 64
    conditional: bool = True
    d_feat: int = 7
    seed: int = 0
    window_len: int = 672
    channels: int = 1

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise DataError(f"depth must be >= 1, got {self.depth}")
        for name in ("heads", "base_channels", "time_embed_dim", "window_len", "channels"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be positive, got {getattr(self, name)}")
        if self.time_embed_dim % 2 != 0:
            raise DataError(f"time_embed_dim must be even, got {self.time_embed_dim}")
        if self.conditional and self.d_feat < 1:
            raise DataError("a conditional model needs d_feat >= 1")
        for level in self.attention_levels():
            if self.level_width(level) % self.heads != 0:
                raise DataError(
                    f"heads={self.heads} must divide the attention width "
                    f"{self.level_width(level)} at level {level}"
                )

    def level_width(self, level: int) -> int:
        return self.base_channels * min(2**level, _MAX_WIDTH_FACTOR)

    def attention_levels(self) -> tuple[int, ...]:
        """Levels carrying cross-attention: the two coarsest resolutions."""
        if not self.conditional:
            return ()
        return tuple(sorted({self.depth - 1, max(self.depth - 2, 0)}))

    @property
    def padded_len(self) -> int:
        block = 2**self.depth
        return math.ceil(self.window_len / block) * block


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer hyperparameters."""

    learning_rate: float = 5e-4
    batch_size: int = 64
    epochs: int = 500
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise DataError("learning_rate, batch_size and epochs must all be positive")


# ------------------------------------------------------------- contract math


def time_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal step embedding: interleaved (sin, cos) pairs over
    geometric frequencies from 1 down to 1e-4."""
    if t < 1:
        raise PreconditionError(f"step index must be >= 1, got {t}")
    if dim < 2 or dim % 2 != 0:
        raise PreconditionError(f"embedding dim must be even and >= 2, got {dim}")
    half = dim // 2
    k = np.arange(half, dtype=np.float64)
    freqs = np.power(1e-4, k / max(half - 1, 1))
    emb = np.empty(dim, dtype=np.float64)
    emb[0::2] = np.sin(t * freqs)
    emb[1::2] = np.cos(t * freqs)
    return emb


def cross_attention(
    x_tokens: np.ndarray,
    c_tokens: np.ndarray,
    wq: np.ndarray,
    wk: np.ndarray,
    wv: np.ndarray,
) -> np.ndarray:
    """Attention of query tokens over condition tokens:
    softmax(Q K^T / sqrt(d_2)) V with Q = X1 Wq, K = X2 Wk, V = X2 Wv.

    d_2 is the projected key width; every output row is a convex
    combination of the value rows.
    """
    q = np.asarray(x_tokens, dtype=np.float64) @ np.asarray(wq, dtype=np.float64)
    k = np.asarray(c_tokens, dtype=np.float64) @ np.asarray(wk, dtype=np.float64)
    v = np.asarray(c_tokens, dtype=np.float64) @ np.asarray(wv, dtype=np.float64)
    if q.shape[1] != k.shape[1]:
        raise PreconditionError(f"query/key width mismatch {q.shape[1]} vs {k.shape[1]}")
    scores = q @ k.T / np.sqrt(k.shape[1])
    scores -= scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights @ v


# ------------------------------------------------------------- torch blocks


def _group_count(ch: int) -> int:
    for g in (8, 4):
        if ch % g == 0:
            return g
    return 1


class _TimeEmbed(nn.Module):
    """Torch mirror of time_embedding for batched integer steps."""

    def __init__(self, dim: int):
        super().__init__()
        half = dim // 2
        k = torch.arange(half, dtype=torch.float64)
        freqs = torch.pow(torch.tensor(1e-4, dtype=torch.float64), k / max(half - 1, 1))
        # derived from dim alone, rebuilt at construction: keep out of state_dict
        self.register_buffer("freqs", freqs, persistent=False)
        self.dim = dim

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        angles = t[:, None].to(self.freqs.dtype) * self.freqs[None, :]
        emb = torch.empty(t.shape[0], self.dim, dtype=self.freqs.dtype, device=t.device)
        emb[:, 0::2] = torch.sin(angles)
        emb[:, 1::2] = torch.cos(angles)
        return emb


class _ResBlock(nn.Module):
    def __init__(self, ch_in: int, ch_out: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_group_count(ch_in), ch_in)
        self.conv1 = nn.Conv1d(ch_in, ch_out, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, ch_out)
        self.norm2 = nn.GroupNorm(_group_count(ch_out), ch_out)
        self.conv2 = nn.Conv1d(ch_out, ch_out, 3, padding=1)
        self.conv2._zero_init = True  # final projection starts silent
        self.skip = nn.Conv1d(ch_in, ch_out, 1) if ch_in != ch_out else nn.Identity()

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(t_emb)[:, :, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class _CrossAttention(nn.Module):
    """Multi-head attention of sequence positions over condition tokens.

    Condition tokens get a learned projection to the block width plus a
    fixed sinusoidal position code, so reordering tokens changes the keys.
    Queries get the same kind of code over their own positions; the
    convolutional backbone is translation-equivariant, so without it a
    position cannot tell which token describes it.
    """

    def __init__(self, ch: int, heads: int, d_feat: int, n_tokens: int, n_queries: int):
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(_group_count(ch), ch)
        self.cond_proj = nn.Linear(d_feat, ch)
        self.wq = nn.Linear(ch, ch)
        self.wk = nn.Linear(ch, ch)
        self.wv = nn.Linear(ch, ch)
        self.out = nn.Linear(ch, ch)
        pos = torch.from_numpy(
            np.stack([time_embedding(i + 1, ch) for i in range(n_tokens)])
        )
        self.register_buffer("pos", pos, persistent=False)
        q_pos = torch.from_numpy(
            np.stack([time_embedding(i + 1, ch) for i in range(n_queries)])
        )
        self.register_buffer("q_pos", q_pos, persistent=False)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        b, ch, length = x.shape
        h = self.norm(x).transpose(1, 2)  # [B, L, ch]
        h = h + self.q_pos.to(h.dtype)[None, :length]
        c = self.cond_proj(cond) + self.pos.to(cond.dtype)[None, : cond.shape[1]]
        q, k, v = self.wq(h), self.wk(c), self.wv(c)
        dk = ch // self.heads

        def split(z):
            return z.view(b, z.shape[1], self.heads, dk).transpose(1, 2)

        att = torch.softmax(split(q) @ split(k).transpose(2, 3) / math.sqrt(dk), dim=-1)
        mixed = (att @ split(v)).transpose(1, 2).reshape(b, length, ch)
        return x + self.out(mixed).transpose(1, 2)


class NoisePredictorNet(nn.Module):
    """The UNet backbone; use train_model/predict_noise rather than calling
    this directly."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        widths = [config.level_width(i) for i in range(config.depth)]
        attn_levels = set(config.attention_levels())
        time_dim = config.time_embed_dim
        self.time_embed = _TimeEmbed(time_dim)
        self.time_mlp = nn.Sequential(nn.Linear(time_dim, time_dim), nn.SiLU())
        self.stem = nn.Conv1d(config.channels, widths[0], 3, padding=1)

        n_tokens = config.window_len // 7 if config.conditional else 0
        self.enc_blocks = nn.ModuleList()
        self.enc_attn = nn.ModuleDict()
        self.downs = nn.ModuleList()
        prev = widths[0]
        for i, w in enumerate(widths):
            self.enc_blocks.append(_ResBlock(prev, w, time_dim))
            if i in attn_levels:
                self.enc_attn[str(i)] = _CrossAttention(
                    w, config.heads, config.d_feat, n_tokens, config.padded_len >> i
                )
            if i < config.depth - 1:
                self.downs.append(nn.Conv1d(w, w, 3, stride=2, padding=1))
            prev = w

        self.mid = _ResBlock(widths[-1], widths[-1], time_dim)

        self.dec_blocks = nn.ModuleList()
        self.dec_attn = nn.ModuleDict()
        self.ups = nn.ModuleList()
        for i in reversed(range(config.depth)):
            out_w = widths[max(i - 1, 0)]
            self.dec_blocks.append(_ResBlock(widths[i] * 2, out_w, time_dim))
            if i in attn_levels:
                self.dec_attn[str(i)] = _CrossAttention(
                    out_w, config.heads, config.d_feat, n_tokens, config.padded_len >> i
                )
            if i > 0:
                self.ups.append(nn.Conv1d(out_w, out_w, 3, padding=1))

        head_w = widths[0]
        self.head_norm = nn.GroupNorm(_group_count(head_w), head_w)
        self.head = nn.Conv1d(head_w, config.channels, 3, padding=1)
        self._init_parameters()

    def _init_parameters(self) -> None:
        """Fan-in-scaled uniform init from the config seed; residual-block
        final projections start at zero."""
        gen = torch.Generator().manual_seed(self.config.seed)
        for module in self.modules():
            if isinstance(module, (nn.Conv1d, nn.Linear)):
                if getattr(module, "_zero_init", False):
                    nn.init.zeros_(module.weight)
                    if module.bias is not None:
                        nn.init.zeros_(module.bias)
                    continue
                fan_in = module.weight.shape[1:].numel()
                bound = 1.0 / math.sqrt(fan_in)
                with torch.no_grad():
                    module.weight.uniform_(-bound, bound, generator=gen)
                    if module.bias is not None:
                        module.bias.uniform_(-bound, bound, generator=gen)

    def forward(
        self, x: torch.Tensor, t: torch.Tensor, cond: torch.Tensor | None
    ) -> torch.Tensor:
        cfg = self.config
        pad = cfg.padded_len - x.shape[-1]
        if pad:
            x = F.pad(x, (0, pad), mode="reflect")
        t_emb = self.time_mlp(self.time_embed(t).to(x.dtype))
        h = self.stem(x)
        skips = []
        for i, block in enumerate(self.enc_blocks):
            h = block(h, t_emb)
            if str(i) in self.enc_attn:
                h = self.enc_attn[str(i)](h, cond)
            skips.append(h)
            if i < cfg.depth - 1:
                h = self.downs[i](h)
        h = self.mid(h, t_emb)
        for j, i in enumerate(reversed(range(cfg.depth))):
            h = torch.cat([h, skips[i]], dim=1)
            h = self.dec_blocks[j](h, t_emb)
            if str(i) in self.dec_attn:
                h = self.dec_attn[str(i)](h, cond)
            if i > 0:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.ups[j](h)
        out = self.head(F.silu(self.head_norm(h)))
        return out[..., : x.shape[-1] - pad] if pad else out


# ------------------------------------------------------------- params facade


@dataclass
class ModelParams:
    """A trained (or fresh) predictor: network, config, the schedule it was
    trained against, and the per-epoch loss trace."""

    net: NoisePredictorNet
    config: ModelConfig
    schedule_fingerprint: tuple[int, float, float]
    loss_trace: list[float] = field(default_factory=list)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def predict(self, xt: np.ndarray, t: int, conditions: np.ndarray | None) -> np.ndarray:
        """Batched numpy inference; accepts [L], [B, L] (single-channel) or
        [C, L], [B, C, L] (multi-channel) and preserves the input shape."""
        _single_thread()
        cfg = self.config
        x = np.asarray(xt, dtype=np.float64)
        squeeze = []
        if cfg.channels == 1:
            if x.ndim == 1:
                x = x[None, None, :]
                squeeze = [0, 1]
            elif x.ndim == 2:
                x = x[:, None, :]
                squeeze = [1]
            else:
                raise PreconditionError(f"expected [L] or [B, L] input, got shape {x.shape}")
        else:
            if x.ndim == 2:
                x = x[None, :, :]
                squeeze = [0]
            elif x.ndim != 3:
                raise PreconditionError(f"expected [C, L] or [B, C, L] input, got {x.shape}")
        if x.shape[1] != cfg.channels or x.shape[2] != cfg.window_len:
            raise PreconditionError(
                f"input shape {x.shape} does not match trained layout "
                f"[{cfg.channels} x {cfg.window_len}]"
            )
        T = self.schedule_fingerprint[0]
        if not 1 <= t <= T:
            raise PreconditionError(f"step {t} outside trained schedule range 1..{T}")
        cond_arr = None
        if conditions is not None:
            cond_arr = np.asarray(getattr(conditions, "tokens", conditions), dtype=np.float64)
        if cfg.conditional and cond_arr is None:
            raise PreconditionError("conditional model requires condition tokens")
        if not cfg.conditional and cond_arr is not None:
            raise PreconditionError("unconditional model takes no condition tokens")

        dtype = next(self.net.parameters()).dtype
        self.net.eval()
        with torch.no_grad():
            xt_t = torch.from_numpy(np.ascontiguousarray(x)).to(dtype)
            t_t = torch.full((x.shape[0],), t, dtype=torch.long)
            c_t = None
            if cond_arr is not None:
                if cond_arr.ndim == 2:
                    cond_arr = np.broadcast_to(
                        cond_arr, (x.shape[0],) + cond_arr.shape
                    ).copy()
                c_t = torch.from_numpy(np.ascontiguousarray(cond_arr)).to(dtype)
            out = self.net(xt_t, t_t, c_t).numpy().astype(np.float64)
        for axis in reversed(squeeze):
            out = np.squeeze(out, axis=axis)
        return out


def predict_noise(
    params: ModelParams,
    xt: np.ndarray,
    t: int,
    conditions: ConditionTokens | np.ndarray | None,
) -> np.ndarray:
    """Deterministic noise estimate for a (possibly batched) noised window."""
    out = params.predict(xt, t, conditions)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"noise prediction produced non-finite values at step {t}")
    return out


# ------------------------------------------------------------------ training


def _stack_dataset(dataset, mcfg: ModelConfig):
    if not dataset:
        raise PreconditionError("training dataset is empty")
    xs, conds = [], []
    for w in dataset:
        values = np.asarray(w.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
        if values.shape != (mcfg.channels, mcfg.window_len):
            raise PreconditionError(
                f"window shape {values.shape} does not match config "
                f"[{mcfg.channels} x {mcfg.window_len}]"
            )
        xs.append(values)
        if mcfg.conditional:
            tokens = w.conditions.tokens
            if tokens.shape[1] != mcfg.d_feat:
                raise PreconditionError(
                    f"condition width {tokens.shape[1]} does not match d_feat {mcfg.d_feat}"
                )
            conds.append(tokens)
    x = torch.from_numpy(np.stack(xs)).to(torch.float32)
    c = torch.from_numpy(np.stack(conds)).to(torch.float32) if conds else None
    return x, c


def train(
    dataset,
    sched: NoiseSchedule,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
) -> ModelParams:
    """Fit the noise predictor by MSE on uniformly drawn steps.

    Deterministic given seeds: same dataset + configs reproduce the loss
    trace exactly. Raises NumericError (with the epoch index) if the loss
    stops being finite.
    """
    _single_thread()
    x0, cond = _stack_dataset(dataset, mcfg)
    n = x0.shape[0]
    net = NoisePredictorNet(mcfg)
    opt = torch.optim.Adam(
        net.parameters(), lr=tcfg.learning_rate, betas=(0.9, 0.999), eps=1e-8
    )
    gen = torch.Generator().manual_seed(tcfg.seed)
    sqrt_ab = torch.from_numpy(np.sqrt(sched.alpha_bar)).to(torch.float32)
    sqrt_1m = torch.from_numpy(np.sqrt(1.0 - sched.alpha_bar)).to(torch.float32)
    trace: list[float] = []
    net.train()
    for epoch in range(tcfg.epochs):
        perm = torch.randperm(n, generator=gen)
        epoch_loss = 0.0
        for start in range(0, n, tcfg.batch_size):
            idx = perm[start : start + tcfg.batch_size]
            xb = x0[idx]
            cb = cond[idx] if cond is not None else None
            t = torch.randint(1, sched.T + 1, (len(idx),), generator=gen)
            eps = torch.randn(xb.shape, generator=gen)
            xt = sqrt_ab[t][:, None, None] * xb + sqrt_1m[t][:, None, None] * eps
            pred = net(xt, t, cb)
            loss = F.mse_loss(pred, eps)
            opt.zero_grad()
            loss.backward()
            opt.step()
            value = float(loss.detach())
            if not math.isfinite(value):
                raise NumericError(f"training diverged at epoch {epoch}")
            epoch_loss += value * len(idx)
        trace.append(epoch_loss / n)
    return ModelParams(
        net=net,
        config=mcfg,
        schedule_fingerprint=sched.fingerprint(),
        loss_trace=trace,
    )
