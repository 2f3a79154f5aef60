"""Noise-prediction U-Net conditioned on diffusion time, sound class and an event feature.

Layout (activations are ``[B, L, C]``)::

    x -> input conv -> Down_0 ... Down_{n-1} -> BiLSTM bottleneck
      -> Up_{n-1} ... Up_0 (each concatenating its Down skip) -> output conv -> eps_hat

Every block runs a resampling conv (strided in Down, transposed in Up)
followed by two residual convs: the first FiLM-modulated by the joint
(time, class) embedding, the second modulated by the temporal event feature
using the configured ``cond_mode``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .conditioning import BFiLM, FiLM, TFiLM
from .features import frame_count
from .nn.layers import MLP, Activation, BiLSTM, Conv1d, ConvTranspose1d, Linear
from .nn.ops import ShapeError
from .nn.params import ParamStore, random_source

COND_MODES = ("none", "film", "tfilm", "bfilm")
PLACEMENTS = ("every_block", "latter_levels")


@dataclass(frozen=True)
class ModelConfig:
    sample_len: int = 8000
    sample_rate: int = 8000
    channels: tuple[int, ...] = (16, 32, 64, 128)
    strides: tuple[int, ...] = (2, 2, 2, 2)
    kernel: int = 5
    bottleneck_hidden: int = 64
    class_count: int = 3
    class_embed_dim: int = 16
    sigma_embed_dim: int = 16
    embed_dim: int = 32
    cond_mode: str = "bfilm"
    n_blocks: int = 16
    temporal_hidden: int = 16
    temporal_placement: str = "every_block"
    feature_window: int = 512
    feature_hop: int = 128
    activation: str = "silu"
    identity_init: bool = True
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if len(self.channels) != len(self.strides) or not self.channels:
            raise ValueError(f"channels {self.channels} and strides {self.strides} must have equal, non-zero length")
        if self.sample_len % math.prod(self.strides):
            raise ValueError(f"product of strides {self.strides} does not divide sample_len {self.sample_len}")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.cond_mode not in COND_MODES:
            raise ValueError(f"cond_mode must be one of {COND_MODES}, got {self.cond_mode!r}")
        if self.temporal_placement not in PLACEMENTS:
            raise ValueError(f"temporal_placement must be one of {PLACEMENTS}")
        if self.frames < 1:
            raise ValueError(f"sample_len {self.sample_len} shorter than feature window {self.feature_window}")
        if self.cond_mode in ("tfilm", "bfilm"):
            shortest = min(self.level_lengths)
            if self.n_blocks > self.frames or self.n_blocks > shortest:
                raise ValueError(f"n_blocks {self.n_blocks} exceeds feature frames {self.frames} "
                                 f"or shortest activation length {shortest}")

    @property
    def levels(self) -> int:
        return len(self.channels)

    @property
    def frames(self) -> int:
        return frame_count(self.sample_len, self.feature_window, self.feature_hop)

    @property
    def level_lengths(self) -> list[int]:
        """Activation length entering each level, followed by the bottleneck length."""
        lengths = [self.sample_len]
        for s in self.strides:
            lengths.append(lengths[-1] // s)
        return lengths

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        return cls(**parse_config_values(cls, parse_key_values(text)))


def parse_key_values(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def parse_config_values(cls, values: dict[str, str], strict: bool = True) -> dict:
    kinds = {f.name: f.type for f in fields(cls)}
    defaults = {f.name: f.default for f in fields(cls)}
    out = {}
    for key, value in values.items():
        if key not in kinds:
            if strict:
                raise KeyError(f"unknown {cls.__name__} key {key!r}")
            continue
        default = defaults[key]
        if isinstance(default, bool):
            out[key] = value.lower() in ("1", "true", "yes", "on")
        elif isinstance(default, tuple):
            out[key] = tuple(int(x) for x in value.split(",") if x.strip())
        elif isinstance(default, int):
            out[key] = int(value)
        elif isinstance(default, float):
            out[key] = float(value)
        else:
            out[key] = value
    return out


def sinusoidal_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Deterministic smooth embedding of diffusion time ``t`` in [0, 1]."""
    half = dim // 2
    freqs = np.pi * np.geomspace(1.0, 256.0, half)
    ang = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.asarray(t, dtype=np.float64)[:, None]], axis=1)
    return emb


def _resample_kernel(stride: int) -> tuple[int, int]:
    # kernel/padding pair that maps L -> L/stride exactly (and back for the transpose)
    return stride + 2 * (stride // 2), stride // 2


class _Block:
    def __init__(self, store, prefix, cfg: ModelConfig, channels, rng, temporal: bool):
        ident = cfg.identity_init
        self.conv_a = Conv1d(store, f"{prefix}.conv_a", channels, channels, cfg.kernel, rng)
        self.film = FiLM(store, f"{prefix}.film", cfg.embed_dim, channels, rng, zero_last=ident)
        self.act_a = Activation(cfg.activation)
        self.conv_b = Conv1d(store, f"{prefix}.conv_b", channels, channels, cfg.kernel, rng)
        self.act_b = Activation(cfg.activation)
        self.temporal = None
        mode = cfg.cond_mode if temporal else "none"
        if mode == "film":
            self.temporal = FiLM(store, f"{prefix}.tmod", cfg.frames, channels, rng,
                                 hidden=(cfg.temporal_hidden,), zero_last=ident)
        elif mode == "tfilm":
            self.temporal = TFiLM(store, f"{prefix}.tmod", 1, channels, cfg.temporal_hidden, cfg.n_blocks, rng,
                                  zero_last=ident)
        elif mode == "bfilm":
            self.temporal = BFiLM(store, f"{prefix}.tmod", 1, channels, cfg.temporal_hidden, cfg.n_blocks, rng,
                                  zero_last=ident)
        self.mode = mode

    def residual(self, h, emb, feat, bypass):
        a = self.act_a.forward(self.film.forward(self.conv_a.forward(h), emb))
        b = self.conv_b.forward(a)
        self._used_temporal = self.temporal is not None and not bypass
        if self._used_temporal:
            if self.mode == "film":
                b = self.temporal.forward(b, feat[:, :, 0])
            else:
                b = self.temporal.forward(b, feat)
        return h + self.act_b.forward(b)

    def residual_backward(self, dout):
        db = self.act_b.backward(dout)
        dfeat = None
        if self._used_temporal:
            db, dfeat = self.temporal.backward(db)
            if self.mode == "film":
                dfeat = dfeat[:, :, None]
        da = self.act_a.backward(self.conv_b.backward(db))
        da, demb = self.film.backward(da)
        return dout + self.conv_a.backward(da), demb, dfeat


class DownBlock(_Block):
    def __init__(self, store, prefix, cfg, cin, cout, stride, rng, temporal):
        k, pad = _resample_kernel(stride)
        self.down = Conv1d(store, f"{prefix}.down", cin, cout, k, rng, stride=stride, padding=pad)
        super().__init__(store, prefix, cfg, cout, rng, temporal)

    def forward(self, x, emb, feat, bypass=False):
        return self.residual(self.down.forward(x), emb, feat, bypass)

    def backward(self, dout):
        dh, demb, dfeat = self.residual_backward(dout)
        return self.down.backward(dh), demb, dfeat


class UpBlock(_Block):
    def __init__(self, store, prefix, cfg, cin, cout, stride, rng, temporal):
        k, crop = _resample_kernel(stride)
        self.cin = cin
        self.up = ConvTranspose1d(store, f"{prefix}.up", 2 * cin, cout, k, rng, stride=stride, crop=crop)
        super().__init__(store, prefix, cfg, cout, rng, temporal)

    def forward(self, x, skip, emb, feat, bypass=False):
        h = self.up.forward(np.concatenate([x, skip], axis=-1))
        return self.residual(h, emb, feat, bypass)

    def backward(self, dout):
        dh, demb, dfeat = self.residual_backward(dout)
        dz = self.up.backward(dh)
        return dz[..., : self.cin], dz[..., self.cin :], demb, dfeat


class UNet:
    """Epsilon-prediction network; parameters live in ``self.store``.

    ``forward`` keeps the caches needed by ``backward``; one backward per forward.
    """

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        self.store = ParamStore(dtype)
        s = self.store
        rng = random_source(cfg.init_seed)
        c0 = cfg.channels[0]

        s.add("class_table", rng.normal(0.0, 1.0, (cfg.class_count + 1, cfg.class_embed_dim)))
        s.add("null_feature", np.zeros(cfg.frames))
        self.embed = MLP(s, "embed", [cfg.sigma_embed_dim + cfg.class_embed_dim, cfg.embed_dim, cfg.embed_dim], rng,
                         activation=cfg.activation)
        self.embed_act = Activation(cfg.activation)
        self.conv_in = Conv1d(s, "conv_in", 1, c0, cfg.kernel, rng)

        down_temporal = cfg.temporal_placement == "every_block"
        self.downs = []
        cin = c0
        for i, (c, st) in enumerate(zip(cfg.channels, cfg.strides)):
            self.downs.append(DownBlock(s, f"down{i}", cfg, cin, c, st, rng, down_temporal))
            cin = c
        cl = cfg.channels[-1]
        self.lstm = BiLSTM(s, "bottleneck.lstm", cl, cfg.bottleneck_hidden, rng)
        self.proj = Linear(s, "bottleneck.proj", 2 * cfg.bottleneck_hidden, cl, rng, zero_init=cfg.identity_init)
        self.ups = []
        for i in range(cfg.levels - 1, -1, -1):
            cout = cfg.channels[i - 1] if i > 0 else c0
            self.ups.append(UpBlock(s, f"up{i}", cfg, cfg.channels[i], cout, cfg.strides[i], rng, True))
        self.conv_out = Conv1d(s, "conv_out", 2 * c0, 1, cfg.kernel, rng, zero_init=cfg.identity_init)

    # -- embeddings -----------------------------------------------------------------

    def _class_index(self, class_id, bsz):
        null = self.cfg.class_count
        if class_id is None:
            return np.full(bsz, null)
        idx = np.asarray(class_id, dtype=np.int64).reshape(-1)
        if idx.shape[0] != bsz:
            raise ShapeError(f"{idx.shape[0]} class ids for batch of {bsz}")
        if np.any(idx >= self.cfg.class_count) or np.any(idx < -1):
            raise ValueError(f"class id out of range [0, {self.cfg.class_count}) (or -1 for null): {idx}")
        return np.where(idx < 0, null, idx)

    def _features(self, feature, bsz, null_rows):
        frames = self.cfg.frames
        null = self.store["null_feature"]
        if feature is None:
            feat = np.broadcast_to(null, (bsz, frames)).copy()
            null_rows = np.ones(bsz, dtype=bool)
        else:
            feat = np.array(feature, dtype=self.store.dtype).reshape(bsz, -1)
            if feat.shape[1] != frames:
                raise ShapeError(f"event feature has {feat.shape[1]} frames, model expects {frames}")
            feat[null_rows] = null
        return feat[:, :, None], null_rows

    def bottleneck(self, h):
        return h + self.proj.forward(self.lstm.forward(h))

    def bottleneck_backward(self, dout):
        return dout + self.lstm.backward(self.proj.backward(dout))

    # -- forward / backward -----------------------------------------------------------

    def forward(self, x_noised, t, class_id=None, feature=None, drop=None, bypass_temporal=False):
        """Predict the noise in ``x_noised`` (``[B, sample_len]``).

        ``class_id`` entries of ``-1`` (or ``None`` for the whole batch) select
        the null class; ``feature=None`` selects the learned null feature.
        Rows flagged in ``drop`` get both null conditions. With
        ``bypass_temporal`` the temporal modulation layers are skipped.
        """
        cfg = self.cfg
        dt = self.store.dtype
        x = np.asarray(x_noised, dtype=dt)
        if x.ndim != 2 or x.shape[1] != cfg.sample_len:
            raise ShapeError(f"input shape {x.shape}, expected [B, {cfg.sample_len}]")
        bsz = x.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (bsz,))
        drop = np.zeros(bsz, dtype=bool) if drop is None else np.asarray(drop, dtype=bool)
        cls = self._class_index(class_id, bsz)
        cls = np.where(drop, cfg.class_count, cls)
        feat, null_rows = self._features(feature, bsz, drop)

        emb_in = np.concatenate([sinusoidal_embedding(t, cfg.sigma_embed_dim),
                                 self.store["class_table"][cls]], axis=1).astype(dt)
        emb = self.embed_act.forward(self.embed.forward(emb_in))

        h0 = self.conv_in.forward(x[:, :, None])
        h = h0
        skips = []
        for block in self.downs:
            h = block.forward(h, emb, feat, bypass_temporal)
            skips.append(h)
        h = self.bottleneck(h)
        for block, skip in zip(self.ups, reversed(skips)):
            h = block.forward(h, skip, emb, feat, bypass_temporal)
        out = self.conv_out.forward(np.concatenate([h, h0], axis=-1))
        self._cache = (cls, null_rows)
        return out[:, :, 0]

    def backward(self, d_eps):
        """Accumulate parameter gradients of ``sum(d_eps * eps_hat)``."""
        cls, null_rows = self._cache
        c0 = self.cfg.channels[0]
        dout = self.conv_out.backward(np.asarray(d_eps, dtype=self.store.dtype)[:, :, None])
        dh, dh0 = dout[..., :c0], dout[..., c0:]
        demb = 0.0
        dfeat = 0.0
        dskips = []
        for block in reversed(self.ups):
            dh, dskip, de, df = block.backward(dh)
            dskips.append(dskip)
            demb = demb + de
            if df is not None:
                dfeat = dfeat + df
        dh = self.bottleneck_backward(dh)
        for block, dskip in zip(reversed(self.downs), reversed(dskips)):
            dh, de, df = block.backward(dh + dskip)
            demb = demb + de
            if df is not None:
                dfeat = dfeat + df
        self.conv_in.backward(dh + dh0)
        demb_in = self.embed.backward(self.embed_act.backward(demb))
        np.add.at(self.store.grads["class_table"], cls, demb_in[:, self.cfg.sigma_embed_dim:])
        if isinstance(dfeat, np.ndarray) and null_rows.any():
            self.store.grads["null_feature"] += dfeat[null_rows, :, 0].sum(axis=0)

    __call__ = forward

    def predict_noise(self, x_noised, t, class_id=None, feature=None):
        return self.forward(x_noised, t, class_id, feature)

    def param_count(self) -> int:
        return self.store.count()

    def count_by_module(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for name, p in self.store.params.items():
            key = name.split(".")[0]
            out[key] = out.get(key, 0) + p.size
        return out


def describe(cfg: ModelConfig) -> tuple[str, int]:
    """Human-readable architecture summary and exact trainable parameter count."""
    model = UNet(cfg)
    lengths = cfg.level_lengths
    lines = [f"cond_mode={cfg.cond_mode} n_blocks={cfg.n_blocks} placement={cfg.temporal_placement}",
             f"sample_len={cfg.sample_len} @ {cfg.sample_rate} Hz, feature frames={cfg.frames}",
             "level lengths: " + " -> ".join(str(n) for n in lengths) + " -> "
             + " -> ".join(str(n) for n in reversed(lengths[:-1]))]
    for name, n in model.count_by_module().items():
        lines.append(f"  {name:<16s} {n:>10,d}")
    total = model.param_count()
    lines.append(f"  {'total':<16s} {total:>10,d}")
    return "\n".join(lines), total
