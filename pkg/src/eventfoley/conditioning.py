"""Feature-wise affine modulation layers: FiLM, temporal FiLM and Block-FiLM.

All layers map a conditioning input to per-channel ``(gamma, beta)`` and
return ``gamma * x + beta`` on a channels-last activation ``x`` of shape
``[B, L_out, C_out]``. The block-wise variants split both the condition
``y`` (``[B, L_in, C_in]``) and ``x`` into ``N`` contiguous blocks. Lengths
that are not a multiple of ``N`` are right-padded by repeating the last
column; padding on the activation side is stripped after modulation.

``TFiLM`` derives block ``i``'s parameters from an LSTM run over the pooled
blocks, so block ``i`` depends on condition blocks ``1..i``. ``BFiLM`` runs one
shared MLP on each pooled block independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import pad_to_blocks
from .nn.layers import LSTM, MLP, Linear
from .nn.ops import ShapeError


def _film_bias(channels: int) -> np.ndarray:
    return np.concatenate([np.ones(channels), np.zeros(channels)])


def pool_blocks(y: np.ndarray, n_blocks: int):
    """Max-pool ``[B, L, C]`` over time into ``[B, N, C]``; returns ``(pooled, cache)``."""
    bsz, length, ch = y.shape
    idx = pad_to_blocks(length, n_blocks)
    blocks = y[:, idx].reshape(bsz, n_blocks, -1, ch)
    arg = blocks.argmax(axis=2)
    pooled = np.take_along_axis(blocks, arg[:, :, None, :], axis=2)[:, :, 0]
    src = idx.reshape(n_blocks, -1)[np.arange(n_blocks)[None, :, None], arg]
    return pooled, (y.shape, src)


def pool_blocks_backward(dpooled: np.ndarray, cache) -> np.ndarray:
    shape, src = cache
    bsz, n_blocks, ch = dpooled.shape
    dy = np.zeros(shape, dtype=dpooled.dtype)
    b = np.arange(bsz)[:, None, None]
    c = np.arange(ch)[None, None, :]
    np.add.at(dy, (b, src, c), dpooled)
    return dy


def block_modulate(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    """Apply block ``i``'s ``(gamma[:, i], beta[:, i])`` to the ``i``-th time block of ``x``."""
    bsz, length, ch = x.shape
    n_blocks = gamma.shape[1]
    if gamma.shape != (bsz, n_blocks, ch) or beta.shape != gamma.shape:
        raise ShapeError(f"block_modulate: x {x.shape} with gamma {gamma.shape}, beta {beta.shape}")
    block_len = len(pad_to_blocks(length, n_blocks)) // n_blocks
    g = np.repeat(gamma, block_len, axis=1)[:, :length]
    b = np.repeat(beta, block_len, axis=1)[:, :length]
    return g * x + b, (x, g, n_blocks, block_len)


def block_modulate_backward(dy: np.ndarray, cache):
    x, g, n_blocks, block_len = cache
    bsz, length, ch = x.shape
    pad = n_blocks * block_len - length

    def fold(a):
        return np.pad(a, ((0, 0), (0, pad), (0, 0))).reshape(bsz, n_blocks, block_len, ch).sum(axis=2)

    return dy * g, fold(dy * x), fold(dy)


class FiLM:
    """Global FiLM: one ``(gamma, beta)`` per channel from an MLP of a condition vector."""

    def __init__(self, store, prefix, cond_dim, channels, rng, hidden=(), zero_last=False):
        self.channels = channels
        self.widths = [cond_dim, *hidden, 2 * channels]
        self.mlp = MLP(store, f"{prefix}.mlp", self.widths, rng, zero_last=zero_last,
                       out_bias=_film_bias(channels))

    def params_from(self, cond):
        gb = self.mlp.forward(cond)
        return gb[:, : self.channels], gb[:, self.channels :]

    def forward(self, x, cond):
        if x.shape[-1] != self.channels:
            raise ShapeError(f"FiLM: activation has {x.shape[-1]} channels, layer expects {self.channels}")
        gamma, beta = self.params_from(cond)
        self._cache = (x, gamma)
        return gamma[:, None, :] * x + beta[:, None, :]

    def backward(self, dy):
        x, gamma = self._cache
        dgb = np.concatenate([(dy * x).sum(axis=1), dy.sum(axis=1)], axis=-1)
        return dy * gamma[:, None, :], self.mlp.backward(dgb)


class _BlockFiLMBase:
    def __init__(self, n_blocks, channels):
        if n_blocks < 1:
            raise ValueError(f"block count must be >= 1, got {n_blocks}")
        self.n_blocks = n_blocks
        self.channels = channels

    def block_params(self, pooled):
        raise NotImplementedError

    def block_params_backward(self, dgb):
        raise NotImplementedError

    def forward(self, x, y):
        if x.shape[-1] != self.channels:
            raise ShapeError(f"{type(self).__name__}: activation has {x.shape[-1]} channels, expects {self.channels}")
        if self.n_blocks > x.shape[1] or self.n_blocks > y.shape[1]:
            raise ValueError(f"block count {self.n_blocks} exceeds activation length {x.shape[1]} "
                             f"or condition length {y.shape[1]}")
        pooled, self._pool_cache = pool_blocks(y, self.n_blocks)
        gb = self.block_params(pooled)
        c = self.channels
        out, self._mod_cache = block_modulate(x, gb[..., :c], gb[..., c:])
        return out

    def backward(self, dy):
        dx, dgamma, dbeta = block_modulate_backward(dy, self._mod_cache)
        dpooled = self.block_params_backward(np.concatenate([dgamma, dbeta], axis=-1))
        return dx, pool_blocks_backward(dpooled, self._pool_cache)


class TFiLM(_BlockFiLMBase):
    """Block-wise FiLM whose per-block parameters come from an LSTM over pooled blocks."""

    def __init__(self, store, prefix, cond_channels, channels, hidden, n_blocks, rng, zero_last=False):
        super().__init__(n_blocks, channels)
        self.rnn = LSTM(store, f"{prefix}.rnn", cond_channels, hidden, rng)
        self.out = Linear(store, f"{prefix}.out", hidden, 2 * channels, rng,
                          zero_init=zero_last, bias_init=_film_bias(channels))

    def block_params(self, pooled):
        return self.out.forward(self.rnn.forward(pooled))

    def block_params_backward(self, dgb):
        return self.rnn.backward(self.out.backward(dgb))


class BFiLM(_BlockFiLMBase):
    """Block-wise FiLM with one MLP shared by all pooled blocks."""

    def __init__(self, store, prefix, cond_channels, channels, hidden, n_blocks, rng, zero_last=False):
        super().__init__(n_blocks, channels)
        self.mlp = MLP(store, f"{prefix}.mlp", [cond_channels, hidden, 2 * channels], rng,
                       zero_last=zero_last, out_bias=_film_bias(channels))

    def block_params(self, pooled):
        return self.mlp.forward(pooled)

    def block_params_backward(self, dgb):
        return self.mlp.backward(dgb)


@dataclass(frozen=True)
class ModulationSpec:
    """Widths of one modulation layer, enough to count its parameters.

    ``kind`` is ``film``, ``tfilm`` or ``bfilm``. For ``film`` the MLP is
    ``cond_dim -> *hidden -> 2*channels``; the block variants use a single
    hidden width ``hidden[0]`` (LSTM state for ``tfilm``, MLP width for ``bfilm``).
    """

    kind: str
    cond_dim: int
    channels: int
    hidden: tuple[int, ...] = ()


def count_params(spec: ModulationSpec) -> int:
    if spec.channels == 0:
        return 0
    out = 2 * spec.channels
    if spec.kind == "film":
        return MLP.count([spec.cond_dim, *spec.hidden, out])
    hidden = spec.hidden[0]
    if spec.kind == "bfilm":
        return MLP.count([spec.cond_dim, hidden, out])
    if spec.kind == "tfilm":
        return LSTM.count(spec.cond_dim, hidden) + hidden * out + out
    raise ValueError(f"unknown modulation kind {spec.kind!r}")
