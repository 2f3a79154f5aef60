"""Stateful layer wrappers around :mod:`eventfoley.nn.ops`.

A layer registers its parameters in a shared :class:`ParamStore` under a
dotted prefix, keeps the cache of its most recent forward call, and adds
parameter gradients into the store on :meth:`backward`. One forward must be
followed by at most one backward before the next forward.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .params import ParamStore


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    def __init__(self, store: ParamStore, prefix: str):
        self.store = store
        self.prefix = prefix
        self._names: dict[str, str] = {}

    def add_param(self, name: str, value) -> None:
        self._names[name] = self.store.add(f"{self.prefix}.{name}", value)

    def p(self, name: str) -> np.ndarray:
        return self.store.params[self._names[name]]

    def accumulate(self, name: str, grad) -> None:
        if grad is not None:
            self.store.grads[self._names[name]] += grad

    def param_names(self) -> list[str]:
        return list(self._names.values())


class Conv1d(Layer):
    def __init__(self, store, prefix, cin, cout, kernel, rng, stride=1, padding=None, zero_init=False):
        super().__init__(store, prefix)
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        w = np.zeros((cout, cin, kernel)) if zero_init else uniform_init(rng, (cout, cin, kernel), cin * kernel)
        self.add_param("weight", w)
        self.add_param("bias", np.zeros(cout) if zero_init else uniform_init(rng, cout, cin * kernel))

    def forward(self, x):
        y, self._cache = ops.conv1d_forward(x, self.p("weight"), self.p("bias"), self.stride, self.padding)
        return y

    def backward(self, dy):
        dx, dw, db = ops.conv1d_backward(dy, self._cache)
        self.accumulate("weight", dw)
        self.accumulate("bias", db)
        return dx


class ConvTranspose1d(Layer):
    def __init__(self, store, prefix, cin, cout, kernel, rng, stride=1, crop=0):
        super().__init__(store, prefix)
        self.stride = stride
        self.crop = crop
        self.add_param("weight", uniform_init(rng, (cin, cout, kernel), cin * kernel // stride))
        self.add_param("bias", uniform_init(rng, cout, cin * kernel // stride))

    def forward(self, x):
        y, self._cache = ops.conv1d_transposed_forward(x, self.p("weight"), self.p("bias"), self.stride, self.crop)
        return y

    def backward(self, dy):
        dx, dw, db = ops.conv1d_transposed_backward(dy, self._cache)
        self.accumulate("weight", dw)
        self.accumulate("bias", db)
        return dx


class Linear(Layer):
    def __init__(self, store, prefix, din, dout, rng, zero_init=False, bias_init=None):
        super().__init__(store, prefix)
        self.add_param("weight", np.zeros((din, dout)) if zero_init else uniform_init(rng, (din, dout), din))
        if bias_init is None:
            bias_init = np.zeros(dout) if zero_init else uniform_init(rng, dout, din)
        self.add_param("bias", bias_init)

    def forward(self, x):
        y, self._cache = ops.linear_forward(x, self.p("weight"), self.p("bias"))
        return y

    def backward(self, dy):
        dx, dw, db = ops.linear_backward(dy, self._cache)
        self.accumulate("weight", dw)
        self.accumulate("bias", db)
        return dx


class Activation:
    def __init__(self, kind="silu"):
        self.kind = kind
        self._fwd, self._bwd = ops.ACTIVATIONS[kind]

    def forward(self, x):
        y, self._cache = self._fwd(x)
        return y

    def backward(self, dy):
        return self._bwd(dy, self._cache)


class MLP(Layer):
    """Affine layers with a nonlinearity between them; the last layer stays affine.

    ``widths`` lists every layer width including input and output, so
    ``[d_in, d_h, d_out]`` is two affine maps. ``out_bias`` overrides the
    initial bias of the final layer (used to start FiLM at gamma=1).
    """

    def __init__(self, store, prefix, widths, rng, activation="silu", zero_last=False, out_bias=None):
        super().__init__(store, prefix)
        if len(widths) < 2:
            raise ValueError(f"MLP needs at least input and output widths, got {widths}")
        self.widths = list(widths)
        self.layers = []
        n = len(widths) - 1
        for k in range(n):
            last = k == n - 1
            self.layers.append(
                Linear(store, f"{prefix}.{k}", widths[k], widths[k + 1], rng,
                       zero_init=last and zero_last, bias_init=out_bias if last else None)
            )
        self.acts = [Activation(activation) for _ in range(n - 1)]

    def forward(self, v):
        if v.shape[-1] != self.widths[0]:
            raise ops.ShapeError(f"MLP: input width {v.shape[-1]} != {self.widths[0]}")
        for k, layer in enumerate(self.layers):
            v = layer.forward(v)
            if k < len(self.acts):
                v = self.acts[k].forward(v)
        return v

    def backward(self, dv):
        for k in range(len(self.layers) - 1, -1, -1):
            if k < len(self.acts):
                dv = self.acts[k].backward(dv)
            dv = self.layers[k].backward(dv)
        return dv

    @staticmethod
    def count(widths) -> int:
        return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


class LSTM(Layer):
    def __init__(self, store, prefix, cin, hidden, rng, reverse=False):
        super().__init__(store, prefix)
        self.hidden = hidden
        self.reverse = reverse
        self.add_param("wx", uniform_init(rng, (cin, 4 * hidden), hidden))
        self.add_param("wh", uniform_init(rng, (hidden, 4 * hidden), hidden))
        self.add_param("bias", uniform_init(rng, 4 * hidden, hidden))

    def forward(self, x):
        y, self._cache = ops.lstm_forward(x, self.p("wx"), self.p("wh"), self.p("bias"), self.reverse)
        return y

    def backward(self, dy):
        dx, dwx, dwh, db = ops.lstm_backward(dy, self._cache)
        self.accumulate("wx", dwx)
        self.accumulate("wh", dwh)
        self.accumulate("bias", db)
        return dx

    @staticmethod
    def count(cin, hidden) -> int:
        return 4 * hidden * (cin + hidden) + 4 * hidden


class BiLSTM:
    """Forward and time-reversed LSTM, outputs concatenated on the channel axis."""

    def __init__(self, store, prefix, cin, hidden, rng):
        self.hidden = hidden
        self.fwd = LSTM(store, f"{prefix}.fwd", cin, hidden, rng)
        self.bwd = LSTM(store, f"{prefix}.bwd", cin, hidden, rng, reverse=True)

    def forward(self, x):
        return np.concatenate([self.fwd.forward(x), self.bwd.forward(x)], axis=-1)

    def backward(self, dy):
        h = self.hidden
        return self.fwd.backward(dy[..., :h]) + self.bwd.backward(dy[..., h:])

    @staticmethod
    def count(cin, hidden) -> int:
        return 2 * LSTM.count(cin, hidden)
