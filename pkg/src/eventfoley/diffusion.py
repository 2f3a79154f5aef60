"""Variance-preserving cosine diffusion: forward noising, training loss, guided ancestral sampling.

Time runs over ``t`` in [0, 1] with ``alpha_bar(t) = cos^2(pi t / 2)``, so the
signal scale is ``cos(pi t / 2)`` and the noise scale ``sin(pi t / 2)``.

Models plug in through two small protocols:

* training: ``model.forward(x_t, t, class_id, feature, drop)`` returning the
  noise estimate, ``model.backward(d_eps)`` and ``model.store``;
* sampling: ``model.predict_noise(x_t, t, class_id, feature)`` where
  ``class_id=None`` / ``feature=None`` request the null conditions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.gradcheck import NumericError
from .nn.ops import ShapeError
from .nn.params import random_source

MAX_BETA = 0.999


def schedule(t):
    """``(sqrt(alpha_bar(t)), sigma(t))`` for scalar or array ``t`` in [0, 1]."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > 1) or np.any(np.isnan(t_arr)):
        raise ValueError(f"diffusion time must lie in [0, 1], got {t}")
    noise_scale = np.sin(0.5 * np.pi * t_arr)
    # cos(pi/2) is 6e-17 in floating point; deriving the signal scale from
    # sigma makes both endpoints exact and keeps alpha_bar consistent with it
    signal = np.sqrt(1.0 - np.square(noise_scale))
    if np.ndim(t) == 0:
        return float(signal), float(noise_scale)
    return signal, noise_scale


def alpha_bar(t):
    """``cos^2(pi t / 2)``, evaluated as ``1 - sigma^2`` so that ``alpha_bar + sigma^2 == 1`` holds exactly."""
    _, s = schedule(t)
    return 1.0 - np.square(s)


@dataclass(frozen=True)
class DiffusionState:
    t: float

    @property
    def alpha_bar(self) -> float:
        return float(alpha_bar(self.t))

    @property
    def sigma(self) -> float:
        return schedule(self.t)[1]


def noise(x0: np.ndarray, t, rng: np.random.Generator):
    """Forward-noise ``x0`` (``[B, L]``) to times ``t`` (``[B]``); returns ``(x_t, eps)``."""
    x0 = np.asarray(x0, dtype=np.float64)
    a, s = schedule(np.broadcast_to(np.asarray(t, dtype=np.float64), x0.shape[:1]))
    eps = rng.standard_normal(x0.shape)
    shape = (-1,) + (1,) * (x0.ndim - 1)
    return a.reshape(shape) * x0 + s.reshape(shape) * eps, eps


@dataclass(frozen=True)
class TrainConfig:
    cond_drop_p: float = 0.1
    epochs: int = 500
    batch_size: int = 16
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    seed: int = 0
    checkpoint_every: int = 1
    lr_decay: str = "none"  # "cosine" anneals lr to zero over the epochs

    def __post_init__(self):
        if not 0.0 <= self.cond_drop_p <= 1.0:
            raise ValueError(f"cond_drop_p must lie in [0, 1], got {self.cond_drop_p}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.lr_decay not in ("none", "cosine"):
            raise ValueError(f"lr_decay must be 'none' or 'cosine', got {self.lr_decay!r}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during 0-based ``epoch``."""
        if self.lr_decay == "none" or self.epochs == 0:
            return self.lr
        return self.lr * 0.5 * (1.0 + np.cos(np.pi * epoch / self.epochs))


def training_step(batch, model, cfg: TrainConfig, rng: np.random.Generator) -> float:
    """One noise-prediction loss evaluation with gradients left in ``model.store.grads``.

    ``batch`` is ``(x0 [B, L], class_id [B], feature [B, frames])``. Each item
    draws its own ``t ~ U(0, 1)``; with probability ``cond_drop_p`` both of its
    conditions are replaced by the null conditions together.
    """
    x0, class_id, feature = batch
    x0 = np.asarray(x0, dtype=np.float64)
    bsz = x0.shape[0]
    t = rng.uniform(0.0, 1.0, bsz)
    drop = rng.uniform(0.0, 1.0, bsz) < cfg.cond_drop_p
    x_t, eps = noise(x0, t, rng)
    model.store.zero_grad()
    eps_hat = np.asarray(model.forward(x_t, t, class_id, feature, drop), dtype=np.float64)
    if eps_hat.shape != eps.shape:
        raise ShapeError(f"model returned {eps_hat.shape}, expected {eps.shape}")
    diff = eps_hat - eps
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss (t range {t.min():.3f}..{t.max():.3f}, |x_t| max {np.abs(x_t).max():.3g})")
    model.backward(2.0 * diff / diff.size)
    return loss


def cfg_combine(eps_cond, eps_uncond, w: float):
    eps_cond = np.asarray(eps_cond)
    eps_uncond = np.asarray(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise ShapeError(f"conditional {eps_cond.shape} vs unconditional {eps_uncond.shape} predictions")
    return eps_uncond + w * (eps_cond - eps_uncond)


@dataclass(frozen=True)
class SamplerConfig:
    """``noise="brownian"`` draws step noise as increments of one seeded Brownian
    path (power-of-two ``steps`` only), so runs with different step counts share
    a path and converge as ``steps`` grows; ``"iid"`` draws fresh normals."""

    steps: int = 50
    guidance: float = 2.0
    seed: int = 0
    noise: str = "iid"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.guidance < 0:
            raise ValueError(f"guidance weight must be >= 0, got {self.guidance}")
        if self.noise not in ("iid", "brownian"):
            raise ValueError(f"noise must be 'iid' or 'brownian', got {self.noise!r}")
        if self.noise == "brownian" and self.steps & (self.steps - 1):
            raise ValueError(f"brownian noise needs a power-of-two step count, got {self.steps}")


def brownian_increments(seed: int, steps: int, shape) -> np.ndarray:
    """Unit-variance increments of a Brownian path on ``steps`` (power of two) equal intervals.

    Built by midpoint (Levy) refinement with one RNG stream per level, so the
    path at dyadic times does not depend on how finely it is later refined.
    """
    levels = steps.bit_length() - 1
    w = np.zeros((2,) + tuple(shape))
    w[1] = random_source(np.random.SeedSequence([seed, 1, 0])).standard_normal(shape)
    for j in range(1, levels + 1):
        n = 2 ** j
        rng = random_source(np.random.SeedSequence([seed, 1, j]))
        mid = 0.5 * (w[:-1] + w[1:]) + np.sqrt(1.0 / (2 * n)) * rng.standard_normal((n // 2,) + tuple(shape))
        refined = np.empty((n + 1,) + tuple(shape))
        refined[0::2] = w
        refined[1::2] = mid
        w = refined
    return np.diff(w, axis=0) * np.sqrt(steps)


def sampler_coefficients(t: float, s: float):
    """Ancestral step ``t -> s``: returns ``(1/sqrt(a), beta/sigma_t, posterior std)``.

    ``a = alpha_bar(t) / alpha_bar(s)`` is floored at ``1 - MAX_BETA`` so the
    first step out of pure noise (``alpha_bar(1) = 0``) stays finite.
    """
    ab_t, ab_s = float(alpha_bar(t)), float(alpha_bar(s))
    a = max(ab_t / ab_s, 1.0 - MAX_BETA)
    beta = 1.0 - a
    sigma_t2 = 1.0 - ab_t
    post_var = beta * (1.0 - ab_s) / sigma_t2
    return 1.0 / np.sqrt(a), beta / np.sqrt(sigma_t2), np.sqrt(post_var)


def guided_noise(model, x, t, class_id, feature, w):
    bsz = x.shape[0]
    tb = np.full(bsz, t)
    if w == 0.0:
        return np.asarray(model.predict_noise(x, tb, None, None), dtype=np.float64)
    cond = np.asarray(model.predict_noise(x, tb, class_id, feature), dtype=np.float64)
    if w == 1.0:
        return cond
    uncond = np.asarray(model.predict_noise(x, tb, None, None), dtype=np.float64)
    return cfg_combine(cond, uncond, w)


def sample(model, class_id, feature, cfg: SamplerConfig, n: int | None = None, length: int | None = None,
           callback=None) -> np.ndarray:
    """Draw waveforms ``[B, length]`` by guided ancestral sampling from ``t = 1`` to ``0``.

    ``B`` comes from ``n`` or from the leading size of ``class_id``/``feature``.
    The result is not clamped; :func:`eventfoley.wavio.write_wav` clamps on write.
    """
    if n is None:
        if feature is not None:
            n = np.shape(feature)[0]
        elif class_id is not None:
            n = np.shape(class_id)[0]
        else:
            n = 1
    if length is None:
        length = model.cfg.sample_len
    shape = (n, length)
    x = random_source(np.random.SeedSequence([cfg.seed, 0])).standard_normal(shape)
    if cfg.noise == "brownian":
        incs = brownian_increments(cfg.seed, cfg.steps, shape)
        draw = lambda i: incs[i]  # noqa: E731
    else:
        rng = random_source(np.random.SeedSequence([cfg.seed, 2]))
        draw = lambda i: rng.standard_normal(shape)  # noqa: E731
    for i in range(cfg.steps, 0, -1):
        t, s = i / cfg.steps, (i - 1) / cfg.steps
        eps = guided_noise(model, x, t, class_id, feature, cfg.guidance)
        inv_sqrt_a, eps_coef, std = sampler_coefficients(t, s)
        x = inv_sqrt_a * (x - eps_coef * eps)
        z = draw(i - 1)
        if i > 1:
            x = x + std * z
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite sample at t={s:.4f}")
        if callback is not None:
            callback(s, x)
    return x
