"""Adam optimisation and the epoch loop, with exact resume from checkpoints."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import TrainConfig, training_step
from .nn.params import ParamStore, decode_arrays, encode_arrays, random_source

log = logging.getLogger(__name__)


class Adam:
    def __init__(self, store: ParamStore, lr=2e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in store.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in store.params.items()}

    def step(self, clip_norm: float | None = None) -> float:
        """Apply one update from the store's gradients; returns the pre-clip gradient norm."""
        grads = self.store.grads
        norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
        scale = 1.0
        if clip_norm and norm > clip_norm:
            scale = clip_norm / norm
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.step_count
        corr2 = 1.0 - b2 ** self.step_count
        for name, p in self.store.params.items():
            g = grads[name] * scale
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr / corr1) * m / (np.sqrt(v / corr2) + self.eps)
        return norm

    def state(self) -> dict[str, np.ndarray]:
        out = {f"adam.m/{k}": v for k, v in self.m.items()}
        out.update({f"adam.v/{k}": v for k, v in self.v.items()})
        out["adam.step"] = np.array([self.step_count], dtype=np.float32)
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k in self.m:
            self.m[k][...] = state[f"adam.m/{k}"]
            self.v[k][...] = state[f"adam.v/{k}"]
        self.step_count = int(state["adam.step"][0])


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Independent stream per epoch, so training can resume at any epoch boundary."""
    return random_source(np.random.SeedSequence([seed, 7, epoch]))


def save_training_state(path, model, opt: Adam, epoch: int) -> None:
    arrays = dict(model.store.params)
    arrays.update(opt.state())
    arrays["epoch"] = np.array([epoch], dtype=np.float32)
    Path(path).write_bytes(encode_arrays(arrays))


def load_training_state(path, model, opt: Adam | None = None) -> int:
    """Restore parameters (and optimizer moments if ``opt`` given); returns completed epochs."""
    arrays = decode_arrays(Path(path).read_bytes())
    model.store.load_state({k: v for k, v in arrays.items() if k in model.store.params})
    if opt is not None:
        opt.load_state(arrays)
    return int(arrays["epoch"][0])


@dataclass
class FitResult:
    losses: list[float] = field(default_factory=list)
    epochs_done: int = 0
    seconds: float = 0.0


def fit(model, make_batches, cfg: TrainConfig, checkpoint: str | Path | None = None, resume: bool = False,
        max_seconds: float | None = None, on_epoch=None) -> FitResult:
    """Train ``model`` for ``cfg.epochs`` epochs.

    ``make_batches(rng)`` yields ``(x0, class_id, feature)`` tuples for one
    epoch. Each epoch uses :func:`epoch_rng` for shuffling, time draws,
    condition dropping and noise. With ``checkpoint`` set, the full training
    state is written every ``cfg.checkpoint_every`` epochs; ``resume`` restarts
    from it. A non-finite loss aborts, leaving the last good checkpoint.
    ``max_seconds`` stops early after the epoch that crosses the budget.
    """
    opt = Adam(model.store, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    start = 0
    if resume and checkpoint is not None and Path(checkpoint).exists():
        start = load_training_state(checkpoint, model, opt)
        log.info("resumed from %s at epoch %d", checkpoint, start)
    result = FitResult(epochs_done=start)
    t0 = time.perf_counter()
    for epoch in range(start, cfg.epochs):
        rng = epoch_rng(cfg.seed, epoch)
        opt.lr = cfg.lr_at(epoch)
        total, count = 0.0, 0
        for batch in make_batches(rng):
            loss = training_step(batch, model, cfg, rng)
            opt.step(cfg.grad_clip)
            total += loss * len(batch[0])
            count += len(batch[0])
        mean = total / max(count, 1)
        result.losses.append(mean)
        result.epochs_done = epoch + 1
        log.info("epoch %d loss %.5f", epoch + 1, mean)
        if on_epoch is not None:
            on_epoch(epoch + 1, mean)
        if checkpoint is not None and ((epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs):
            save_training_state(checkpoint, model, opt, epoch + 1)
        if max_seconds is not None and time.perf_counter() - t0 > max_seconds:
            break
    result.seconds = time.perf_counter() - t0
    return result
