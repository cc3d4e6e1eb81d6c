"""Minibatch window sampling, masked RMSE loss, AdaDelta, and the epoch loop.

Training draws (site, start-index) windows uniformly with replacement,
scores them with RMSE over observed target positions only, and updates
parameters with Zeiler's AdaDelta after a global-norm gradient clip.
One epoch is the number of iterations expected to cover the training
tensor once: ceil(n_sites * T / (batch_size * window_len)).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from synbench.data import Dataset
from synbench.lstm import (
    ModelParams,
    NetworkDims,
    NumericError,
    backward,
    forward,
    init_params,
)


class TrainError(ValueError):
    """Invalid training configuration or unusable training data."""


@dataclass(frozen=True)
class TrainConfig:
    window_len: int = 30
    batch_size: int = 100
    epochs: int = 100
    rho: float = 0.95
    epsilon: float = 1e-6
    clip_norm: float = 5.0
    dropout: float = 0.0
    warmup_steps: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.window_len < 1 or self.batch_size < 1 or self.epochs < 1:
            raise TrainError("window_len, batch_size, and epochs must be >= 1")
        if not 0.0 < self.rho < 1.0:
            raise TrainError(f"rho must lie in (0, 1), got {self.rho}")
        if self.epsilon <= 0:
            raise TrainError(f"epsilon must be > 0, got {self.epsilon}")
        if self.clip_norm <= 0:
            raise TrainError(f"clip_norm must be > 0, got {self.clip_norm}")
        if not 0.0 <= self.dropout < 1.0:
            raise TrainError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not 0 <= self.warmup_steps < self.window_len:
            raise TrainError("warmup_steps must lie in [0, window_len)")


@dataclass
class AdaDeltaState:
    """Running averages of squared gradients and squared updates."""

    sq_grad: ModelParams
    sq_update: ModelParams

    @classmethod
    def zeros(cls, dims: NetworkDims) -> "AdaDeltaState":
        return cls(ModelParams.zeros(dims), ModelParams.zeros(dims))


def sample_minibatch(
    ds: Dataset,
    window_len: int,
    batch_size: int,
    rng: np.random.Generator,
    warmup_steps: int = 0,
    max_retries: int = 20,
) -> tuple[list[tuple[int, int]], int]:
    """Draw (site index, start index) pairs uniformly with replacement.

    Windows whose post-warmup target is entirely missing are redrawn up
    to max_retries times, then accepted; the count of such accepted
    windows is returned alongside the batch.
    """
    n_days = ds.n_days
    if n_days < window_len:
        raise TrainError(f"time axis ({n_days} days) shorter than window ({window_len})")
    if ds.n_sites == 0:
        raise TrainError("cannot sample from an empty dataset")
    targets = ds.target_matrix()
    windows: list[tuple[int, int]] = []
    accepted_empty = 0
    for _ in range(batch_size):
        for attempt in range(max_retries + 1):
            site = int(rng.integers(0, ds.n_sites))
            start = int(rng.integers(0, n_days - window_len + 1))
            segment = targets[site, start + warmup_steps : start + window_len]
            if np.isfinite(segment).any():
                break
        else:
            accepted_empty += 1
        windows.append((site, start))
    return windows, accepted_empty


def assemble_batch(
    forcing: np.ndarray,
    attrs: np.ndarray,
    targets: np.ndarray,
    windows: Sequence[tuple[int, int]],
    window_len: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Gather (B, L, F+A) inputs and (B, L) targets for the sampled windows.

    Static attributes are broadcast to every timestep and concatenated
    after the forcing features.
    """
    sites = np.array([w[0] for w in windows], dtype=np.intp)
    starts = np.array([w[1] for w in windows], dtype=np.intp)
    steps = starts[:, None] + np.arange(window_len)[None, :]
    x_forcing = forcing[sites[:, None], steps, :]
    x_attrs = np.broadcast_to(
        attrs[sites][:, None, :], (len(windows), window_len, attrs.shape[1])
    )
    x = np.concatenate([x_forcing, x_attrs], axis=2)
    y = targets[sites[:, None], steps]
    return x, y


def masked_rmse_loss(yhat: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """RMSE over observed positions and its gradient w.r.t. yhat.

    loss = sqrt(sum over observed (yhat - y)^2 / n_obs);
    d loss / d yhat = (yhat - y) / (n_obs * loss) at observed positions,
    zero elsewhere and zero everywhere when the loss is exactly zero.
    """
    if yhat.shape != y.shape:
        raise TrainError(f"prediction shape {yhat.shape} != target shape {y.shape}")
    mask = np.isfinite(y)
    n_obs = int(mask.sum())
    if n_obs == 0:
        raise TrainError("batch has no observed target values")
    err = np.where(mask, yhat - y, 0.0)
    loss = math.sqrt(float((err * err).sum()) / n_obs)
    if loss == 0.0:
        return 0.0, np.zeros_like(yhat)
    return loss, err / (n_obs * loss)


def adadelta_step(
    params: ModelParams,
    grads: ModelParams,
    state: AdaDeltaState,
    rho: float,
    epsilon: float,
) -> tuple[ModelParams, AdaDeltaState]:
    """One AdaDelta update (Zeiler's formulation), returning new values.

    Per entry: E[g2] <- rho E[g2] + (1-rho) g2;
    delta = -sqrt(E[dx2] + eps) / sqrt(E[g2] + eps) * g;
    E[dx2] <- rho E[dx2] + (1-rho) delta2; param <- param + delta.
    """
    new_params: dict[str, np.ndarray] = {}
    new_sq_grad: dict[str, np.ndarray] = {}
    new_sq_update: dict[str, np.ndarray] = {}
    for (name, p), (_, g), (_, eg), (_, ex) in zip(
        params.arrays(), grads.arrays(), state.sq_grad.arrays(), state.sq_update.arrays()
    ):
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in {name}")
        eg2 = rho * eg + (1.0 - rho) * g * g
        delta = -np.sqrt(ex + epsilon) / np.sqrt(eg2 + epsilon) * g
        ex2 = rho * ex + (1.0 - rho) * delta * delta
        new_params[name] = p + delta
        new_sq_grad[name] = eg2
        new_sq_update[name] = ex2
    return (
        ModelParams(**new_params),
        AdaDeltaState(ModelParams(**new_sq_grad), ModelParams(**new_sq_update)),
    )


def clip_global_norm(grads: ModelParams, threshold: float) -> tuple[ModelParams, float, bool]:
    """Scale all gradients so their joint L2 norm is at most threshold."""
    total = 0.0
    for _, g in grads.arrays():
        total += float((g * g).sum())
    norm = math.sqrt(total)
    if norm <= threshold or norm == 0.0:
        return grads, norm, False
    scale = threshold / norm
    scaled = ModelParams(**{name: g * scale for name, g in grads.arrays()})
    return scaled, norm, True


@dataclass
class TrainLog:
    """Per-epoch mean loss and clip counts, plus sampler warnings."""

    epochs: list[tuple[int, float, int]] = field(default_factory=list)
    empty_windows_accepted: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss", "clip_events"])
        for epoch, mean_loss, clip_events in self.epochs:
            writer.writerow([epoch, repr(mean_loss), clip_events])
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @property
    def final_loss(self) -> float:
        return self.epochs[-1][1]


def iterations_per_epoch(n_sites: int, n_days: int, cfg: TrainConfig) -> int:
    return max(1, math.ceil((n_sites * n_days) / (cfg.batch_size * cfg.window_len)))


def train(
    ds: Dataset, dims: NetworkDims, cfg: TrainConfig
) -> tuple[ModelParams, TrainLog]:
    """Train on an (already normalized) dataset; deterministic given cfg.seed.

    Numeric failures are re-raised with the offending iteration index.
    """
    expected_d = len(ds.feature_names) + len(ds.attr_names)
    if dims.input_size != expected_d:
        raise TrainError(
            f"network input size {dims.input_size} != F+A = {expected_d}"
        )
    rng = np.random.default_rng(cfg.seed)
    params = init_params(dims, rng)
    state = AdaDeltaState.zeros(dims)
    forcing = ds.forcing_tensor()
    attrs = ds.attr_matrix()
    targets = ds.target_matrix()

    n_iters = iterations_per_epoch(ds.n_sites, ds.n_days, cfg)
    log = TrainLog()
    for epoch in range(1, cfg.epochs + 1):
        losses = np.empty(n_iters)
        clip_events = 0
        for it in range(n_iters):
            try:
                windows, n_empty = sample_minibatch(
                    ds, cfg.window_len, cfg.batch_size, rng, cfg.warmup_steps
                )
                log.empty_windows_accepted += n_empty
                x, y = assemble_batch(forcing, attrs, targets, windows, cfg.window_len)
                if cfg.warmup_steps:
                    y = y.copy()
                    y[:, : cfg.warmup_steps] = np.nan
                yhat, cache = forward(params, x, dropout=cfg.dropout, rng=rng)
                loss, dl_dy = masked_rmse_loss(yhat, y)
                grads = backward(params, cache, dl_dy)
                grads, _, clipped = clip_global_norm(grads, cfg.clip_norm)
                clip_events += int(clipped)
                params, state = adadelta_step(params, grads, state, cfg.rho, cfg.epsilon)
            except NumericError as exc:
                raise NumericError(
                    f"epoch {epoch} iteration {it + 1}: {exc}"
                ) from exc
            losses[it] = loss
        log.epochs.append((epoch, float(losses.mean()), clip_events))
    return params, log
