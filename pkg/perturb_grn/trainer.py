# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""
Stochastic variational training.

Each epoch shuffles the training rows with a seed derived from
(config.seed, epoch), walks the mini-batches in order and takes one Adam
step per batch after global-norm gradient clipping. The mask temperature
is annealed linearly from ``temperature_start`` to ``temperature_end`` over
the first ``anneal_fraction`` of the epochs and then held.
"""

import copy
import io
import logging
import pickle
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .artifact_store import ArtifactStore
from .config import TrainConfig
from .dataset import GeneCatalog, PerturbDataset
from .errors import CheckpointError, ConfigError, TrainingDivergedError
from .model import Batch, ModelDims, ModelState, build_model
from .objective import LossBreakdown, compute_breakdown
from .pairing import compute_reference_dge, pair_artifact_references, pair_dataset

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
FINAL_CHECKPOINT = 'model.ckpt'
BEST_CHECKPOINT = 'best.ckpt'
DIVERGED_CHECKPOINT = 'last_finite.ckpt'


@dataclass
class TrainHistory:
    """Per-step loss records, per-epoch summaries and the best validation epoch."""

    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self) -> int:
        return len(self.epochs)


@dataclass(frozen=True, eq=False)
class TrainingData:
    """A split together with its reference DGE and artifact references."""

    dataset: PerturbDataset
    delta: np.ndarray
    excluded: np.ndarray
    references: np.ndarray

    def batch(self, rows=None) -> Batch:
        return Batch.from_dataset(
            self.dataset,
            rows,
            delta=self.delta,
            excluded=self.excluded,
            references=self.references,
        )


def prepare_training_data(dataset: PerturbDataset) -> TrainingData:
    """Pairs the split once; pairing is fixed for the whole run."""
    dge = compute_reference_dge(dataset, pair_dataset(dataset))
    references = pair_artifact_references(dataset)
    return TrainingData(dataset, dge.delta, dge.excluded, references)


def temperature_at(epoch: int, config: TrainConfig) -> float:
    anneal_epochs = config.anneal_fraction * config.epochs
    if anneal_epochs <= 0:
        return config.temperature_end
    progress = min(1.0, epoch / anneal_epochs)
    return config.temperature_start + progress * (
        config.temperature_end - config.temperature_start
    )


def clip_gradients(grads, max_norm: float) -> list[torch.Tensor]:
    """Scales every gradient by max_norm / g when the global L2 norm g exceeds max_norm."""
    if max_norm <= 0:
        raise ValueError(f'max_norm must be positive, got {max_norm}')
    grads = [torch.as_tensor(g) for g in grads]
    if not grads:
        return []
    total = torch.sqrt(sum((g.detach() ** 2).sum() for g in grads))
    if float(total) <= max_norm:
        return list(grads)
    factor = max_norm / total
    return [g * factor for g in grads]


def _seed_for(*keys: int) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def batch_loss(
    model: ModelState,
    batch: Batch,
    config: TrainConfig,
    *,
    temperature: float,
    seed: int,
    n_total: int,
    mode: str = 'relaxed',
) -> LossBreakdown:
    fp = model(batch, temperature=temperature, seed=seed, mode=mode)
    return compute_breakdown(batch, fp, config, n_total=n_total)


def validation_elbo(
    model: ModelState, data: TrainingData, config: TrainConfig
) -> float:
    """ELBO per datum on a held-out split with hard masks and a fixed seed."""
    with torch.no_grad():
        breakdown = batch_loss(
            model,
            data.batch(),
            config,
            temperature=config.temperature_end,
            seed=_seed_for(config.seed, 1),
            n_total=data.dataset.n_cells,
            mode='hard',
        )
    return float(breakdown.j_rec)


def _snapshot(model: ModelState) -> dict:
    return copy.deepcopy(model.state_dict())


def _diverged(
    model: ModelState,
    config: TrainConfig,
    store: ArtifactStore | None,
    step: int,
    reason: str,
) -> TrainingDivergedError:
    """Saves the parameters from before the failing step and builds the error."""
    state = _snapshot(model)
    if store is not None:
        store.write_bytes(DIVERGED_CHECKPOINT, checkpoint_bytes(model, config))
    logger.error(f'Training diverged: {reason}')
    return TrainingDivergedError(
        f'{reason}; last finite parameters kept', state=state, step=step
    )


def _mean_records(records: list[dict]) -> dict:
    keys = [k for k in records[0] if k != 'step']
    return {k: float(np.mean([r[k] for r in records])) for k in keys}


def train(
    train_data: PerturbDataset,
    val_data: PerturbDataset | None,
    config: TrainConfig,
    *,
    store: ArtifactStore | None = None,
) -> tuple[ModelState, TrainHistory]:
    """
    Trains a model on ``train_data``; validation ELBO selects ``best.ckpt``.

    Without a validation split the training ELBO is used. Returns the final
    model. With a ``store``, best and final checkpoints plus the histories
    are written to it.
    """
    if train_data.n_cells == 0:
        raise ConfigError('the training split is empty')

    prepared = prepare_training_data(train_data)
    held_out = (
        prepare_training_data(val_data)
        if val_data is not None and val_data.n_cells > 0
        else prepared
    )
    library = float(np.mean(train_data.library_size))
    model = build_model(config, train_data.catalog, library)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    history = TrainHistory()
    n_total = train_data.n_cells
    best_elbo = -np.inf
    step = 0

    logger.info(
        f'Training on {n_total} rows for {config.epochs} epochs '
        f'(batch {config.batch_size}, ablation {config.ablation})'
    )
    for epoch in range(config.epochs):
        started = time.perf_counter()
        temperature = temperature_at(epoch, config)
        order = np.random.default_rng(_seed_for(config.seed, 0, epoch)).permutation(
            n_total
        )
        records = []
        for start in range(0, n_total, config.batch_size):
            batch = prepared.batch(order[start : start + config.batch_size])
            breakdown = batch_loss(
                model,
                batch,
                config,
                temperature=temperature,
                seed=_seed_for(config.seed, 2, step),
                n_total=n_total,
            )
            if not torch.isfinite(breakdown.total):
                raise _diverged(
                    model,
                    config,
                    store,
                    step,
                    f'total loss is {float(breakdown.total)} at step {step} (epoch {epoch})',
                )

            optimizer.zero_grad()
            breakdown.total.backward()
            params = [p for p in model.parameters() if p.grad is not None]
            clipped = clip_gradients([p.grad for p in params], config.clip_norm)
            if not all(bool(torch.isfinite(g).all()) for g in clipped):
                raise _diverged(
                    model,
                    config,
                    store,
                    step,
                    f'gradient is not finite at step {step} (epoch {epoch})',
                )
            for p, g in zip(params, clipped):
                p.grad = g
            optimizer.step()
            records.append(breakdown.as_record(step))
            step += 1

        val_elbo = validation_elbo(model, held_out, config)
        summary = {'epoch': epoch, 'temperature': temperature, **_mean_records(records)}
        summary['val_elbo'] = val_elbo
        history.steps.extend(records)
        history.epochs.append(summary)
        history.wall_clock.append(time.perf_counter() - started)

        if val_elbo > best_elbo:
            best_elbo = val_elbo
            history.best_epoch = epoch
            if store is not None:
                store.write_bytes(BEST_CHECKPOINT, checkpoint_bytes(model, config))
        logger.info(
            f'Epoch {epoch + 1}/{config.epochs}: total {summary["total"]:.4f}, '
            f'val ELBO {val_elbo:.4f}, T={temperature:.3f} '
            f'({history.wall_clock[-1]:.2f}s)'
        )

    if store is not None:
        store.write_bytes(FINAL_CHECKPOINT, checkpoint_bytes(model, config))
        if history.best_epoch is None:
            store.write_bytes(BEST_CHECKPOINT, checkpoint_bytes(model, config))
        store.write_json_lines('history.jsonl', history.steps)
        store.write_json_lines('epochs.jsonl', history.epochs)
    return model, history


def checkpoint_bytes(model: ModelState, config: TrainConfig) -> bytes:
    catalog = model.catalog
    payload = {
        'format_version': CHECKPOINT_VERSION,
        'config_hash': config.config_hash(),
        'config': config.to_dict(),
        'dims': model.dims.to_dict(),
        'catalog': {
            'names': list(catalog.names),
            'perturbed_idx': list(catalog.perturbed_idx),
            'extended_idx': list(catalog.extended_idx),
        },
        'state_dict': model.state_dict(),
    }
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    return buffer.getvalue()


def save_checkpoint(path: Path, model: ModelState, config: TrainConfig):
    Path(path).write_bytes(checkpoint_bytes(model, config))
    logger.info(f'💾 Saved checkpoint to {path}')


def load_checkpoint(
    path: Path, config: TrainConfig | None = None
) -> tuple[ModelState, TrainConfig]:
    """
    Loads a checkpoint written by ``save_checkpoint``.

    When ``config`` is given its hash must match the stored one; the error
    says whether the model layout or only the training settings differ.
    """
    data = Path(path).read_bytes()
    try:
        payload = torch.load(io.BytesIO(data), weights_only=True)
    except (RuntimeError, EOFError, pickle.UnpicklingError, ValueError) as e:
        raise CheckpointError(f'{path} is not a readable checkpoint: {e}') from e
    if not isinstance(payload, dict) or 'format_version' not in payload:
        raise CheckpointError(f'{path} is not a checkpoint')
    if payload['format_version'] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f'{path} has format version {payload["format_version"]}, '
            f'expected {CHECKPOINT_VERSION}'
        )
    try:
        stored = TrainConfig.from_dict(payload['config'])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f'{path} is corrupt: {e}') from e
    if config is not None and config.config_hash() != payload['config_hash']:
        differs = (
            'model layout'
            if config.model_hash() != stored.model_hash()
            else 'training settings'
        )
        raise CheckpointError(
            f'config hash mismatch for {path}: the checkpoint was trained with '
            f'a different configuration ({differs} differ)'
        )

    try:
        catalog = GeneCatalog(**payload['catalog'])
        model = ModelState(ModelDims(**payload['dims']), catalog)
        model.load_state_dict(payload['state_dict'])
    except (KeyError, TypeError, RuntimeError) as e:
        raise CheckpointError(f'{path} is corrupt: {e}') from e
    return model, config if config is not None else stored
