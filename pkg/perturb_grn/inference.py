# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""
Generative sampling from a trained model.

Particles are generated artifact-free: Z_b ~ N(0, I), a hard mask row and
an effect row for the treated gene give Z_p, Z_a is zero, and counts are
drawn in two stages (Gamma rate, then Poisson). Control and treated
generation consume identical random streams for a given seed, so their
difference isolates the treatment.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch

from .dataset import PerturbDataset
from .diffcore import DTYPE
from .errors import EvaluationError, StateError, ValidationError
from .model import ModelState, decode_nb_params, sample_mask

logger = logging.getLogger(__name__)

DEFAULT_PARTICLES = 2500


@dataclass(frozen=True, eq=False)
class GeneratedBatch:
    counts: np.ndarray
    rate: np.ndarray
    Z_p: np.ndarray
    Z_a: np.ndarray
    Z_b: np.ndarray


@dataclass(frozen=True, eq=False)
class AtePrediction:
    """Predicted mean log1p differential expression over all genes."""

    treatment: str | None
    ate: np.ndarray
    stderr: np.ndarray
    particles: int

    def __post_init__(self):
        if self.particles < 1:
            raise ValidationError('particles must be >= 1')
        if not np.isfinite(self.ate).all():
            raise StateError(f'non-finite ATE for treatment {self.treatment!r}')


def _treatment_row(model: ModelState, treatment) -> int | None:
    if treatment is None:
        return None
    if isinstance(treatment, str):
        return model.catalog.modeled_index(treatment)
    row = int(treatment)
    if not 0 <= row < model.dims.n_modeled:
        raise ValidationError(f'treatment index {row} out of range')
    return row


def generate(
    model: ModelState, treatment=None, n_particles: int = DEFAULT_PARTICLES, seed: int = 0
) -> GeneratedBatch:
    """
    Draws ``n_particles`` artifact-free count profiles.

    ``treatment`` is a modeled gene name or index; None generates controls.
    """
    if n_particles < 1:
        raise ValidationError('n_particles must be >= 1')
    if not model.is_finite():
        raise StateError('model parameters contain NaN or infinite values')
    row = _treatment_row(model, treatment)
    dims = model.dims
    gen = torch.Generator().manual_seed(int(seed))

    with torch.no_grad():
        # Mask and effect rows are drawn for controls too so both streams align
        logits = model.causal.logits[0 if row is None else row]
        M = sample_mask(logits.expand(n_particles, dims.n_modeled), mode='hard', seed=gen)
        mean, scale = model.effect_net(M)
        E = mean + scale * torch.randn(mean.shape, generator=gen, dtype=DTYPE)
        Z_p = E * M if row is not None else torch.zeros_like(E)
        Z_b = torch.randn((n_particles, dims.latent_dim), generator=gen, dtype=DTYPE)
        Z_a = torch.zeros((n_particles, dims.latent_dim), dtype=DTYPE)
        L = model.reference_library_size.expand(n_particles)
        rate, dispersion = decode_nb_params(
            model.decoder, Z_b, Z_p, Z_a, L, model.dispersion()
        )

    rate = rate.numpy()
    dispersion = dispersion.numpy()
    rng = np.random.default_rng(seed)
    lam = rng.gamma(shape=dispersion, scale=rate / dispersion)
    counts = rng.poisson(lam)
    return GeneratedBatch(
        counts=counts,
        rate=rate,
        Z_p=Z_p.numpy(),
        Z_a=Z_a.numpy(),
        Z_b=Z_b.numpy(),
    )


def estimate_ate(
    model: ModelState, treatment, n_particles: int = DEFAULT_PARTICLES, seed: int = 0
) -> AtePrediction:
    """Mean log1p(treated) - mean log1p(control) under shared seeds."""
    row = _treatment_row(model, treatment)
    control = np.log1p(generate(model, None, n_particles, seed).counts)
    if row is None:
        treated = control
    else:
        treated = np.log1p(generate(model, row, n_particles, seed).counts)
    diff = treated - control
    stderr = (
        diff.std(axis=0, ddof=1) / np.sqrt(n_particles)
        if n_particles > 1
        else np.zeros(diff.shape[1])
    )
    name = None if row is None else model.catalog.modeled_names[row]
    return AtePrediction(
        treatment=name, ate=diff.mean(axis=0), stderr=stderr, particles=n_particles
    )


def observed_de(dataset: PerturbDataset, gene: str) -> np.ndarray:
    """Mean log1p(treated) - mean log1p(control) over all genes."""
    treated = dataset.rows_for(gene)
    controls = dataset.control_rows()
    if len(treated) == 0:
        raise EvaluationError(f'no rows treated with {gene!r} in this split')
    if len(controls) == 0:
        raise EvaluationError('no control rows in this split')
    logged = np.log1p(dataset.X.astype(np.float64))
    return logged[treated].mean(axis=0) - logged[controls].mean(axis=0)


def predict_unseen(
    model: ModelState,
    gene: str,
    test_split: PerturbDataset,
    n_particles: int = DEFAULT_PARTICLES,
    seed: int = 0,
) -> tuple[AtePrediction, pd.DataFrame]:
    """
    Predicts the response to ``gene`` and pairs it with the observed one.

    Returns the prediction and a table with columns gene, predicted_de,
    observed_de (one row per measured gene).
    """
    model.catalog.modeled_index(gene)
    observed = observed_de(test_split, gene)
    prediction = estimate_ate(model, gene, n_particles, seed)
    table = pd.DataFrame(
        {
            'gene': list(model.catalog.names),
            'predicted_de': prediction.ate,
            'observed_de': observed,
        }
    )
    logger.info(
        f'Predicted {gene} over {len(table)} genes '
        f'({len(test_split.rows_for(gene))} observed rows)'
    )
    return prediction, table
