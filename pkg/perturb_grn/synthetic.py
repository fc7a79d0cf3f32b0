# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""
Synthetic Perturb-Seq-like data with a known regulatory graph.

Control cells draw counts from a Gamma-Poisson model around per-gene base
fractions scaled by a per-cell library size. Knocking down gene i scales
its mean by ``1 - knockdown_strength``; the log-fold change then travels
along every directed walk of the acyclic graph, attenuated per hop, so
gene j moves by ``log(1 - s) * [(I - a W)^-1]_ij`` on the log scale.
Cells flagged as artifacts get one extra gene-wise multiplicative
distortion shared by all flagged cells.
"""

import logging

import numpy as np

from .config import SimulationConfig
from .dataset import GeneCatalog, GroundTruthGrn, PerturbDataset
from .errors import ConfigError

logger = logging.getLogger(__name__)

MAX_ABS_LOG_FOLD = 5.0
WEIGHT_RANGE = (0.5, 1.0)


def _gene_names(config: SimulationConfig) -> list[str]:
    return (
        [f'P{i:03d}' for i in range(config.n_perturbed)]
        + [f'E{i:03d}' for i in range(config.n_extended)]
        + [f'M{i:03d}' for i in range(config.n_measured)]
    )


def random_dag(
    n_nodes: int, edge_density: float, rng: np.random.Generator
) -> np.ndarray:
    """
    Draws a weighted acyclic adjacency matrix.

    Exactly ``round(density * n(n-1)/2)`` edges are placed, each pointing
    forward in a random topological order, with weights of random sign and
    magnitude in WEIGHT_RANGE.
    """
    n_pairs = n_nodes * (n_nodes - 1) // 2
    n_edges = int(round(edge_density * n_pairs))
    if n_edges == 0:
        raise ConfigError(
            f'edge_density {edge_density} yields zero edges over {n_nodes} genes'
        )

    order = rng.permutation(n_nodes)
    upper = np.array(
        [(order[a], order[b]) for a in range(n_nodes) for b in range(a + 1, n_nodes)]
    )
    chosen = upper[rng.choice(n_pairs, size=n_edges, replace=False)]
    magnitudes = rng.uniform(*WEIGHT_RANGE, size=n_edges)
    signs = rng.choice([-1.0, 1.0], size=n_edges)

    adjacency = np.zeros((n_nodes, n_nodes))
    adjacency[chosen[:, 0], chosen[:, 1]] = magnitudes * signs
    return adjacency


def total_effects(adjacency: np.ndarray, attenuation: float) -> np.ndarray:
    """(I - a W)^-1: the attenuated sum over all directed walks (W nilpotent)."""
    n = adjacency.shape[0]
    return np.linalg.inv(np.eye(n) - attenuation * adjacency)


def synthesize_dataset(
    config: SimulationConfig,
) -> tuple[PerturbDataset, GroundTruthGrn]:
    """Generates a dataset and its ground-truth graph; deterministic per seed."""
    rng = np.random.default_rng(config.seed)
    n_mod = config.n_perturbed + config.n_extended
    n_genes = n_mod + config.n_measured

    catalog = GeneCatalog(
        names=tuple(_gene_names(config)),
        perturbed_idx=tuple(range(config.n_perturbed)),
        extended_idx=tuple(range(config.n_perturbed, n_mod)),
    )
    adjacency = random_dag(n_mod, config.edge_density, rng)
    effects = total_effects(adjacency, config.effect_attenuation)

    n_control = max(1, int(round(config.control_fraction * config.n_cells)))
    n_treated = config.n_cells - n_control
    if n_treated < config.n_perturbed:
        raise ConfigError(
            f'{n_treated} treated cells cannot cover {config.n_perturbed} '
            f'perturbed genes; lower control_fraction'
        )
    treatment = np.concatenate(
        [np.full(n_control, -1), np.arange(n_treated) % config.n_perturbed]
    )
    treatment = treatment[rng.permutation(config.n_cells)]

    P = np.zeros((config.n_cells, n_mod))
    treated = treatment >= 0
    P[np.flatnonzero(treated), treatment[treated]] = 1.0

    # Log-fold change per cell over all measured genes
    delta = np.log1p(-config.knockdown_strength)
    log_fold = np.zeros((config.n_cells, n_genes))
    log_fold[treated, :n_mod] = delta * effects[treatment[treated]]
    np.clip(log_fold, -MAX_ABS_LOG_FOLD, MAX_ABS_LOG_FOLD, out=log_fold)

    base = rng.lognormal(0.0, 1.0, size=n_genes)
    base /= base.sum()
    library = config.library_size * rng.lognormal(0.0, 0.2, size=config.n_cells)
    A = (rng.random(config.n_cells) < config.artifact_rate).astype(np.int64)
    distortion = rng.lognormal(0.0, 0.5, size=n_genes)

    mean = library[:, None] * base[None, :] * np.exp(log_fold)
    mean = np.where(A[:, None] == 1, mean * distortion[None, :], mean)

    # Gamma-Poisson: shape = dispersion, mean preserved
    rate = rng.gamma(shape=config.dispersion, scale=mean / config.dispersion)
    X = rng.poisson(rate).astype(np.int64)

    dataset = PerturbDataset(X=X, P=P, A=A, catalog=catalog)
    truth = GroundTruthGrn(adjacency)
    logger.info(
        f'Synthesized {config.n_cells} cells over {n_genes} genes '
        f'({len(truth.edge_set)} true edges, {int(A.sum())} artifact cells)'
    )
    return dataset, truth
