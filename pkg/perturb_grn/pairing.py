# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""Optimal-transport pairing and reference differential expression."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .dataset import PerturbDataset
from .errors import PairingError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairingPlan:
    """Perturbed-to-control row pairs (dataset row indices)."""

    pairs: tuple[tuple[int, int], ...]
    unmatched_controls: tuple[int, ...] = ()
    unmatched_perturbed: tuple[int, ...] = ()
    total_cost: float = 0.0

    def as_dict(self) -> dict[int, int]:
        return dict(self.pairs)


@dataclass(frozen=True, eq=False)
class ReferenceDge:
    """Row-max-scaled |log2 fold change| over G° ∪ G+, with exclusion flags."""

    delta: np.ndarray
    excluded: np.ndarray


def ot_cost(perturbed_rows: np.ndarray, control_rows: np.ndarray) -> np.ndarray:
    """Squared Euclidean ground cost on log1p counts."""
    return cdist(
        np.log1p(np.asarray(perturbed_rows, dtype=np.float64)),
        np.log1p(np.asarray(control_rows, dtype=np.float64)),
        metric='sqeuclidean',
    )


def pair_optimal_transport(
    perturbed_rows: np.ndarray,
    control_rows: np.ndarray,
    perturbed_index=None,
    control_index=None,
) -> PairingPlan:
    """
    Minimum-cost one-to-one matching of perturbed rows to control rows.

    With more controls than perturbed rows every perturbed row is matched
    and the surplus controls are reported unmatched; with fewer, the
    leftover perturbed rows are reported unmatched. ``*_index`` map local
    positions to dataset row indices (identity by default).
    """
    perturbed_rows = np.atleast_2d(perturbed_rows)
    control_rows = np.atleast_2d(control_rows)
    if control_rows.shape[0] == 0 or control_rows.size == 0:
        raise PairingError('cannot pair against an empty control set')
    if perturbed_rows.shape[0] == 0 or perturbed_rows.size == 0:
        raise PairingError('cannot pair an empty perturbed set')
    if perturbed_rows.shape[1] != control_rows.shape[1]:
        raise PairingError(
            f'gene counts differ: {perturbed_rows.shape[1]} vs {control_rows.shape[1]}'
        )

    p_index = (
        np.arange(perturbed_rows.shape[0])
        if perturbed_index is None
        else np.asarray(perturbed_index)
    )
    c_index = (
        np.arange(control_rows.shape[0])
        if control_index is None
        else np.asarray(control_index)
    )

    cost = ot_cost(perturbed_rows, control_rows)
    row_ind, col_ind = linear_sum_assignment(cost)
    pairs = tuple(
        (int(p_index[r]), int(c_index[c])) for r, c in zip(row_ind, col_ind)
    )
    used_controls = set(col_ind.tolist())
    used_perturbed = set(row_ind.tolist())
    return PairingPlan(
        pairs=pairs,
        unmatched_controls=tuple(
            int(c_index[c]) for c in range(len(c_index)) if c not in used_controls
        ),
        unmatched_perturbed=tuple(
            int(p_index[r]) for r in range(len(p_index)) if r not in used_perturbed
        ),
        total_cost=float(cost[row_ind, col_ind].sum()),
    )


def pair_dataset(dataset: PerturbDataset) -> PairingPlan:
    """
    Pairs every treatment group against the control pool.

    Controls can serve several treatment groups but at most one row within
    a group. Without controls every treated row stays unpaired.
    """
    controls = dataset.control_rows()
    counts = dataset.X
    treatment = dataset.treatment_index()
    treated_rows = np.flatnonzero(treatment >= 0)

    if len(controls) == 0:
        logger.warning('No control rows; every treated row is excluded from DGE')
        return PairingPlan(pairs=(), unmatched_perturbed=tuple(treated_rows.tolist()))

    pairs = []
    unmatched_perturbed = []
    used = set()
    total = 0.0
    for j in np.unique(treatment[treated_rows]):
        rows = np.flatnonzero(treatment == j)
        plan = pair_optimal_transport(
            counts[rows], counts[controls], perturbed_index=rows, control_index=controls
        )
        pairs.extend(plan.pairs)
        unmatched_perturbed.extend(plan.unmatched_perturbed)
        used.update(c for _, c in plan.pairs)
        total += plan.total_cost

    logger.info(
        f'Paired {len(pairs)} treated rows with controls '
        f'({len(unmatched_perturbed)} unpaired)'
    )
    return PairingPlan(
        pairs=tuple(sorted(pairs)),
        unmatched_controls=tuple(int(c) for c in controls if c not in used),
        unmatched_perturbed=tuple(sorted(unmatched_perturbed)),
        total_cost=total,
    )


def compute_reference_dge(dataset: PerturbDataset, plan: PairingPlan) -> ReferenceDge:
    """
    Builds the reference differential expression for the graph prior objective.

    Paired row n gets |log2((x_p + 1) / (x_c + 1))| over G° ∪ G+, divided
    by its row maximum (all-zero rows stay zero). Controls and unpaired
    rows are zero vectors flagged as excluded.
    """
    counts = dataset.modeled_counts().astype(np.float64)
    delta = np.zeros_like(counts)
    excluded = np.ones(dataset.n_cells, dtype=bool)

    for p, c in plan.pairs:
        fold = np.abs(np.log2((counts[p] + 1.0) / (counts[c] + 1.0)))
        peak = fold.max()
        if peak > 0:
            fold = fold / peak
        delta[p] = fold
        excluded[p] = False

    return ReferenceDge(delta=delta, excluded=excluded)


def pair_artifact_references(dataset: PerturbDataset) -> np.ndarray:
    """
    Reference row for each QC-failed row: its OT partner among the QC-pass
    rows sharing its treatment. -1 where no such partner exists (including
    every QC-pass row).
    """
    reference = np.full(dataset.n_cells, -1, dtype=np.int64)
    counts = dataset.X
    treatment = dataset.treatment_index()

    for j in np.unique(treatment):
        group = treatment == j
        failed = np.flatnonzero(group & (dataset.A == 1))
        passed = np.flatnonzero(group & (dataset.A == 0))
        if len(failed) == 0 or len(passed) == 0:
            continue
        plan = pair_optimal_transport(
            counts[failed], counts[passed], perturbed_index=failed, control_index=passed
        )
        for row, ref in plan.pairs:
            reference[row] = ref
    return reference
