# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""Tests for optimal-transport pairing and reference DGE."""

import itertools

import numpy as np
import pytest

from perturb_grn.dataset import GeneCatalog, PerturbDataset
from perturb_grn.errors import PairingError
from perturb_grn.pairing import (
    PairingPlan,
    compute_reference_dge,
    ot_cost,
    pair_artifact_references,
    pair_dataset,
    pair_optimal_transport,
)
from tests.toy_data import handmade_dataset, tiny_dataset


class TestPairOptimalTransport:
    """Tests for pair_optimal_transport."""

    def test_surplus_controls_unmatched(self):
        perturbed = np.array([[0, 0], [10, 10]])
        controls = np.array([[10, 10], [0, 0], [5, 5]])
        plan = pair_optimal_transport(perturbed, controls)
        assert plan.as_dict() == {0: 1, 1: 0}
        assert plan.unmatched_controls == (2,)
        assert plan.unmatched_perturbed == ()
        assert plan.total_cost == pytest.approx(0.0)

    def test_surplus_perturbed_unmatched(self):
        perturbed = np.array([[0, 0], [9, 9], [10, 10]])
        controls = np.array([[10, 10]])
        plan = pair_optimal_transport(perturbed, controls)
        assert plan.pairs == ((2, 0),)
        assert plan.unmatched_perturbed == (0, 1)

    def test_index_mapping(self):
        plan = pair_optimal_transport(
            np.array([[1, 1]]),
            np.array([[1, 1], [50, 50]]),
            perturbed_index=[7],
            control_index=[3, 4],
        )
        assert plan.pairs == ((7, 3),)
        assert plan.unmatched_controls == (4,)

    def test_empty_control_set(self):
        with pytest.raises(PairingError):
            pair_optimal_transport(np.array([[1, 2]]), np.zeros((0, 2)))

    def test_gene_count_mismatch(self):
        with pytest.raises(PairingError):
            pair_optimal_transport(np.array([[1, 2]]), np.array([[1, 2, 3]]))


class TestPairDataset:
    """Tests for pair_dataset and compute_reference_dge."""

    def test_every_treated_row_paired_once_per_group(self):
        dataset, _ = tiny_dataset()
        plan = pair_dataset(dataset)
        treatment = dataset.treatment_index()
        treated = set(np.flatnonzero(treatment >= 0).tolist())
        assert {p for p, _ in plan.pairs} | set(plan.unmatched_perturbed) == treated
        controls = set(dataset.control_rows().tolist())
        for j in range(dataset.catalog.n_perturbed):
            partners = [c for p, c in plan.pairs if treatment[p] == j]
            assert len(partners) == len(set(partners))
            assert set(partners) <= controls

    def test_no_controls(self):
        base = handmade_dataset()
        dataset = base.subset([2, 3, 4, 5])
        plan = pair_dataset(dataset)
        assert plan.pairs == ()
        assert plan.unmatched_perturbed == (0, 1, 2, 3)
        reference = compute_reference_dge(dataset, plan)
        assert reference.excluded.all()
        assert not reference.delta.any()

    def test_reference_dge_is_row_max_scaled(self):
        dataset = handmade_dataset()
        plan = pair_dataset(dataset)
        reference = compute_reference_dge(dataset, plan)
        assert reference.excluded.tolist() == [True, True, False, False, False, False]
        for p, _ in plan.pairs:
            assert reference.delta[p].max() == pytest.approx(1.0)
            assert (reference.delta[p] >= 0).all()
        assert not reference.delta[:2].any()

    def test_reference_dge_value(self):
        catalog = GeneCatalog(('A', 'B'), (0,), (1,))
        dataset = PerturbDataset(
            X=np.array([[3, 7], [1, 1]]),
            P=np.array([[0, 0], [1, 0]]),
            A=np.array([0, 0]),
            catalog=catalog,
        )
        reference = compute_reference_dge(dataset, PairingPlan(pairs=((1, 0),)))
        # |log2(2/4)| = 1, |log2(2/8)| = 2, scaled by the row max
        assert reference.delta[1].tolist() == pytest.approx([0.5, 1.0])


class TestArtifactReferences:
    """Tests for pair_artifact_references."""

    def test_failed_rows_get_passing_partner(self):
        assert pair_artifact_references(handmade_dataset()).tolist() == [
            -1,
            -1,
            -1,
            2,
            -1,
            4,
        ]

    def test_group_without_passing_rows(self):
        base = handmade_dataset()
        dataset = PerturbDataset(
            X=base.X, P=base.P, A=np.array([0, 0, 1, 1, 0, 0]), catalog=base.catalog
        )
        assert (pair_artifact_references(dataset) == -1).all()


class TestAssignmentOracle:
    """pair_optimal_transport against exhaustive search."""

    def test_unique_optimum(self):
        plan = pair_optimal_transport(np.array([[0], [10]]), np.array([[9], [1]]))
        assert plan.pairs == ((0, 1), (1, 0))

    def test_identical_rows(self):
        plan = pair_optimal_transport(np.array([[4, 2]]), np.array([[4, 2]]))
        assert plan.pairs == ((0, 0),)
        assert plan.total_cost == 0.0

    @pytest.mark.parametrize('seed', range(200))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        perturbed = rng.poisson(5.0, size=(5, 3))
        controls = rng.poisson(5.0, size=(5, 3))
        cost = ot_cost(perturbed, controls)
        best = min(
            cost[range(5), list(perm)].sum() for perm in itertools.permutations(range(5))
        )
        plan = pair_optimal_transport(perturbed, controls)
        assert plan.total_cost == pytest.approx(best)

    def test_symmetric_fold_change(self):
        catalog = GeneCatalog(('A', 'B'), (0,), (1,))
        dataset = PerturbDataset(
            X=np.array([[1, 3], [3, 1]]),
            P=np.array([[0, 0], [1, 0]]),
            A=np.array([0, 0]),
            catalog=catalog,
        )
        reference = compute_reference_dge(dataset, PairingPlan(pairs=((1, 0),)))
        assert reference.delta[1].tolist() == pytest.approx([1.0, 1.0])

    def test_identical_pair_is_zero_but_included(self):
        catalog = GeneCatalog(('A',), (0,), ())
        dataset = PerturbDataset(
            X=np.array([[5], [5]]),
            P=np.array([[0], [1]]),
            A=np.array([0, 0]),
            catalog=catalog,
        )
        reference = compute_reference_dge(dataset, PairingPlan(pairs=((1, 0),)))
        assert not reference.delta.any()
        assert reference.excluded.tolist() == [True, False]
