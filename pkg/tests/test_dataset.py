# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""Tests for the dataset model, TSV round-trips and splitting."""

import numpy as np
import pytest

from perturb_grn.dataset import (
    DATASET_FILES,
    TRUTH_FILE,
    GeneCatalog,
    GroundTruthGrn,
    PerturbDataset,
    dataset_paths,
    format_dataset,
    load_dataset_dir,
    load_ground_truth,
    save_dataset,
    save_ground_truth,
    split_dataset,
)
from perturb_grn.errors import (
    ConfigError,
    DatasetFormatError,
    ValidationError,
)
from tests.toy_data import handmade_dataset, tiny_dataset


@pytest.fixture
def dataset_dir(tmp_path):
    """A handmade dataset saved under tmp_path."""
    save_dataset(handmade_dataset(), tmp_path)
    return tmp_path


class TestGeneCatalog:
    """Tests for GeneCatalog."""

    def test_modeled_order_is_perturbed_then_extended(self):
        catalog = GeneCatalog.from_roles(
            [('E1', 'extended'), ('P1', 'perturbed'), ('M1', 'measured'), ('P2', 'perturbed')]
        )
        assert catalog.modeled_names == ('P1', 'P2', 'E1')
        assert catalog.n_genes == 4
        assert catalog.n_perturbed == 2
        assert catalog.modeled_index('E1') == 2

    def test_unknown_modeled_gene(self):
        catalog = GeneCatalog(('A', 'B'), (0,), ())
        with pytest.raises(ValidationError):
            catalog.modeled_index('B')

    def test_duplicate_names(self):
        with pytest.raises(ValidationError):
            GeneCatalog(('A', 'A'), (0,), ())

    def test_overlapping_roles(self):
        with pytest.raises(ValidationError):
            GeneCatalog(('A', 'B'), (0,), (0,))

    def test_role_entries_round_trip(self):
        catalog = GeneCatalog(('A', 'B', 'C'), (1,), (2,))
        assert GeneCatalog.from_roles(catalog.role_entries()) == catalog


class TestPerturbDataset:
    """Tests for PerturbDataset validation and queries."""

    def test_queries(self):
        dataset = handmade_dataset()
        assert dataset.n_cells == 6
        assert dataset.control_rows().tolist() == [0, 1]
        assert dataset.rows_for('B').tolist() == [4, 5]
        assert dataset.treatment_index().tolist() == [-1, -1, 0, 0, 1, 1]
        assert dataset.treatment_labels()[:3] == ['control', 'control', 'A']
        assert dataset.treated_genes() == ['A', 'B']
        assert dataset.library_size.tolist() == [18, 18, 10, 16, 15, 17]

    def test_multi_gene_row_rejected(self):
        base = handmade_dataset()
        P = base.P.copy()
        P[0] = [1, 1, 0]
        with pytest.raises(ValidationError, match='more than one gene'):
            PerturbDataset(X=base.X, P=P, A=base.A, catalog=base.catalog)

    def test_non_binary_qc_rejected(self):
        base = handmade_dataset()
        A = base.A.copy()
        A[0] = 2
        with pytest.raises(ValidationError):
            PerturbDataset(X=base.X, P=base.P, A=A, catalog=base.catalog)

    def test_wrong_gene_count_rejected(self):
        base = handmade_dataset()
        with pytest.raises(ValidationError):
            PerturbDataset(X=base.X[:, :2], P=base.P, A=base.A, catalog=base.catalog)

    def test_subset_keeps_row_ids(self):
        subset = handmade_dataset().subset([5, 2])
        assert subset.row_ids.tolist() == [5, 2]
        assert subset.treatment_labels() == ['B', 'A']


class TestDatasetFiles:
    """Tests for saving and loading the four dataset files."""

    def test_round_trip(self, dataset_dir):
        assert load_dataset_dir(dataset_dir).same_as(handmade_dataset())

    def test_writes_all_files(self, dataset_dir):
        for path in dataset_paths(dataset_dir).values():
            assert path.is_file()
        assert (dataset_dir / 'treatments.tsv').read_text().splitlines()[2] == 'A'

    def test_format_is_deterministic(self):
        first = format_dataset(tiny_dataset()[0])
        second = format_dataset(tiny_dataset()[0])
        assert first == second
        assert set(first) == set(DATASET_FILES.values())

    def test_columns_reordered_to_catalog(self, dataset_dir):
        (dataset_dir / 'expression.tsv').write_text('C\tA\tB\n' + '1\t2\t3\n' * 6)
        dataset = load_dataset_dir(dataset_dir)
        assert dataset.X[0].tolist() == [2, 3, 1]

    def test_unknown_treatment(self, dataset_dir):
        labels = ['control', 'control', 'A', 'A', 'B', 'Z']
        (dataset_dir / 'treatments.tsv').write_text('\n'.join(labels) + '\n')
        with pytest.raises(DatasetFormatError) as excinfo:
            load_dataset_dir(dataset_dir)
        assert excinfo.value.row == 6

    def test_multi_gene_treatment(self, dataset_dir):
        labels = ['control', 'A+B', 'A', 'A', 'B', 'B']
        (dataset_dir / 'treatments.tsv').write_text('\n'.join(labels) + '\n')
        with pytest.raises(DatasetFormatError, match='multi-gene') as excinfo:
            load_dataset_dir(dataset_dir)
        assert excinfo.value.row == 2

    def test_row_count_mismatch(self, dataset_dir):
        (dataset_dir / 'qc.tsv').write_text('0\n0\n')
        with pytest.raises(DatasetFormatError, match='QC rows'):
            load_dataset_dir(dataset_dir)

    def test_header_mismatch(self, dataset_dir):
        (dataset_dir / 'expression.tsv').write_text('A\tB\tQ\n' + '1\t2\t3\n' * 6)
        with pytest.raises(DatasetFormatError, match='does not match catalog'):
            load_dataset_dir(dataset_dir)


class TestGroundTruth:
    """Tests for GroundTruthGrn and its edge-list file."""

    def test_acyclic(self):
        adjacency = np.zeros((3, 3))
        adjacency[0, 1] = adjacency[1, 2] = 0.5
        assert GroundTruthGrn(adjacency).is_acyclic()
        adjacency[2, 0] = 0.5
        assert not GroundTruthGrn(adjacency).is_acyclic()

    def test_round_trip(self, tmp_path):
        dataset, truth = tiny_dataset()
        path = tmp_path / TRUTH_FILE
        save_ground_truth(truth, dataset.catalog, path)
        loaded = load_ground_truth(path, dataset.catalog)
        assert loaded.edge_set == truth.edge_set
        assert np.allclose(loaded.adjacency, truth.adjacency, atol=1e-6)


class TestSplitDataset:
    """Tests for split_dataset."""

    def test_partitions_rows(self):
        dataset, _ = tiny_dataset()
        splits = split_dataset(dataset, seed=0)
        ids = np.concatenate([s.row_ids for s in splits])
        assert sorted(ids.tolist()) == list(range(dataset.n_cells))
        assert splits.train.n_cells == 96
        assert splits.val.n_cells == 12

    def test_deterministic(self):
        dataset, _ = tiny_dataset()
        first = split_dataset(dataset, seed=3)
        second = split_dataset(dataset, seed=3)
        assert np.array_equal(first.test.row_ids, second.test.row_ids)

    def test_holdout_goes_to_test(self):
        dataset, _ = tiny_dataset()
        splits = split_dataset(dataset, seed=0, holdout_perturbations=['P001'])
        held = set(dataset.rows_for('P001').tolist())
        assert held <= set(splits.test.row_ids.tolist())
        assert len(splits.train.rows_for('P001')) == 0
        assert len(splits.val.rows_for('P001')) == 0

    def test_holdout_must_be_perturbed(self):
        dataset, _ = tiny_dataset()
        with pytest.raises(ConfigError):
            split_dataset(dataset, seed=0, holdout_perturbations=['E000'])
