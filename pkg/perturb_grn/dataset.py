# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""Dataset model: gene catalog, perturbation dataset, ground truth, splits."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import networkx as nx
import numpy as np

from . import tsv_formats
from .errors import ConfigError, DatasetFormatError, ValidationError

logger = logging.getLogger(__name__)

DATASET_FILES = {
    'expression': 'expression.tsv',
    'treatments': 'treatments.tsv',
    'qc': 'qc.tsv',
    'catalog': 'catalog.tsv',
}
TRUTH_FILE = 'ground_truth.tsv'


@dataclass(frozen=True)
class GeneCatalog:
    """
    Ordered gene names with the perturbed (G°) and extended (G+) subsets.

    The modeled gene set is G° followed by G+, each in catalog order; it
    indexes the columns of P, the rows/columns of the causal matrix and the
    columns of the reference differential expression.
    """

    names: tuple[str, ...]
    perturbed_idx: tuple[int, ...]
    extended_idx: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, 'names', tuple(self.names))
        object.__setattr__(self, 'perturbed_idx', tuple(sorted(self.perturbed_idx)))
        object.__setattr__(self, 'extended_idx', tuple(sorted(self.extended_idx)))
        if len(set(self.names)) != len(self.names):
            raise ValidationError('gene names must be unique')
        if set(self.perturbed_idx) & set(self.extended_idx):
            raise ValidationError('perturbed and extended gene sets must be disjoint')
        for idx in self.perturbed_idx + self.extended_idx:
            if not 0 <= idx < len(self.names):
                raise ValidationError(f'gene index {idx} out of range')

    @classmethod
    def from_roles(cls, entries) -> 'GeneCatalog':
        """Builds a catalog from ``(name, role)`` pairs."""
        names = [name for name, _ in entries]
        perturbed = [
            i for i, (_, r) in enumerate(entries) if r == tsv_formats.ROLE_PERTURBED
        ]
        extended = [
            i for i, (_, r) in enumerate(entries) if r == tsv_formats.ROLE_EXTENDED
        ]
        return cls(tuple(names), tuple(perturbed), tuple(extended))

    @property
    def n_genes(self) -> int:
        return len(self.names)

    @property
    def modeled_idx(self) -> tuple[int, ...]:
        return self.perturbed_idx + self.extended_idx

    @property
    def modeled_names(self) -> tuple[str, ...]:
        return tuple(self.names[i] for i in self.modeled_idx)

    @property
    def n_modeled(self) -> int:
        return len(self.modeled_idx)

    @property
    def n_perturbed(self) -> int:
        return len(self.perturbed_idx)

    def modeled_index(self, gene: str) -> int:
        """Position of ``gene`` in the modeled gene order."""
        try:
            return self.modeled_names.index(gene)
        except ValueError:
            raise ValidationError(f'gene {gene!r} is not in G° ∪ G+') from None

    def is_perturbed(self, gene: str) -> bool:
        return gene in {self.names[i] for i in self.perturbed_idx}

    def role_entries(self) -> list[tuple[str, str]]:
        perturbed = set(self.perturbed_idx)
        extended = set(self.extended_idx)
        entries = []
        for i, name in enumerate(self.names):
            if i in perturbed:
                role = tsv_formats.ROLE_PERTURBED
            elif i in extended:
                role = tsv_formats.ROLE_EXTENDED
            else:
                role = tsv_formats.ROLE_MEASURED
            entries.append((name, role))
        return entries


@dataclass(frozen=True, eq=False)
class PerturbDataset:
    """
    Counts X, one-hot treatments P and QC-artifact flags A.

    ``A[n] == 1`` marks an artifact (QC failed). ``row_ids`` records each
    row's position in the dataset it was split from.
    """

    X: np.ndarray
    P: np.ndarray
    A: np.ndarray
    catalog: GeneCatalog
    library_size: np.ndarray = field(default=None)
    row_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.int64)
        P = np.asarray(self.P, dtype=np.float64)
        A = np.asarray(self.A, dtype=np.int64).reshape(-1)
        object.__setattr__(self, 'X', X)
        object.__setattr__(self, 'P', P)
        object.__setattr__(self, 'A', A)
        if self.library_size is None:
            object.__setattr__(
                self, 'library_size', X.sum(axis=1).astype(np.float64)
            )
        if self.row_ids is None:
            object.__setattr__(self, 'row_ids', np.arange(X.shape[0]))
        self._validate()

    def _validate(self):
        n = self.X.shape[0]
        if self.X.ndim != 2 or self.X.shape[1] != self.catalog.n_genes:
            raise ValidationError(
                f'X must be N x {self.catalog.n_genes}, got {self.X.shape}'
            )
        if self.P.shape != (n, self.catalog.n_modeled):
            raise ValidationError(
                f'P must be {n} x {self.catalog.n_modeled}, got {self.P.shape}'
            )
        if self.A.shape != (n,) or len(self.library_size) != n:
            raise ValidationError('A and library_size must have one entry per row')
        if (self.X < 0).any():
            raise ValidationError('counts must be non-negative')
        if not np.isin(self.P, (0.0, 1.0)).all():
            raise ValidationError('P must be 0/1')
        sums = self.P.sum(axis=1)
        if not np.isin(sums, (0.0, 1.0)).all():
            row = int(np.flatnonzero(~np.isin(sums, (0.0, 1.0)))[0])
            raise ValidationError(f'P row {row} selects more than one gene')
        if not np.isin(self.A, (0, 1)).all():
            raise ValidationError('A must be binary')
        if not np.array_equal(self.library_size, self.X.sum(axis=1)):
            raise ValidationError('library_size must equal the row sums of X')

    @property
    def n_cells(self) -> int:
        return self.X.shape[0]

    def treatment_index(self) -> np.ndarray:
        """Modeled-gene index of each row's treatment, -1 for controls."""
        idx = self.P.argmax(axis=1)
        idx[self.P.sum(axis=1) == 0] = -1
        return idx

    def treatment_labels(self) -> list[str]:
        names = self.catalog.modeled_names
        return [
            tsv_formats.CONTROL_LABEL if i < 0 else names[i]
            for i in self.treatment_index()
        ]

    def control_rows(self) -> np.ndarray:
        return np.flatnonzero(self.P.sum(axis=1) == 0)

    def rows_for(self, gene: str) -> np.ndarray:
        j = self.catalog.modeled_index(gene)
        return np.flatnonzero(self.P[:, j] == 1)

    def treated_genes(self) -> list[str]:
        """Modeled genes with at least one treated row, in modeled order."""
        present = np.flatnonzero(self.P.sum(axis=0) > 0)
        names = self.catalog.modeled_names
        return [names[j] for j in present]

    def modeled_counts(self) -> np.ndarray:
        """Columns of X restricted to G° ∪ G+, in modeled order."""
        return self.X[:, list(self.catalog.modeled_idx)]

    def subset(self, rows) -> 'PerturbDataset':
        rows = np.asarray(rows, dtype=np.int64)
        return PerturbDataset(
            X=self.X[rows],
            P=self.P[rows],
            A=self.A[rows],
            catalog=self.catalog,
            library_size=self.library_size[rows],
            row_ids=self.row_ids[rows],
        )

    def same_as(self, other: 'PerturbDataset') -> bool:
        return (
            self.catalog == other.catalog
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.P, other.P)
            and np.array_equal(self.A, other.A)
        )


@dataclass(frozen=True, eq=False)
class GroundTruthGrn:
    """Signed effect weights over G° ∪ G+ (synthetic data only)."""

    adjacency: np.ndarray

    @property
    def edge_set(self) -> set[tuple[int, int]]:
        rows, cols = np.nonzero(self.adjacency)
        return set(zip(rows.tolist(), cols.tolist()))

    def is_acyclic(self) -> bool:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.adjacency.shape[0]))
        graph.add_edges_from(self.edge_set)
        return nx.is_directed_acyclic_graph(graph)

    def edges(self, names) -> list[tuple[str, str, float]]:
        return [
            (names[i], names[j], float(self.adjacency[i, j]))
            for i, j in sorted(self.edge_set)
        ]


class DatasetSplits(NamedTuple):
    train: PerturbDataset
    val: PerturbDataset
    test: PerturbDataset


def load_dataset(
    expr_path: Path, treat_path: Path, qc_path: Path, catalog_path: Path
) -> PerturbDataset:
    """Reads and validates the four dataset files."""
    catalog = GeneCatalog.from_roles(tsv_formats.read_catalog(catalog_path))
    names, counts = tsv_formats.read_expression(expr_path)

    missing = [n for n in catalog.names if n not in names]
    if missing or len(names) != catalog.n_genes:
        unknown = [n for n in names if n not in catalog.names]
        raise DatasetFormatError(
            f'expression header does not match catalog '
            f'(missing: {missing}, unknown: {unknown})',
            path=expr_path,
        )
    # Reorder columns to catalog order
    order = [names.index(n) for n in catalog.names]
    counts = counts[:, order]

    labels = tsv_formats.read_treatments(treat_path)
    flags = tsv_formats.read_qc_flags(qc_path)
    n = counts.shape[0]
    if len(labels) != n:
        raise DatasetFormatError(
            f'{len(labels)} treatment rows for {n} expression rows', path=treat_path
        )
    if len(flags) != n:
        raise DatasetFormatError(
            f'{len(flags)} QC rows for {n} expression rows', path=qc_path
        )

    P = np.zeros((n, catalog.n_modeled), dtype=np.float64)
    lookup = {name: j for j, name in enumerate(catalog.modeled_names)}
    for i, label in enumerate(labels):
        if label == tsv_formats.CONTROL_LABEL:
            continue
        if any(sep in label for sep in tsv_formats.MULTI_GENE_SEPARATORS):
            raise DatasetFormatError(
                f'multi-gene treatment {label!r} is not supported',
                path=treat_path,
                row=i + 1,
            )
        if label not in lookup:
            raise DatasetFormatError(
                f'unknown treatment gene {label!r} (not in G° ∪ G+)',
                path=treat_path,
                row=i + 1,
            )
        P[i, lookup[label]] = 1.0

    dataset = PerturbDataset(X=counts, P=P, A=flags, catalog=catalog)
    logger.info(
        f'Loaded dataset: {n} cells, {catalog.n_genes} genes, '
        f'{catalog.n_perturbed} perturbed, {len(catalog.extended_idx)} extended'
    )
    return dataset


def dataset_paths(directory: Path) -> dict[str, Path]:
    directory = Path(directory)
    return {key: directory / name for key, name in DATASET_FILES.items()}


def load_dataset_dir(directory: Path) -> PerturbDataset:
    paths = dataset_paths(directory)
    return load_dataset(
        paths['expression'], paths['treatments'], paths['qc'], paths['catalog']
    )


def format_dataset(dataset: PerturbDataset) -> dict[str, str]:
    """File name -> TSV text for the four dataset files."""
    return {
        DATASET_FILES['expression']: tsv_formats.format_expression(
            dataset.catalog.names, dataset.X
        ),
        DATASET_FILES['treatments']: tsv_formats.format_lines(
            dataset.treatment_labels()
        ),
        DATASET_FILES['qc']: tsv_formats.format_lines(dataset.A.tolist()),
        DATASET_FILES['catalog']: tsv_formats.format_catalog(
            dataset.catalog.role_entries()
        ),
    }


def save_dataset(dataset: PerturbDataset, directory: Path) -> dict[str, Path]:
    """Writes the four dataset files; ``load_dataset`` reads them back."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, text in format_dataset(dataset).items():
        (directory / name).write_text(text, encoding='utf-8', newline='\n')
    logger.info(f'Wrote dataset files to {directory}')
    return dataset_paths(directory)


def format_ground_truth(truth: GroundTruthGrn, catalog: GeneCatalog) -> str:
    return tsv_formats.format_edge_list(
        truth.edges(catalog.modeled_names), value_column='weight'
    )


def save_ground_truth(truth: GroundTruthGrn, catalog: GeneCatalog, path: Path):
    Path(path).write_text(format_ground_truth(truth, catalog), encoding='utf-8')


def load_ground_truth(path: Path, catalog: GeneCatalog) -> GroundTruthGrn:
    edges = tsv_formats.parse_edge_list(
        Path(path).read_text(encoding='utf-8'), value_column='weight'
    )
    n = catalog.n_modeled
    adjacency = np.zeros((n, n))
    for source, target, weight in edges:
        adjacency[catalog.modeled_index(source), catalog.modeled_index(target)] = (
            weight
        )
    return GroundTruthGrn(adjacency)


def split_dataset(
    dataset: PerturbDataset,
    seed: int,
    holdout_perturbations=(),
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> DatasetSplits:
    """
    Seeded train/val/test split.

    Rows treated with a holdout gene all go to test; the rest (controls
    included) are shuffled and cut by ``fractions``.
    """
    holdout = list(holdout_perturbations)
    for gene in holdout:
        if not dataset.catalog.is_perturbed(gene):
            raise ConfigError(f'holdout gene {gene!r} is not a perturbed gene')

    held = np.zeros(dataset.n_cells, dtype=bool)
    for gene in holdout:
        held[dataset.rows_for(gene)] = True

    remaining = np.flatnonzero(~held)
    rng = np.random.default_rng(seed)
    shuffled = rng.permutation(remaining)
    n_train = int(round(fractions[0] * len(remaining)))
    n_val = int(round(fractions[1] * len(remaining)))
    train_rows = np.sort(shuffled[:n_train])
    val_rows = np.sort(shuffled[n_train : n_train + n_val])
    test_rows = np.sort(
        np.concatenate([shuffled[n_train + n_val :], np.flatnonzero(held)])
    )
    logger.info(
        f'Split {dataset.n_cells} rows into {len(train_rows)} train, '
        f'{len(val_rows)} val, {len(test_rows)} test '
        f'(holdout: {", ".join(holdout) or "none"})'
    )
    return DatasetSplits(
        dataset.subset(train_rows),
        dataset.subset(val_rows),
        dataset.subset(test_rows),
    )
