# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""Gene regulatory network extraction, statistics and edge-list I/O."""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np
import pandas as pd
import torch

from . import tsv_formats
from .dataset import GeneCatalog, GroundTruthGrn
from .diffcore import DTYPE, matrix_power_sum
from .errors import ValidationError
from .model import CausalParams

logger = logging.getLogger(__name__)

RESTRICT_ALL = 'all'
RESTRICT_PERTURBED = 'perturbed_only'
MAX_PATH_EDGES = 3


@dataclass(frozen=True, eq=False)
class GrnGraph:
    """
    Edge probabilities over ``nodes`` and the edges strictly above ``threshold``.

    Self-loops are kept. ``extended`` names the nodes without interventional
    data (used by path reports).
    """

    nodes: tuple[str, ...]
    prob_matrix: np.ndarray
    threshold: float
    extended: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, 'nodes', tuple(self.nodes))
        object.__setattr__(self, 'extended', frozenset(self.extended))
        matrix = np.asarray(self.prob_matrix, dtype=np.float64)
        if matrix.shape != (len(self.nodes), len(self.nodes)):
            raise ValidationError(
                f'prob_matrix must be {len(self.nodes)} square, got {matrix.shape}'
            )
        object.__setattr__(self, 'prob_matrix', matrix)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def edges(self) -> tuple[tuple[str, str, float], ...]:
        rows, cols = np.nonzero(self.prob_matrix > self.threshold)
        return tuple(
            (self.nodes[i], self.nodes[j], float(self.prob_matrix[i, j]))
            for i, j in zip(rows.tolist(), cols.tolist())
        )

    @property
    def n_edges(self) -> int:
        return int((self.prob_matrix > self.threshold).sum())

    def edge_pairs(self) -> set[tuple[str, str]]:
        return {(s, t) for s, t, _ in self.edges}

    def index(self, gene: str) -> int:
        try:
            return self.nodes.index(gene)
        except ValueError:
            raise ValidationError(f'unknown gene {gene!r}') from None

    def to_networkx(self, weight_threshold: float | None = None) -> nx.DiGraph:
        """Directed graph of the edges above ``weight_threshold`` (default: threshold)."""
        cut = self.threshold if weight_threshold is None else weight_threshold
        graph = nx.DiGraph()
        graph.add_nodes_from(self.nodes)
        rows, cols = np.nonzero(self.prob_matrix > cut)
        graph.add_weighted_edges_from(
            (self.nodes[i], self.nodes[j], float(self.prob_matrix[i, j]))
            for i, j in zip(rows.tolist(), cols.tolist())
        )
        return graph


def extract_grn(
    params: CausalParams | torch.Tensor | np.ndarray,
    catalog: GeneCatalog,
    threshold: float = 0.5,
    restrict: str = RESTRICT_ALL,
) -> GrnGraph:
    """Thresholds sigmoid(logits) strictly; perturbed_only keeps the G° block."""
    if restrict not in (RESTRICT_ALL, RESTRICT_PERTURBED):
        raise ValidationError(
            f"restrict must be '{RESTRICT_ALL}' or '{RESTRICT_PERTURBED}', got {restrict!r}"
        )
    logits = params.logits if isinstance(params, CausalParams) else params
    prob = torch.sigmoid(torch.as_tensor(logits, dtype=DTYPE)).detach().numpy()
    nodes = catalog.modeled_names
    extended = {catalog.names[i] for i in catalog.extended_idx}
    if restrict == RESTRICT_PERTURBED:
        keep = catalog.n_perturbed
        prob = prob[:keep, :keep]
        nodes = nodes[:keep]
        extended = set()
    graph = GrnGraph(nodes, prob, threshold, frozenset(extended))
    logger.info(
        f'Extracted {graph.n_edges} edges over {graph.n_nodes} genes '
        f'(threshold {threshold}, {restrict})'
    )
    return graph


@dataclass(frozen=True, eq=False)
class DegreeReport:
    table: pd.DataFrame
    hubs: tuple[str, ...]

    def as_dict(self) -> dict:
        return {
            'hubs': list(self.hubs),
            'degrees': self.table.to_dict(orient='records'),
        }


def degree_stats(
    graph: GrnGraph, weight_threshold: float = 0.3, top_k: int = 3
) -> DegreeReport:
    """
    In/out/combined degrees over edges with probability > weight_threshold.

    Self-loops are not counted. Rows are ordered by combined degree
    (descending) with gene name breaking ties.
    """
    nx_graph = graph.to_networkx(weight_threshold)
    nx_graph.remove_edges_from(list(nx.selfloop_edges(nx_graph)))
    rows = [
        {
            'gene': gene,
            'in_degree': nx_graph.in_degree(gene),
            'out_degree': nx_graph.out_degree(gene),
        }
        for gene in graph.nodes
    ]
    table = pd.DataFrame(rows, columns=['gene', 'in_degree', 'out_degree'])
    table['combined'] = table['in_degree'] + table['out_degree']
    table = table.sort_values(
        ['combined', 'gene'], ascending=[False, True], kind='mergesort'
    ).reset_index(drop=True)
    return DegreeReport(table=table, hubs=tuple(table['gene'].head(top_k)))


def select_hubs(graph: GrnGraph, k: int = 3, weight_threshold: float = 0.3) -> list[str]:
    return list(degree_stats(graph, weight_threshold, k).hubs)


@dataclass(frozen=True, eq=False)
class KhopReach:
    source: str
    reach: np.ndarray
    paths: tuple[tuple[str, ...], ...]


def khop_reach(graph: GrnGraph, source: str, K: int = 5) -> KhopReach:
    """
    Row ``source`` of the K-hop accumulated probability matrix, plus the
    simple paths of at most three edges that pass through an extended gene.
    """
    i = graph.index(source)
    if K < 1:
        raise ValueError(f'K must be >= 1, got {K}')
    W = torch.as_tensor(graph.prob_matrix, dtype=DTYPE)
    reach = matrix_power_sum(W, K, 1.0 / graph.n_nodes)[i].numpy().copy()

    nx_graph = graph.to_networkx()
    paths = []
    for target in graph.nodes:
        if target == source:
            continue
        for path in nx.all_simple_paths(nx_graph, source, target, cutoff=MAX_PATH_EDGES):
            if any(node in graph.extended for node in path[1:-1]):
                paths.append(tuple(path))
    return KhopReach(source=source, reach=reach, paths=tuple(sorted(paths)))


def format_edges(graph: GrnGraph) -> str:
    return tsv_formats.format_edge_list(graph.edges)


def export_edges(graph: GrnGraph, path: Path):
    Path(path).write_text(format_edges(graph), encoding='utf-8')
    logger.info(f'Wrote {graph.n_edges} edges to {path}')


def import_edges(path: Path, nodes=None, threshold: float = 0.0) -> GrnGraph:
    """
    Reads an edge list. Absent pairs get probability 0.

    ``nodes`` fixes the node order; by default the nodes are the edge
    endpoints in order of first appearance.
    """
    edges = tsv_formats.parse_edge_list(Path(path).read_text(encoding='utf-8'))
    return graph_from_edges(edges, nodes, threshold)


def graph_from_edges(edges, nodes=None, threshold: float = 0.0) -> GrnGraph:
    if nodes is None:
        nodes = list(dict.fromkeys(name for s, t, _ in edges for name in (s, t)))
    nodes = tuple(nodes)
    position = {name: i for i, name in enumerate(nodes)}
    matrix = np.zeros((len(nodes), len(nodes)))
    for source, target, value in edges:
        if source not in position or target not in position:
            raise ValidationError(f'edge {source} -> {target} uses an unknown gene')
        matrix[position[source], position[target]] = value
    return GrnGraph(nodes, matrix, threshold)


def graph_from_ground_truth(truth: GroundTruthGrn, catalog: GeneCatalog) -> GrnGraph:
    """The true edge set with probability 1 per edge."""
    matrix = (np.asarray(truth.adjacency) != 0).astype(np.float64)
    extended = {catalog.names[i] for i in catalog.extended_idx}
    return GrnGraph(catalog.modeled_names, matrix, 0.5, frozenset(extended))


def random_graph(nodes, n_edges: int, seed: int = 0) -> GrnGraph:
    """Uniformly random non-self edges, drawn without replacement."""
    nodes = tuple(nodes)
    n = len(nodes)
    off_diagonal = [(i, j) for i in range(n) for j in range(n) if i != j]
    if n_edges > len(off_diagonal):
        raise ValidationError(
            f'cannot place {n_edges} edges among {len(off_diagonal)} ordered pairs'
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(off_diagonal), size=n_edges, replace=False)
    matrix = np.zeros((n, n))
    for c in chosen:
        matrix[off_diagonal[c]] = 1.0
    return GrnGraph(nodes, matrix, 0.5)


def degree_matched_random_graph(graph: GrnGraph, seed: int = 0) -> GrnGraph:
    """Random graph over the same nodes with the same number of non-self edges."""
    n_edges = sum(1 for s, t, _ in graph.edges if s != t)
    return random_graph(graph.nodes, n_edges, seed)
