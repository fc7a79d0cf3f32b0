# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""One ``run_*`` function per CLI subcommand."""

import dataclasses
import logging
from pathlib import Path

import pandas as pd
import torch

from . import __version__
from .artifact_store import ArtifactStore
from .config import Ablation, EvalConfig, SimulationConfig, TrainConfig
from .dataset import (
    TRUTH_FILE,
    PerturbDataset,
    format_dataset,
    format_ground_truth,
    load_dataset_dir,
    load_ground_truth,
    split_dataset,
)
from .directory_store import DirectoryStore
from .grn import (
    GrnGraph,
    degree_stats,
    extract_grn,
    format_edges,
    graph_from_ground_truth,
    import_edges,
    khop_reach,
)
from .inference import predict_unseen
from .metrics import MetricsReport, evaluate, score_treatment
from .model import ModelState
from .run_spec import MANIFEST_FILE, RunManifest, RunSpec
from .synthetic import synthesize_dataset
from .trainer import checkpoint_bytes, load_checkpoint, train

logger = logging.getLogger(__name__)

ABLATION_ORDER = (
    Ablation.SP_ONLY,
    Ablation.DGE_ONLY,
    Ablation.DGE_K_ONLY,
    Ablation.FULL,
)
ABLATION_COLUMNS = [
    'variant',
    'ate_pearson',
    'ate_r2',
    'jaccard_topk',
    'mean_wd',
    'for_rate',
    'n_edges',
]


def _store_for(spec: RunSpec, store: ArtifactStore | None) -> ArtifactStore:
    return DirectoryStore(spec.out_dir) if store is None else store


def _write_manifest(store: ArtifactStore, spec: RunSpec, configs):
    manifest = RunManifest.for_run(spec, configs, __version__)
    store.write_json(MANIFEST_FILE, manifest.to_dict())


def _load_model(spec: RunSpec) -> tuple[ModelState, TrainConfig]:
    """
    Loads the checkpoint; a train section in the config file must match it.

    The section is compared as written, so --seed and training flags given
    to a later command do not count as a mismatch.
    """
    model, config = load_checkpoint(spec.checkpoint, spec.file_config(TrainConfig))
    logger.info(f'📦 Loaded checkpoint {spec.checkpoint}')
    return model, config


def _splits(dataset: PerturbDataset, config: TrainConfig):
    return split_dataset(dataset, config.split_seed, config.holdout)


def run_simulate(spec: RunSpec, store: ArtifactStore | None = None):
    """Writes a synthetic dataset and its ground-truth edge list."""
    store = _store_for(spec, store)
    config = spec.get_config(SimulationConfig)
    try:
        dataset, truth = synthesize_dataset(config)
        for name, text in format_dataset(dataset).items():
            store.write_text(name, text)
        store.write_text(TRUTH_FILE, format_ground_truth(truth, dataset.catalog))
        _write_manifest(store, spec, [config])
    except Exception as e:
        logger.error(f'Simulation failed: {e}')
        raise
    logger.info(f'Synthetic dataset written to {spec.out_dir}')
    return dataset, truth


def run_train(spec: RunSpec, store: ArtifactStore | None = None):
    """Splits the dataset, trains, and writes checkpoints, histories and config."""
    store = _store_for(spec, store)
    config = spec.get_config(TrainConfig)
    try:
        dataset = load_dataset_dir(spec.data_dir)
        splits = _splits(dataset, config)
        model, history = train(splits.train, splits.val, config, store=store)
        store.write_json('config.json', {'train': config.to_dict()})
        _write_manifest(store, spec, [config])
    except Exception as e:
        logger.error(f'Training failed: {e}')
        raise
    return model, history


def run_predict(spec: RunSpec, genes=(), store: ArtifactStore | None = None):
    """
    Predicts held-out treatments on the test split.

    Without ``genes`` the checkpoint's holdout genes are used, or every
    treatment in the test split when nothing was held out.
    """
    store = _store_for(spec, store)
    eval_config = spec.get_config(EvalConfig)
    try:
        model, train_config = _load_model(spec)
        test = _splits(load_dataset_dir(spec.data_dir), train_config).test
        genes = list(genes) or list(train_config.holdout) or test.treated_genes()

        tables = []
        summary = []
        for gene in genes:
            prediction, table = predict_unseen(
                model, gene, test, eval_config.n_particles, eval_config.seed
            )
            tables.append(table.assign(treatment=gene))
            scores = score_treatment(
                table['predicted_de'].to_numpy(),
                table['observed_de'].to_numpy(),
                eval_config.k_top,
            )
            summary.append(
                {'treatment': gene, 'particles': prediction.particles, **scores}
            )

        predictions = pd.concat(tables, ignore_index=True)[
            ['treatment', 'gene', 'predicted_de', 'observed_de']
        ]
        store.write_table('predictions.tsv', predictions)
        store.write_json('predict_summary.json', {'treatments': summary})
        _write_manifest(store, spec, [train_config, eval_config])
    except Exception as e:
        logger.error(f'Prediction failed: {e}')
        raise
    return summary


def run_grn(spec: RunSpec, store: ArtifactStore | None = None) -> GrnGraph:
    """Extracts the GRN and writes edges, degrees and hub subnetwork paths."""
    store = _store_for(spec, store)
    config = spec.get_config(EvalConfig)
    try:
        model, train_config = _load_model(spec)
        graph = extract_grn(model.causal, model.catalog, config.threshold, config.restrict)
        store.write_text('edges.tsv', format_edges(graph))
        degrees = degree_stats(graph, config.hub_threshold, config.n_hubs)
        store.write_json('degrees.json', degrees.as_dict())

        # Paths through extended genes need the unrestricted graph
        full = extract_grn(model.causal, model.catalog, config.threshold)
        paths = {
            hub: [list(p) for p in khop_reach(full, hub, train_config.k_hops).paths]
            for hub in degrees.hubs
        }
        store.write_json('hub_paths.json', paths)
        _write_manifest(store, spec, [train_config, config])
    except Exception as e:
        logger.error(f'GRN extraction failed: {e}')
        raise
    logger.info(f'Hubs: {", ".join(degrees.hubs) or "none"}')
    return graph


def _read_graph(path: Path, dataset: PerturbDataset) -> GrnGraph:
    """Reads an inferred edge list or a ground-truth (weight) edge list."""
    header = Path(path).read_text(encoding='utf-8').split('\n', 1)[0]
    if header.strip().endswith('weight'):
        truth = load_ground_truth(path, dataset.catalog)
        return graph_from_ground_truth(truth, dataset.catalog)
    return import_edges(path, nodes=dataset.catalog.modeled_names)


def _write_report(store: ArtifactStore, report: MetricsReport, prefix: str = ''):
    store.write_json(f'{prefix}metrics.json', report.as_dict())
    store.write_table(f'{prefix}per_treatment.tsv', report.per_treatment)
    store.write_table(f'{prefix}edge_wd.tsv', report.edge_table)
    store.write_table(f'{prefix}negatives.tsv', report.negative_pairs)


def run_eval(
    spec: RunSpec,
    graph_path: Path | None = None,
    truth_path: Path | None = None,
    store: ArtifactStore | None = None,
) -> MetricsReport:
    """
    Scores a model and a graph: the given edge list, or the one extracted
    from the checkpoint. Response metrics use the test split; graph metrics
    use the whole dataset.
    """
    store = _store_for(spec, store)
    eval_config = spec.get_config(EvalConfig)
    try:
        dataset = load_dataset_dir(spec.data_dir)
        model = None
        configs = [eval_config]
        response_data = dataset
        if spec.has_checkpoint:
            model, train_config = _load_model(spec)
            response_data = _splits(dataset, train_config).test
            configs.insert(0, train_config)

        if graph_path is not None:
            graph = _read_graph(graph_path, dataset)
        elif model is not None:
            graph = extract_grn(
                model.causal, model.catalog, eval_config.threshold, eval_config.restrict
            )
        else:
            raise ValueError('eval needs a checkpoint or a graph (--graph)')

        truth = prob = None
        if truth_path is not None:
            if model is None:
                logger.warning('⚠️  --truth ignored: edge AUROC needs a checkpoint')
            else:
                truth = load_ground_truth(truth_path, dataset.catalog)
                prob = torch.sigmoid(model.causal.logits).detach().numpy()

        report = evaluate(
            model,
            dataset,
            graph,
            eval_config,
            truth=truth,
            prob_matrix=prob,
            response_data=response_data,
        )
        _write_report(store, report)
        _write_manifest(store, spec, configs)
    except Exception as e:
        logger.error(f'Evaluation failed: {e}')
        raise
    return report


def run_ablate(spec: RunSpec, store: ArtifactStore | None = None) -> pd.DataFrame:
    """Trains and scores every ablation variant on shared data and seed."""
    store = _store_for(spec, store)
    base = spec.get_config(TrainConfig)
    eval_config = spec.get_config(EvalConfig)
    try:
        dataset = load_dataset_dir(spec.data_dir)
        splits = _splits(dataset, base)
        rows = []
        for variant in ABLATION_ORDER:
            config = dataclasses.replace(base, ablation=variant)
            logger.info(f'🔬 Ablation variant: {variant}')
            model, _ = train(splits.train, splits.val, config)
            store.write_bytes(f'{variant}/model.ckpt', checkpoint_bytes(model, config))
            graph = extract_grn(
                model.causal, model.catalog, eval_config.threshold, eval_config.restrict
            )
            report = evaluate(
                model, dataset, graph, eval_config, response_data=splits.test
            )
            _write_report(store, report, prefix=f'{variant}/')
            rows.append(
                {
                    'variant': variant.value,
                    'ate_pearson': report.ate_pearson,
                    'ate_r2': report.ate_r2,
                    'jaccard_topk': report.jaccard_topk,
                    'mean_wd': report.mean_wd,
                    'for_rate': report.for_rate,
                    'n_edges': report.n_edges,
                }
            )
        table = pd.DataFrame(rows, columns=ABLATION_COLUMNS)
        store.write_table('ablation.tsv', table)
        _write_manifest(store, spec, [base, eval_config])
    except Exception as e:
        logger.error(f'Ablation failed: {e}')
        raise
    return table
