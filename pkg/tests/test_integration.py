# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""End-to-end runs of the pgrn CLI on synthetic data."""

import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest
import torch

from perturb_grn.cli import cli_entrypoint
from perturb_grn.config import EvalConfig, SimulationConfig, TrainConfig
from perturb_grn.dataset import split_dataset
from perturb_grn.grn import (
    degree_matched_random_graph,
    extract_grn,
    graph_from_ground_truth,
    select_hubs,
)
from perturb_grn.inference import predict_unseen
from perturb_grn.metrics import ate_pearson, edge_auroc, mean_wd
from perturb_grn.synthetic import synthesize_dataset
from perturb_grn.trainer import load_checkpoint, train
from tests.toy_data import tiny_simulation, tiny_train_config

PIPELINE = (
    ['simulate', '--config', 'config.json', '--out', 'data'],
    ['train', '--config', 'config.json', '--data', 'data', '--out', 'run'],
    ['grn', '--config', 'config.json', '--checkpoint', 'run/model.ckpt', '--out', 'grn'],
    [
        'eval',
        '--config', 'config.json',
        '--data', 'data',
        '--checkpoint', 'run/model.ckpt',
        '--truth', 'data/ground_truth.tsv',
        '--out', 'eval',
    ],
    [
        'predict',
        '--config', 'config.json',
        '--data', 'data',
        '--checkpoint', 'run/model.ckpt',
        '--out', 'predict',
    ],
)


def _write_config(root: Path):
    config = {
        'simulation': tiny_simulation(n_cells=300).to_dict(),
        'train': tiny_train_config(epochs=2, holdout=('P001',)).to_dict(),
        'eval': EvalConfig(n_particles=20, n_negatives=20).to_dict(),
    }
    (root / 'config.json').write_text(json.dumps(config))


def _run(argv):
    with pytest.raises(SystemExit) as excinfo:
        cli_entrypoint(argv)
    assert excinfo.value.code == 0, f'{argv[0]} exited {excinfo.value.code}'


def _run_pipeline(root: Path, monkeypatch):
    monkeypatch.chdir(root)
    _write_config(root)
    for argv in PIPELINE:
        _run(argv)


def _outputs(root: Path) -> dict[str, bytes]:
    return {
        str(path.relative_to(root)): path.read_bytes()
        for path in sorted(root.rglob('*'))
        if path.is_file()
    }


class TestPipeline:
    """simulate, train, grn, eval and predict chained through the CLI."""

    def test_every_step_writes_its_outputs(self, tmp_path, monkeypatch):
        """Test that each command exits 0 and leaves its artifacts."""
        _run_pipeline(tmp_path, monkeypatch)
        expected = [
            'data/expression.tsv',
            'data/ground_truth.tsv',
            'run/model.ckpt',
            'run/best.ckpt',
            'run/epochs.jsonl',
            'grn/edges.tsv',
            'grn/hub_paths.json',
            'eval/metrics.json',
            'eval/edge_wd.tsv',
            'predict/predictions.tsv',
        ]
        for name in expected:
            assert (tmp_path / name).is_file(), name
        for step in ('data', 'run', 'grn', 'eval', 'predict'):
            manifest = json.loads((tmp_path / step / 'manifest.json').read_text())
            assert manifest['version'] == '0.1.0'

        metrics = json.loads((tmp_path / 'eval' / 'metrics.json').read_text())
        assert 'edge_auroc' in metrics['grn']
        assert metrics['provenance']['seed'] == 0

    def test_reruns_are_identical(self, tmp_path, monkeypatch):
        """Test that the same seed reproduces every artifact."""
        first_root = tmp_path / 'first'
        second_root = tmp_path / 'second'
        first_root.mkdir()
        second_root.mkdir()
        _run_pipeline(first_root, monkeypatch)
        _run_pipeline(second_root, monkeypatch)

        first = _outputs(first_root)
        second = _outputs(second_root)
        assert first.keys() == second.keys()
        for name in first:
            if name.endswith('.ckpt'):
                continue
            assert first[name] == second[name], name

        model_a, _ = load_checkpoint(first_root / 'run' / 'model.ckpt')
        model_b, _ = load_checkpoint(second_root / 'run' / 'model.ckpt')
        for a, b in zip(model_a.state_dict().values(), model_b.state_dict().values()):
            assert torch.equal(a, b)

    def test_eval_of_ground_truth_graph(self, tmp_path, monkeypatch):
        """Test that eval can score the simulator's own graph without a model."""
        monkeypatch.chdir(tmp_path)
        _write_config(tmp_path)
        _run(PIPELINE[0])
        _run(
            [
                'eval', '--config', 'config.json', '--data', 'data',
                '--graph', 'data/ground_truth.tsv', '--out', 'truth_eval',
            ]
        )
        metrics = json.loads((tmp_path / 'truth_eval' / 'metrics.json').read_text())
        assert metrics['grn']['n_edges'] > 0
        assert metrics['per_treatment'] == []

    def test_ablate(self, tmp_path, monkeypatch):
        """Test that ablate writes one row and one checkpoint per variant."""
        monkeypatch.chdir(tmp_path)
        _write_config(tmp_path)
        _run(PIPELINE[0])
        _run(['ablate', '--config', 'config.json', '--data', 'data', '--out', 'abl'])
        rows = (tmp_path / 'abl' / 'ablation.tsv').read_text().splitlines()
        assert len(rows) == 5
        for variant in ('sp_only', 'dge_only', 'dge_k_only', 'full'):
            assert (tmp_path / 'abl' / variant / 'model.ckpt').is_file()

    def test_bad_dataset_exits_one(self, tmp_path, monkeypatch):
        """Test that a malformed input file fails with exit code 1."""
        monkeypatch.chdir(tmp_path)
        _write_config(tmp_path)
        _run(PIPELINE[0])
        (tmp_path / 'data' / 'qc.tsv').write_text('0\n7\n')
        with pytest.raises(SystemExit) as excinfo:
            cli_entrypoint(PIPELINE[1])
        assert excinfo.value.code == 1


BENCHMARK = SimulationConfig(
    n_perturbed=50,
    n_extended=25,
    n_cells=5000,
    edge_density=0.05,
    seed=0,
)
BENCHMARK_TRAIN = TrainConfig(
    epochs=150,
    batch_size=512,
    learning_rate=3e-3,
    latent_dim=16,
    encoder_layers=2,
    encoder_width=128,
    effect_width=32,
)


@pytest.fixture(scope='module')
def benchmark():
    """
    Fixture that simulates the 75-gene benchmark and trains the full loss on it.

    Returns:
        (dataset, truth, model) tuple
    """
    dataset, truth = synthesize_dataset(BENCHMARK)
    splits = split_dataset(dataset, seed=0)
    model, _ = train(splits.train, splits.val, BENCHMARK_TRAIN)
    return dataset, truth, model


@pytest.mark.slow
class TestRecovery:
    """GRN recovery and unseen-treatment prediction on the synthetic benchmark."""

    def test_edge_auroc(self, benchmark):
        """Test that edge probabilities rank true edges above non-edges."""
        _, truth, model = benchmark
        prob = torch.sigmoid(model.causal.logits).detach().numpy()
        assert edge_auroc(prob, truth) >= 0.80

    def test_mean_wd_beats_random_graph(self, benchmark):
        """Test that the inferred graph's edges shift their targets more than chance."""
        dataset, _, model = benchmark
        graph = extract_grn(model.causal, model.catalog, restrict='perturbed_only')
        inferred, _ = mean_wd(graph, dataset)
        wins = 0
        for seed in range(20):
            baseline, _ = mean_wd(degree_matched_random_graph(graph, seed), dataset)
            wins += bool(inferred > baseline)
        assert wins >= 18

    def test_unseen_hub(self):
        """Test that a held-out hub's response is predicted from the graph."""
        dataset, truth = synthesize_dataset(BENCHMARK)
        graph = graph_from_ground_truth(truth, dataset.catalog)
        perturbed = set(dataset.catalog.modeled_names[: dataset.catalog.n_perturbed])
        ranked = select_hubs(graph, k=graph.n_nodes)
        hub = next(gene for gene in ranked if gene in perturbed)
        config = dataclasses.replace(BENCHMARK_TRAIN, holdout=(hub,))
        splits = split_dataset(dataset, config.split_seed, config.holdout)
        model, _ = train(splits.train, splits.val, config)
        _, table = predict_unseen(model, hub, splits.test, n_particles=500)
        rho = ate_pearson(table['predicted_de'], table['observed_de'])
        assert np.isfinite(rho)
        assert rho >= 0.5

    def test_ablation_direction(self, benchmark):
        """Test that the full loss is sparser than dge_k_only and beats sp_only on mean WD."""
        dataset, _, _ = benchmark
        splits = split_dataset(dataset, seed=0)

        def fit(ablation, seed):
            config = dataclasses.replace(BENCHMARK_TRAIN, ablation=ablation, seed=seed)
            model, _ = train(splits.train, splits.val, config)
            return extract_grn(model.causal, model.catalog, restrict='perturbed_only')

        sparser = 0
        shifts_more = 0
        for seed in range(20):
            full = fit('full', seed)
            sparser += full.n_edges < fit('dge_k_only', seed).n_edges
            full_wd, _ = mean_wd(full, dataset)
            sp_wd, _ = mean_wd(fit('sp_only', seed), dataset)
            # nan when a graph has no scorable edge
            shifts_more += np.nan_to_num(full_wd) > np.nan_to_num(sp_wd)
        assert sparser >= 18
        assert shifts_more >= 18
