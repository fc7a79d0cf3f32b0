# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""Tests for the training loop and checkpoints."""

import io

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from perturb_grn import trainer
from perturb_grn.config import SimulationConfig
from perturb_grn.dataset import split_dataset
from perturb_grn.errors import CheckpointError, ConfigError, TrainingDivergedError
from perturb_grn.synthetic import synthesize_dataset
from perturb_grn.trainer import (
    BEST_CHECKPOINT,
    DIVERGED_CHECKPOINT,
    FINAL_CHECKPOINT,
    clip_gradients,
    load_checkpoint,
    prepare_training_data,
    save_checkpoint,
    temperature_at,
    train,
)
from tests.mock_store import MockStore
from tests.toy_data import tiny_dataset, tiny_model, tiny_train_config


@pytest.fixture(scope='module')
def splits():
    dataset, _ = tiny_dataset()
    return split_dataset(dataset, seed=0)


def _same_state(first, second) -> bool:
    return all(
        torch.equal(a, b)
        for a, b in zip(first.state_dict().values(), second.state_dict().values())
    )


class TestSchedule:
    """Tests for temperature_at and clip_gradients."""

    def test_linear_anneal_then_hold(self):
        config = tiny_train_config(
            epochs=10, temperature_start=1.0, temperature_end=0.2, anneal_fraction=0.5
        )
        assert temperature_at(0, config) == pytest.approx(1.0)
        assert temperature_at(2, config) == pytest.approx(0.68)
        assert temperature_at(5, config) == pytest.approx(0.2)
        assert temperature_at(9, config) == pytest.approx(0.2)

    def test_no_annealing(self):
        config = tiny_train_config(anneal_fraction=0.0, temperature_end=0.3)
        assert temperature_at(0, config) == 0.3

    def test_clip_scales_global_norm(self):
        grads = clip_gradients([torch.tensor([3.0]), torch.tensor([4.0])], 1.0)
        assert [float(g) for g in grads] == pytest.approx([0.6, 0.8])

    def test_clip_leaves_small_gradients(self):
        grads = [torch.tensor([0.3, 0.4])]
        assert torch.equal(clip_gradients(grads, 1.0)[0], grads[0])

    def test_clip_rejects_non_positive_norm(self):
        with pytest.raises(ValueError):
            clip_gradients([torch.tensor([1.0])], 0.0)


class TestTrain:
    """Tests for train."""

    def test_writes_checkpoints_and_histories(self, splits):
        store = MockStore()
        model, history = train(splits.train, splits.val, tiny_train_config(), store=store)
        assert len(history) == 2
        # 96 rows in batches of 32
        assert [r['step'] for r in history.steps] == list(range(6))
        assert history.best_epoch in (0, 1)
        assert {FINAL_CHECKPOINT, BEST_CHECKPOINT, 'history.jsonl', 'epochs.jsonl'} <= set(
            store.files
        )
        epochs = store.json_lines('epochs.jsonl')
        assert [e['epoch'] for e in epochs] == [0, 1]
        assert 'val_elbo' in epochs[0]
        assert model.is_finite()

    def test_deterministic(self, splits):
        config = tiny_train_config(epochs=1)
        first, _ = train(splits.train, splits.val, config)
        second, _ = train(splits.train, splits.val, config)
        assert _same_state(first, second)

    def test_updates_causal_logits(self, splits):
        config = tiny_train_config(epochs=1, learning_rate=1e-2)
        model, _ = train(splits.train, None, config)
        initial = tiny_model(config, splits.train.catalog)
        assert not torch.equal(model.causal.logits, initial.causal.logits)

    def test_zero_epochs_still_writes_checkpoints(self, splits):
        store = MockStore()
        _, history = train(splits.train, splits.val, tiny_train_config(epochs=0), store=store)
        assert len(history) == 0
        assert {FINAL_CHECKPOINT, BEST_CHECKPOINT} <= set(store.files)

    def test_empty_split(self, splits):
        with pytest.raises(ConfigError):
            train(splits.train.subset([]), None, tiny_train_config())

    def test_divergence_keeps_last_finite_state(self, splits, monkeypatch):
        original = trainer.batch_loss
        calls = []

        def exploding(*args, **kwargs):
            breakdown = original(*args, **kwargs)
            calls.append(1)
            if len(calls) == 2:
                breakdown.total = breakdown.total * float('nan')
            return breakdown

        monkeypatch.setattr(trainer, 'batch_loss', exploding)
        store = MockStore()
        with pytest.raises(TrainingDivergedError) as excinfo:
            train(splits.train, splits.val, tiny_train_config(), store=store)
        assert excinfo.value.step == 1
        assert all(torch.isfinite(v).all() for v in excinfo.value.state.values())
        assert DIVERGED_CHECKPOINT in store.files

    def test_non_finite_gradient_stops_before_the_step(self, splits, monkeypatch):
        """Test that a NaN gradient with a finite loss raises before Adam updates."""
        original = trainer.clip_gradients

        def poisoned(grads, max_norm):
            clipped = original(grads, max_norm)
            clipped[0] = torch.full_like(clipped[0], float('nan'))
            return clipped

        monkeypatch.setattr(trainer, 'clip_gradients', poisoned)
        config = tiny_train_config()
        store = MockStore()
        with pytest.raises(TrainingDivergedError, match='gradient is not finite') as excinfo:
            train(splits.train, splits.val, config, store=store)

        assert excinfo.value.step == 0
        state = excinfo.value.state
        assert all(torch.isfinite(v).all() for v in state.values())
        initial = tiny_model(config, splits.train.catalog)
        assert torch.equal(state['causal.logits'], initial.causal.logits)
        assert DIVERGED_CHECKPOINT in store.files
        assert FINAL_CHECKPOINT not in store.files

    def test_prepare_training_data_excludes_controls(self, splits):
        data = prepare_training_data(splits.train)
        controls = splits.train.control_rows()
        assert data.excluded[controls].all()
        assert data.batch([0, 1]).size == 2


class TestCheckpoint:
    """Tests for save_checkpoint and load_checkpoint."""

    def test_round_trip(self, tmp_path):
        config = tiny_train_config(seed=5)
        model = tiny_model(config)
        path = tmp_path / 'model.ckpt'
        save_checkpoint(path, model, config)
        loaded, loaded_config = load_checkpoint(path)
        assert loaded_config == config
        assert loaded.catalog == model.catalog
        assert _same_state(loaded, model)

    def test_matching_config_accepted(self, tmp_path):
        config = tiny_train_config()
        path = tmp_path / 'model.ckpt'
        save_checkpoint(path, tiny_model(config), config)
        _, loaded_config = load_checkpoint(path, config)
        assert loaded_config is config

    def test_config_hash_mismatch(self, tmp_path):
        config = tiny_train_config()
        path = tmp_path / 'model.ckpt'
        save_checkpoint(path, tiny_model(config), config)
        with pytest.raises(CheckpointError, match='hash mismatch'):
            load_checkpoint(path, tiny_train_config(beta=1.0))

    @pytest.mark.parametrize(
        'change, differs',
        [
            ({'beta': 1.0}, 'training settings'),
            ({'seed': 3}, 'training settings'),
            ({'latent_dim': 4}, 'model layout'),
            ({'encoder_width': 16}, 'model layout'),
        ],
    )
    def test_mismatch_names_what_differs(self, tmp_path, change, differs):
        """Test that a mismatch tells a layout change from a settings change."""
        config = tiny_train_config()
        path = tmp_path / 'model.ckpt'
        save_checkpoint(path, tiny_model(config), config)
        with pytest.raises(CheckpointError, match=f'{differs} differ'):
            load_checkpoint(path, tiny_train_config(**change))

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / 'model.ckpt'
        path.write_bytes(b'not a checkpoint')
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        buffer = io.BytesIO()
        torch.save({'format_version': 99}, buffer)
        path = tmp_path / 'model.ckpt'
        path.write_bytes(buffer.getvalue())
        with pytest.raises(CheckpointError, match='format version 99'):
            load_checkpoint(path)


@pytest.mark.slow
class TestRecovery:
    """Training against a single strong regulatory edge."""

    def test_strong_edge_rises_above_median(self):
        """Test that the only true edge ends above the median edge probability."""
        dataset, truth = synthesize_dataset(
            SimulationConfig(
                n_perturbed=6,
                n_extended=0,
                n_measured=0,
                n_cells=3000,
                edge_density=1 / 15,
                knockdown_strength=0.9,
                artifact_rate=0.0,
                seed=1,
            )
        )
        ((source, target),) = truth.edge_set
        splits = split_dataset(dataset, seed=0)
        config = tiny_train_config(epochs=500, batch_size=256, learning_rate=3e-3)
        model, _ = train(splits.train, splits.val, config)

        prob = torch.sigmoid(model.causal.logits).detach().numpy()
        off_diagonal = prob[~np.eye(len(prob), dtype=bool)]
        assert prob[source, target] > np.median(off_diagonal)


class TestClipProperties:
    """Clipping invariants over random gradient sets."""

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(
            st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=5),
            min_size=1,
            max_size=4,
        ),
        st.floats(1e-3, 1e3),
    )
    def test_post_clip_norm(self, values, max_norm):
        grads = [torch.tensor(v, dtype=torch.float64) for v in values]
        before = float(torch.sqrt(sum((g**2).sum() for g in grads)))
        after = float(
            torch.sqrt(sum((g**2).sum() for g in clip_gradients(grads, max_norm)))
        )
        assert after == pytest.approx(min(before, max_norm), rel=1e-9, abs=1e-9)

    def test_exact_halving(self):
        grads = [torch.tensor([120.0, 160.0], dtype=torch.float64)]
        (clipped,) = clip_gradients(grads, 100.0)
        assert clipped.tolist() == pytest.approx([60.0, 80.0])
