# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""
Configuration dataclasses for simulation, training and evaluation.

Configs are frozen; CLI flags override file values through
``dataclasses.replace``. A config read from a JSON file must name every
field so that a run can be reproduced from the file alone.
"""

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, TypeVar

from .errors import ConfigError

logger = logging.getLogger(__name__)

C = TypeVar('C', bound='_ConfigBase')


class Ablation(str, Enum):
    """Which graph-prior components enter the total loss."""

    FULL = 'full'  # j_dge_k + j_sp
    SP_ONLY = 'sp_only'  # j_sp
    DGE_ONLY = 'dge_only'  # j_dge with K = 1
    DGE_K_ONLY = 'dge_k_only'  # j_dge_k

    def __str__(self):
        return self.value


class _ConfigBase:
    """Shared (de)serialization and hashing for the config dataclasses."""

    @classmethod
    def from_dict(cls: type[C], data: dict, *, require_all: bool = False) -> C:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(
                f'Unknown {cls.__name__} field(s): {", ".join(unknown)}'
            )
        if require_all:
            missing = [f.name for f in dataclasses.fields(cls) if f.name not in data]
            if missing:
                raise ConfigError(
                    f'Missing {cls.__name__} field(s): {", ".join(missing)}'
                )
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name in data:
                kwargs[f.name] = _coerce(f, data[f.name])
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(f'Invalid {cls.__name__}: {e}') from e

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Enum):
                value = value.value
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def _coerce(f: dataclasses.Field, value):
    if f.name == 'ablation':
        return _coerce_ablation(value)
    if isinstance(value, list):
        return tuple(value)
    return value


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True)
class SimulationConfig(_ConfigBase):
    """Parameters of the synthetic Perturb-Seq-like generator."""

    n_perturbed: int = 8
    n_extended: int = 4
    n_measured: int = 0
    n_cells: int = 1200
    edge_density: float = 0.15
    knockdown_strength: float = 0.8
    artifact_rate: float = 0.1
    dispersion: float = 5.0
    control_fraction: float = 0.2
    library_size: float = 5000.0
    effect_attenuation: float = 0.8
    seed: int = 0

    def __post_init__(self):
        _require(self.n_perturbed >= 1, 'n_perturbed must be >= 1')
        _require(self.n_extended >= 0, 'n_extended must be >= 0')
        _require(self.n_measured >= 0, 'n_measured must be >= 0')
        _require(
            self.n_cells >= 2 * self.n_perturbed,
            f'n_cells ({self.n_cells}) must be >= 2 * n_perturbed '
            f'({2 * self.n_perturbed})',
        )
        _require(
            0.0 < self.edge_density < 1.0, 'edge_density must lie in (0, 1)'
        )
        _require(
            0.0 <= self.knockdown_strength < 1.0,
            'knockdown_strength must lie in [0, 1)',
        )
        _require(0.0 <= self.artifact_rate <= 1.0, 'artifact_rate must lie in [0, 1]')
        _require(self.dispersion > 0, 'dispersion must be positive')
        _require(
            0.0 < self.control_fraction < 1.0, 'control_fraction must lie in (0, 1)'
        )
        _require(self.library_size > 0, 'library_size must be positive')
        _require(
            0.0 < self.effect_attenuation <= 1.0,
            'effect_attenuation must lie in (0, 1]',
        )


@dataclass(frozen=True)
class TrainConfig(_ConfigBase):
    """Training and architecture settings."""

    epochs: int = 200
    batch_size: int = 512
    learning_rate: float = 3e-4
    clip_norm: float = 100.0
    latent_dim: int = 16
    encoder_layers: int = 4
    encoder_width: int = 400
    decoder_layers: int = 1
    effect_width: int = 64
    k_hops: int = 5
    alpha: float = 1.0
    beta: float = 5.0
    kl_weight: float = 0.1
    mask_prior: float = 0.3
    temperature_start: float = 1.0
    temperature_end: float = 0.1
    anneal_fraction: float = 0.5
    ablation: Ablation = Ablation.FULL
    holdout: tuple[str, ...] = ()
    split_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.ablation, Ablation):
            object.__setattr__(self, 'ablation', _coerce_ablation(self.ablation))
        object.__setattr__(self, 'holdout', tuple(self.holdout))
        _require(self.epochs >= 0, 'epochs must be >= 0')
        for name in (
            'batch_size',
            'latent_dim',
            'encoder_layers',
            'encoder_width',
            'decoder_layers',
            'effect_width',
            'k_hops',
        ):
            _require(getattr(self, name) >= 1, f'{name} must be >= 1')
        for name in ('learning_rate', 'clip_norm', 'temperature_end'):
            _require(getattr(self, name) > 0, f'{name} must be positive')
        for name in ('alpha', 'beta', 'kl_weight'):
            _require(getattr(self, name) >= 0, f'{name} must be >= 0')
        _require(0.0 < self.mask_prior < 1.0, 'mask_prior must lie in (0, 1)')
        _require(
            self.temperature_start >= self.temperature_end,
            'temperature_start must be >= temperature_end',
        )
        _require(
            0.0 <= self.anneal_fraction <= 1.0, 'anneal_fraction must lie in [0, 1]'
        )

    def model_hash(self) -> str:
        """Hash of the fields that determine the parameter layout."""
        keys = (
            'latent_dim',
            'encoder_layers',
            'encoder_width',
            'decoder_layers',
            'effect_width',
            'mask_prior',
        )
        canonical = json.dumps({k: getattr(self, k) for k in keys}, sort_keys=True)
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def _coerce_ablation(value) -> Ablation:
    try:
        return Ablation(value)
    except ValueError:
        choices = ', '.join(a.value for a in Ablation)
        raise ConfigError(f'ablation must be one of {choices}, got {value!r}')


@dataclass(frozen=True)
class EvalConfig(_ConfigBase):
    """Settings for prediction, GRN extraction and metrics."""

    k_top: int = 50
    n_particles: int = 2500
    threshold: float = 0.5
    restrict: str = 'perturbed_only'
    hub_threshold: float = 0.3
    n_hubs: int = 3
    n_negatives: int = 500
    for_alpha: float = 0.05
    min_perturbed_rows: int = 10
    seed: int = 0

    def __post_init__(self):
        _require(self.k_top >= 1, 'k_top must be >= 1')
        _require(self.n_particles >= 1, 'n_particles must be >= 1')
        _require(0.0 < self.threshold < 1.0, 'threshold must lie in (0, 1)')
        _require(
            self.restrict in ('all', 'perturbed_only'),
            "restrict must be 'all' or 'perturbed_only'",
        )
        _require(self.n_negatives >= 1, 'n_negatives must be >= 1')
        _require(0.0 < self.for_alpha < 1.0, 'for_alpha must lie in (0, 1)')
