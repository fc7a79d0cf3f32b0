# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""PerturbGrn - gene regulatory networks from perturbation single-cell data."""

__version__ = '0.1.0'

from .cli import cli_entrypoint  # noqa: E402
from .dataset import GeneCatalog, PerturbDataset, load_dataset  # noqa: E402
from .grn import GrnGraph, extract_grn  # noqa: E402
from .model import ModelState  # noqa: E402
from .trainer import load_checkpoint, train  # noqa: E402

__all__ = [
    '__version__',
    'cli_entrypoint',
    'GeneCatalog',
    'PerturbDataset',
    'load_dataset',
    'GrnGraph',
    'extract_grn',
    'ModelState',
    'train',
    'load_checkpoint',
]
