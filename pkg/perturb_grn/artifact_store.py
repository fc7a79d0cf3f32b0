# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

import json
import math
from abc import ABC, abstractmethod

import numpy as np
import pandas as pd


def json_safe(value):
    """Recursively converts numpy scalars to Python and NaN/inf to None."""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return json_safe(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


class ArtifactStore(ABC):
    """Abstract Base Class defining the contract for any run-output store."""

    @abstractmethod
    def write_bytes(self, name: str, data: bytes):
        """Stores ``data`` under the relative name ``name``."""
        pass

    @abstractmethod
    def write_text(self, name: str, text: str):
        """Stores UTF-8 text with '\\n' line endings under ``name``."""
        pass

    def write_json(self, name: str, payload):
        self.write_text(
            name, json.dumps(json_safe(payload), indent=2, sort_keys=True) + '\n'
        )

    def write_json_lines(self, name: str, records):
        lines = [
            json.dumps(json_safe(r), sort_keys=True, separators=(',', ':'))
            for r in records
        ]
        self.write_text(name, ''.join(f'{line}\n' for line in lines))

    def write_table(self, name: str, frame: pd.DataFrame, float_format='%.6f'):
        self.write_text(
            name,
            frame.to_csv(
                sep='\t', index=False, lineterminator='\n', float_format=float_format
            ),
        )
