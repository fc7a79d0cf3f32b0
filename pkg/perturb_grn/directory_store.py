# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

import logging
from pathlib import Path

from .artifact_store import ArtifactStore

logger = logging.getLogger(__name__)


class DirectoryStore(ArtifactStore):
    def __init__(self, root: Path):
        """
        The output directory is created when the store is INSTANTIATED.
        """
        self._root = Path(root)
        try:
            self._root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.error(f'Cannot create output directory {self._root}: {e}')
            raise

    @property
    def root(self) -> Path:
        return self._root

    def path(self, name: str) -> Path:
        return self._root / name

    def write_bytes(self, name: str, data: bytes):
        target = self.path(name)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
            logger.debug(f'Wrote {len(data)} bytes to {target}.')
        except OSError as e:
            logger.error(f'Failed to write {target}: {e}')
            raise

    def write_text(self, name: str, text: str):
        self.write_bytes(name, text.encode('utf-8'))
