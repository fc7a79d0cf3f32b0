# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""
Readers and writers for the tab-separated file formats.

This module contains the per-value parsing helpers used to turn raw TSV
strings into validated counts, treatment labels, QC flags and catalog roles,
plus the edge-list format shared by ground-truth graphs and inferred GRNs.
Every parsing error names the file, row and column it came from.
"""

import logging
import re
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DatasetFormatError, EdgeListParseError

logger = logging.getLogger(__name__)

CONTROL_LABEL = 'control'
MULTI_GENE_SEPARATORS = ('+', ',', ';')

# Known catalog roles
ROLE_PERTURBED = 'perturbed'
ROLE_EXTENDED = 'extended'
ROLE_MEASURED = 'measured'
KNOWN_ROLES = {ROLE_PERTURBED, ROLE_EXTENDED, ROLE_MEASURED}

EDGE_DECIMALS = 6

# A count cell holds an optionally signed run of ASCII digits
INTEGER_TOKEN = re.compile(r'[+-]?[0-9]+')


def _read_lines(path: Path) -> list[str]:
    """
    Read a one-column, headerless TSV into a list of stripped strings.

    Args:
        path: File to read

    Returns:
        One string per line, blank trailing lines dropped
    """
    frame = pd.read_csv(
        path,
        sep='\t',
        header=None,
        dtype=str,
        keep_default_na=False,
        skip_blank_lines=True,
    )
    if frame.shape[1] != 1:
        raise DatasetFormatError(
            f'expected one column, found {frame.shape[1]}', path=path
        )
    return [value.strip() for value in frame.iloc[:, 0]]


def _parse_count(value: str, *, path: Path, row: int, column: str) -> int:
    """
    Convert one expression cell to a non-negative integer count.

    Args:
        value: Raw cell string
        path, row, column: Location used in the error message

    Returns:
        The count
    """
    if INTEGER_TOKEN.fullmatch(value.strip()) is None:
        raise DatasetFormatError(
            f'non-integer count {value!r}', path=path, row=row, column=column
        )
    count = int(value.strip())
    if count < 0:
        raise DatasetFormatError(
            f'negative count {count}', path=path, row=row, column=column
        )
    return count


def read_expression(path: Path) -> tuple[list[str], np.ndarray]:
    """Read the expression TSV: a header of gene names, one row per cell."""
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as f:
        names = [c.strip() for c in f.readline().rstrip('\r\n').split('\t')]
    if len(set(names)) != len(names):
        raise DatasetFormatError('duplicate gene names in header', path=path)
    try:
        frame = pd.read_csv(
            path, sep='\t', header=None, skiprows=1, dtype=str, keep_default_na=False
        )
    except pd.errors.EmptyDataError:
        return names, np.zeros((0, len(names)), dtype=np.int64)
    if frame.shape[1] != len(names):
        raise DatasetFormatError(
            f'{frame.shape[1]} columns for {len(names)} header names', path=path
        )

    tokens = frame.apply(lambda column: column.str.strip())
    valid = tokens.apply(lambda column: column.str.fullmatch(INTEGER_TOKEN.pattern))
    bad = ~valid.to_numpy(dtype=bool)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        # Delegate to the scalar parser for a precise message
        _parse_count(frame.iat[r, c], path=path, row=r + 1, column=names[c])
    counts = tokens.apply(pd.to_numeric).to_numpy(dtype=np.int64)
    if (counts < 0).any():
        r, c = np.argwhere(counts < 0)[0]
        _parse_count(frame.iat[r, c], path=path, row=r + 1, column=names[c])
    return names, counts


def read_treatments(path: Path) -> list[str]:
    """Read the treatment TSV: ``control`` or a gene name per line."""
    labels = _read_lines(Path(path))
    for i, label in enumerate(labels, start=1):
        if not label:
            raise DatasetFormatError('empty treatment label', path=path, row=i)
    return labels


def read_qc_flags(path: Path) -> np.ndarray:
    """Read the QC TSV: ``0`` (pass) or ``1`` (artifact) per line."""
    values = _read_lines(Path(path))
    flags = np.zeros(len(values), dtype=np.int64)
    for i, value in enumerate(values):
        if value not in ('0', '1'):
            raise DatasetFormatError(
                f'QC flag must be 0 or 1, got {value!r}', path=path, row=i + 1
            )
        flags[i] = int(value)
    return flags


def read_catalog(path: Path) -> list[tuple[str, str]]:
    """Read the catalog TSV: ``name<TAB>role`` per line."""
    path = Path(path)
    frame = pd.read_csv(
        path, sep='\t', header=None, dtype=str, keep_default_na=False
    )
    if frame.shape[1] != 2:
        raise DatasetFormatError(
            f'expected two columns (name, role), found {frame.shape[1]}',
            path=path,
        )
    entries = []
    for i, (name, role) in enumerate(frame.itertuples(index=False), start=1):
        role = role.strip().lower()
        if role not in KNOWN_ROLES:
            raise DatasetFormatError(
                f'unknown role {role!r}, expected one of {sorted(KNOWN_ROLES)}',
                path=path,
                row=i,
            )
        entries.append((name.strip(), role))
    return entries


def format_expression(names, counts: np.ndarray) -> str:
    return pd.DataFrame(np.asarray(counts, dtype=np.int64), columns=list(names)).to_csv(
        sep='\t', index=False, lineterminator='\n'
    )


def format_lines(values) -> str:
    return ''.join(f'{value}\n' for value in values)


def format_catalog(entries) -> str:
    return ''.join(f'{name}\t{role}\n' for name, role in entries)


def format_edge_list(
    edges, value_column: str = 'probability', decimals: int = EDGE_DECIMALS
) -> str:
    """Render ``(source, target, value)`` triples as an edge-list TSV string."""
    lines = [f'source\ttarget\t{value_column}']
    for source, target, value in edges:
        lines.append(f'{source}\t{target}\t{value:.{decimals}f}')
    return '\n'.join(lines) + '\n'


def parse_edge_list(
    text: str, value_column: str = 'probability'
) -> list[tuple[str, str, float]]:
    """
    Parse an edge-list TSV string.

    The first line must be the header. Duplicate ``(source, target)`` pairs
    and malformed lines raise EdgeListParseError with the line number.
    """
    lines = text.splitlines()
    if not lines:
        raise EdgeListParseError('missing header', line=1)
    expected = ['source', 'target', value_column]
    if lines[0].strip().split('\t') != expected:
        raise EdgeListParseError(
            f'header must be {"<TAB>".join(expected)!r}', line=1
        )

    edges = []
    seen = set()
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.rstrip('\n').split('\t')
        if len(parts) != 3:
            raise EdgeListParseError(
                f'expected 3 tab-separated fields, found {len(parts)}',
                line=number,
            )
        source, target, raw = (p.strip() for p in parts)
        try:
            value = float(raw)
        except ValueError:
            raise EdgeListParseError(f'invalid {value_column} {raw!r}', line=number)
        if (source, target) in seen:
            raise EdgeListParseError(
                f'duplicate edge {source} -> {target}', line=number
            )
        seen.add((source, target))
        edges.append((source, target, value))
    return edges
