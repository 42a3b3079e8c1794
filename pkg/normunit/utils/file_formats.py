# normunit/utils/file_formats.py
"""
On-disk formats.

Feature file: magic ``NUFT``, uint16 version, uint32 T, uint32 D, then T*D
little-endian float32 values, row-major.
Units file: one utterance per line, space-separated decimal tokens; ids in a
sibling ``.ids`` file in the same order.
Codebook file: header ``K D`` then K rows of D decimals.
Manifest and reports: tab-separated with a header row.
"""
import csv
import json
import logging
import struct
from pathlib import Path

import numpy as np

from normunit.models.codebook import Codebook
from normunit.utils.errors import DataError

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b'NUFT'
FEATURE_VERSION = 1

MANIFEST_COLUMNS = ['id', 'split', 'language', 'speaker', 'features', 'units', 'provenance', 'score']


def write_features(path, features):
    features = np.asarray(features, dtype='<f4')
    if features.ndim != 2:
        raise DataError(f"Features must be a T x D matrix, got shape {features.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = FEATURE_MAGIC + struct.pack('<HII', FEATURE_VERSION, features.shape[0], features.shape[1])
    path.write_bytes(header + features.tobytes())


def read_features(path):
    """
    Read a feature file.

    Raises:
        DataError: On bad magic, unknown version or a truncated body
    """
    payload = Path(path).read_bytes()
    if payload[:4] != FEATURE_MAGIC:
        raise DataError(f"{path} is not a feature file")
    try:
        version, frames, dim = struct.unpack_from('<HII', payload, 4)
    except struct.error:
        raise DataError(f"{path} has a truncated header")
    if version != FEATURE_VERSION:
        raise DataError(f"{path} has unsupported feature version {version}")
    body = payload[14:]
    if len(body) != 4 * frames * dim:
        raise DataError(f"{path} body has {len(body)} bytes, expected {4 * frames * dim}")
    return np.frombuffer(body, dtype='<f4').astype(np.float64).reshape(frames, dim)


def write_units(path, sequences, ids=None):
    """Write unit sequences (and optionally their ids to ``<path>.ids``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        for units in sequences:
            handle.write(' '.join(str(int(unit)) for unit in units) + '\n')
    if ids is not None:
        with open(ids_path(path), 'w', encoding='utf-8', newline='\n') as handle:
            for utterance_id in ids:
                handle.write(f"{utterance_id}\n")


def read_units(path):
    with open(path, encoding='utf-8') as handle:
        return [[int(token) for token in line.split()] for line in handle.read().split('\n')[:-1]]


def ids_path(path):
    path = Path(path)
    return path.with_name(path.name + '.ids')


def read_unit_table(path):
    """Units file plus its ids as an ordered ``id -> units`` mapping."""
    sequences = read_units(path)
    with open(ids_path(path), encoding='utf-8') as handle:
        ids = handle.read().split('\n')[:-1]
    if len(ids) != len(sequences):
        raise DataError(f"{path} has {len(sequences)} sequences but {len(ids)} ids")
    return dict(zip(ids, sequences))


def write_unit_table(path, table):
    write_units(path, table.values(), ids=table.keys())


def write_codebook(path, codebook):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{codebook.k} {codebook.dim}"]
    lines.extend(' '.join(repr(float(value)) for value in row) for row in codebook.centroids)
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')


def read_codebook(path):
    lines = Path(path).read_text(encoding='utf-8').split('\n')
    try:
        k, dim = (int(value) for value in lines[0].split())
        rows = [[float(value) for value in line.split()] for line in lines[1:1 + k]]
    except ValueError as e:
        raise DataError(f"{path} is not a codebook file: {str(e)}")
    centroids = np.asarray(rows)
    if centroids.shape != (k, dim):
        raise DataError(f"{path} declares {k} x {dim} centroids, found {centroids.shape}")
    return Codebook(centroids, min_k=1)


def write_tsv(path, columns, rows, exact_columns=()):
    """
    Write dictionaries as a tab-separated table with a header.

    Floats print with four decimals except in ``exact_columns``, which keep
    the shortest round-tripping representation.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, delimiter='\t', lineterminator='\n',
                                extrasaction='ignore')
        writer.writeheader()
        for row in rows:
            writer.writerow({column: _cell(row.get(column), column in exact_columns) for column in columns})


def _cell(value, exact=False):
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value) if exact else f"{value:.4f}"
    if isinstance(value, (list, tuple)):
        return ' '.join(str(item) for item in value)
    return str(value)


def read_tsv(path):
    with open(path, encoding='utf-8', newline='') as handle:
        return list(csv.DictReader(handle, delimiter='\t'))


def write_json(path, payload):
    """Canonical JSON (sorted keys, fixed separators) so equal payloads hash equally."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + '\n', encoding='utf-8')


def read_json(path):
    return json.loads(Path(path).read_text(encoding='utf-8'))
