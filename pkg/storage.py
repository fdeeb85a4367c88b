"""
Storage module for the quaternion Wasserstein toolkit
Handles all file formats: JSON documents, JSON-lines reports, checkpoints,
distribution and sample files, and content hashes
"""

import hashlib
import json
import os
from typing import Dict, Iterable, List

import numpy as np

from services.errors import CheckpointVersionError, DimensionMismatchError, InputError

# File format configuration
FORMAT_VERSION = 1
JSON_INDENT = 2
REPORT_FILE = 'report.jsonl'
MANIFEST_FILE = 'manifest.json'
FINAL_CHECKPOINT = 'checkpoint_final.json'
SAMPLE_SUFFIX = '.json'


def checkpoint_name(iteration: int) -> str:
    """Get the checkpoint file name for an iteration."""
    return f'checkpoint_{iteration:06d}.json'


def _to_builtin(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f'Object of type {type(obj).__name__} is not JSON serializable')


def dumps_json(obj, indent: int = JSON_INDENT) -> str:
    """Serialize with sorted keys so equal content gives equal bytes."""
    return json.dumps(obj, sort_keys=True, indent=indent, default=_to_builtin)


def read_json(path: str) -> Dict:
    """Read a JSON document, reporting missing or malformed files as input errors."""
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f'File not found: {path}') from None
    except json.JSONDecodeError as exc:
        raise InputError(f'Malformed JSON in {path}: {exc}') from None


def write_json(path: str, obj, indent: int = JSON_INDENT) -> None:
    with open(path, 'w', encoding='utf-8') as fh:
        fh.write(dumps_json(obj, indent))
        fh.write('\n')


def write_jsonl(path: str, records: Iterable[Dict]) -> None:
    with open(path, 'w', encoding='utf-8') as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True, default=_to_builtin))
            fh.write('\n')


def read_jsonl(path: str) -> List[Dict]:
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except FileNotFoundError:
        raise InputError(f'File not found: {path}') from None
    except json.JSONDecodeError as exc:
        raise InputError(f'Malformed JSON line in {path}: {exc}') from None


def file_sha256(path: str) -> str:
    """Get the SHA-256 hex digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, 'rb') as fh:
        for chunk in iter(lambda: fh.read(65536), b''):
            digest.update(chunk)
    return digest.hexdigest()


def _require(doc: Dict, keys: Iterable[str], path: str) -> None:
    if not isinstance(doc, dict):
        raise InputError(f'{path} must hold a JSON object.')
    missing = [k for k in keys if k not in doc]
    if missing:
        raise InputError(f'{path} is missing field(s): {", ".join(missing)}')


def _int_field(doc: Dict, key: str, path: str, minimum: int = 1) -> int:
    """Get an integral field, rejecting strings, fractions and values below minimum."""
    value = doc[key]
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise InputError(f'{path}: {key} must be an integer, got {value!r}.') from None
    if isinstance(value, bool) or not number.is_integer() or number < minimum:
        raise InputError(f'{path}: {key} must be an integer >= {minimum}, got {value!r}.')
    return int(number)


def _float_array(value, key: str, path: str) -> np.ndarray:
    try:
        return np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise InputError(f'{path}: {key} must be numeric.') from None


def load_distribution_document(path: str) -> Dict:
    """
    Get a distribution file as arrays.

    Format: {dim, points: [[4*dim floats]], mass: [[w, x, y, z], ...] or [float, ...]}.
    """
    doc = read_json(path)
    _require(doc, ('dim', 'points', 'mass'), path)
    dim = _int_field(doc, 'dim', path)
    points = _float_array(doc['points'], 'points', path)
    mass = _float_array(doc['mass'], 'mass', path)
    if points.ndim != 2 or points.shape[1] != 4 * dim:
        raise DimensionMismatchError(f'{path}: every point needs {4 * dim} floats.')
    return {'dim': dim, 'points': points.reshape(points.shape[0], dim, 4), 'mass': mass}


def save_distribution(path: str, document: Dict) -> None:
    write_json(path, document)


def load_samples(path: str) -> np.ndarray:
    """
    Get samples from a sample file or from every sample file in a directory.

    Returns:
        np.ndarray: shape (N, dim, 4)
    """
    if os.path.isdir(path):
        files = sorted(f for f in os.listdir(path) if f.endswith(SAMPLE_SUFFIX))
        if not files:
            raise InputError(f'No sample files in directory {path}.')
        parts = [load_samples(os.path.join(path, f)) for f in files]
        dims = {p.shape[1] for p in parts}
        if len(dims) != 1:
            raise DimensionMismatchError(f'Sample files in {path} have different dimensions.')
        return np.concatenate(parts, axis=0)
    doc = read_json(path)
    _require(doc, ('dim', 'samples'), path)
    dim = _int_field(doc, 'dim', path, minimum=0)
    samples = _float_array(doc['samples'], 'samples', path)
    if samples.size == 0:
        return np.zeros((0, dim, 4))
    if samples.ndim != 2 or samples.shape[1] != 4 * dim:
        raise DimensionMismatchError(f'{path}: every sample needs {4 * dim} floats.')
    return samples.reshape(samples.shape[0], dim, 4)


def save_samples(path: str, samples: np.ndarray) -> None:
    samples = np.asarray(samples, dtype=float)
    write_json(path, {
        'format_version': FORMAT_VERSION,
        'dim': int(samples.shape[1]) if samples.ndim == 3 else 0,
        'samples': samples.reshape(samples.shape[0], -1).tolist(),
    })


def save_checkpoint(path: str, payload: Dict) -> None:
    write_json(path, dict(payload, format_version=FORMAT_VERSION))


def load_checkpoint(path: str) -> Dict:
    doc = read_json(path)
    _require(doc, ('format_version', 'noise_dim', 'dataset', 'networks'), path)
    check_checkpoint_version(doc)
    return doc


def check_checkpoint_version(doc: Dict) -> None:
    if doc.get('format_version') != FORMAT_VERSION:
        raise CheckpointVersionError(
            f'Checkpoint format version {doc.get("format_version")} is not supported '
            f'(expected {FORMAT_VERSION}).'
        )


def load_matrix(path: str) -> np.ndarray:
    """Get a dense real matrix stored as a JSON list of rows (or {"values": rows})."""
    doc = read_json(path)
    rows = doc['values'] if isinstance(doc, dict) and 'values' in doc else doc
    try:
        matrix = np.array(rows, dtype=float, ndmin=2)
    except (TypeError, ValueError):
        raise InputError(f'{path}: matrix must be a list of numeric rows.') from None
    if matrix.ndim != 2:
        raise DimensionMismatchError(f'{path}: expected a 2-D matrix.')
    return matrix


def load_qlp_document(path: str) -> Dict:
    """Get {upsilon, b, C} arrays; b may be real floats or [w, x, y, z] rows."""
    doc = read_json(path)
    _require(doc, ('upsilon', 'b'), path)
    try:
        upsilon = np.array(doc['upsilon'], dtype=float, ndmin=2)
        b = np.asarray(doc['b'], dtype=float)
        cost = np.asarray(doc['C'], dtype=float) if 'C' in doc else None
    except (TypeError, ValueError):
        raise InputError(f'{path}: upsilon, b and C must be numeric.') from None
    if upsilon.ndim != 2:
        raise DimensionMismatchError(f'{path}: upsilon must be a 2-D matrix.')
    if b.ndim == 1:
        b = np.column_stack([b, np.zeros((b.size, 3))])
    return {'upsilon': upsilon, 'b': b, 'C': cost}


def load_box_document(path: str) -> Dict:
    """
    Get a box-and-point file as arrays.

    Format: {dim, upper: [w, x, y, z], lower: [w, x, y, z] (optional, zeros), y: [[w, x, y, z], ...]}.
    """
    doc = read_json(path)
    _require(doc, ('dim', 'upper', 'y'), path)
    dim = _int_field(doc, 'dim', path)
    bounds = {}
    for key in ('upper', 'lower'):
        bounds[key] = _float_array(doc.get(key, (0.0, 0.0, 0.0, 0.0)), key, path)
        if bounds[key].shape != (4,):
            raise InputError(f'{path}: {key} must list four numbers (w, x, y, z).')
    y = _float_array(doc['y'], 'y', path)
    if y.shape != (dim, 4):
        raise DimensionMismatchError(f'{path}: y must hold {dim} quaternions of four floats.')
    return {'dim': dim, 'upper': tuple(bounds['upper']), 'lower': tuple(bounds['lower']), 'y': y}
