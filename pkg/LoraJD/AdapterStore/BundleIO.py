"""Adapter bundles, activation bundles and the .jdc compressed container.

Every payload on disk is row-major little-endian float32; everything in memory is float64.
"""
import json
import logging
import struct
import numpy as np
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from LoraJD.AdapterStore.CompressedCollection import CompressedCollection, CompressedGroup
from LoraJD.AdapterStore.LoraAdapter import AdapterCollection, LoraAdapter
from LoraJD.AdapterStore.Sigma import FULL, Sigma
from LoraJD.Errors import ArtifactError, BundleError


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MANIFEST = 'manifest.json'
MODULES = 'modules.json'
BUNDLE_VERSION = 1
STORAGE_DTYPE = np.dtype('<f4')

JDC_MAGIC = b'JDC\x00'.ljust(8, b'\x00')
JDC_VERSION = 1


# Adapter bundles
def _read_manifest(directory: Path) -> dict:
    manifest_path = directory / MANIFEST
    if not directory.is_dir():
        raise BundleError(f'bundle directory not found: {directory}')
    if not manifest_path.is_file():
        raise BundleError(f'missing manifest: {manifest_path}')
    try:
        manifest = json.loads(manifest_path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as error:
        raise BundleError(f'manifest is not valid JSON: {manifest_path}: {error}') from None
    if manifest.get('version') != BUNDLE_VERSION:
        raise BundleError(f'unsupported bundle version {manifest.get("version")!r} in {manifest_path}')
    return manifest


def _read_payload(path: Path, shape: Tuple[int, ...], owner: str) -> np.ndarray:
    """
    Reads a raw float32 payload and checks its size against the declared shape

    :param path: File holding the payload
    :param shape: Shape the manifest declares
    :param owner: Id named in error messages
    :exception BundleError: file missing, wrong size or non-finite values
    :return: float64 array of the declared shape
    """
    if not path.is_file():
        raise BundleError(f'adapter {owner!r}: payload file not found: {path}')
    flat = np.fromfile(path, dtype=STORAGE_DTYPE)
    expected = int(np.prod(shape))
    if flat.size != expected:
        raise BundleError(f'adapter {owner!r}: payload size mismatch in {path.name}: '
                          f'manifest declares {"x".join(map(str, shape))} = {expected} floats, file holds {flat.size}')
    if not np.all(np.isfinite(flat)):
        raise BundleError(f'adapter {owner!r}: non-finite values in {path.name}')
    return flat.astype(np.float64).reshape(shape)


def _write_payload(path: Path, matrix: np.ndarray) -> None:
    np.ascontiguousarray(matrix, dtype=STORAGE_DTYPE).tofile(path)


def load_collection(path: PathLike) -> AdapterCollection:
    """
    Loads an adapter bundle directory in manifest order

    :param path: Directory holding manifest.json and the raw payload files
    :exception BundleError: missing manifest, payload size mismatch or non-finite values
    :return: AdapterCollection with original_norm = ||B A||_F for every adapter
    """
    directory = Path(path)
    manifest = _read_manifest(directory)
    try:
        d_a = int(manifest['d_A'])
        d_b = int(manifest['d_B'])
        entries = list(manifest['adapters'])
    except (KeyError, TypeError, ValueError) as error:
        raise BundleError(f'malformed manifest in {directory}: {error}') from None

    adapters = []
    for entry in entries:
        adapter_id = str(entry['id'])
        rank = int(entry['rank'])
        if rank < 1:
            raise BundleError(f'adapter {adapter_id!r}: rank must be at least 1')
        b = _read_payload(directory / entry['b_file'], (d_b, rank), adapter_id)
        a = _read_payload(directory / entry['a_file'], (rank, d_a), adapter_id)
        adapters.append(LoraAdapter(adapter_id, b, a))
    logger.info('loaded %d adapters (%dx%d) from %s', len(adapters), d_b, d_a, directory)
    return AdapterCollection(adapters, d_a=d_a, d_b=d_b)


def save_bundle(collection: AdapterCollection, path: PathLike) -> None:
    """
    Writes a collection as an adapter bundle directory

    :param collection: Adapters to write; the current factors are stored, not the original norms
    :param path: Target directory, created when missing
    :return: None
    """
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for index, adapter in enumerate(collection):
        b_file, a_file = f'{index:05d}_b.bin', f'{index:05d}_a.bin'
        _write_payload(directory / b_file, adapter.b)
        _write_payload(directory / a_file, adapter.a)
        entries.append({'id': adapter.id, 'rank': adapter.rank, 'b_file': b_file, 'a_file': a_file})
    manifest = {'version': BUNDLE_VERSION, 'd_A': collection.d_a, 'd_B': collection.d_b, 'adapters': entries}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2), encoding='utf-8')


def resolve_module_bundles(path: PathLike) -> List[Path]:
    """
    Lists the per-module bundles of a model directory in modules.json order.

    A directory that is itself a bundle counts as a model with one module.

    :param path: Bundle directory or model directory holding modules.json
    :exception BundleError: neither a bundle nor a model directory
    :return: Bundle directories
    """
    directory = Path(path)
    if (directory / MANIFEST).is_file():
        return [directory]
    modules_path = directory / MODULES
    if not modules_path.is_file():
        raise BundleError(f'missing manifest: {directory / MANIFEST}')
    modules = json.loads(modules_path.read_text(encoding='utf-8'))
    if modules.get('version') != BUNDLE_VERSION or not modules.get('modules'):
        raise BundleError(f'malformed module list: {modules_path}')
    return [directory / name for name in modules['modules']]


# Activation bundles
def save_activations(path: PathLike, x: np.ndarray, adapter_ids: Sequence[str],
                     base_output: Optional[np.ndarray] = None) -> None:
    """
    Writes a b x l x d activation tensor with its per-row adapter ids

    :param path: Target directory, created when missing
    :param x: Tensor of shape (b, l, d)
    :param adapter_ids: One id per batch row
    :param base_output: Optional tensor added by the consumer, shape (b, l, d_out)
    :return: None
    """
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != len(adapter_ids):
        raise BundleError('activations must be b x l x d with one adapter id per row')
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {'version': BUNDLE_VERSION, 'shape': list(x.shape), 'adapter_ids': list(adapter_ids),
                'x_file': 'x.bin'}
    _write_payload(directory / 'x.bin', x)
    if base_output is not None:
        base_output = np.asarray(base_output)
        manifest['base_shape'] = list(base_output.shape)
        manifest['base_file'] = 'base.bin'
        _write_payload(directory / 'base.bin', base_output)
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2), encoding='utf-8')


def load_activations(path: PathLike) -> Tuple[np.ndarray, List[str], Optional[np.ndarray]]:
    """
    Reads an activation bundle written by save_activations

    :param path: Activation bundle directory
    :exception BundleError: missing manifest or payload size mismatch
    :return: Tuple (x, adapter_ids, base_output or None)
    """
    directory = Path(path)
    manifest = _read_manifest(directory)
    shape = tuple(int(size) for size in manifest['shape'])
    x = _read_payload(directory / manifest['x_file'], shape, 'activations')
    base = None
    if 'base_file' in manifest:
        base_shape = tuple(int(size) for size in manifest['base_shape'])
        base = _read_payload(directory / manifest['base_file'], base_shape, 'base_output')
    return x, [str(adapter_id) for adapter_id in manifest['adapter_ids']], base


# Compressed artifacts
def _artifact_header(compressed: CompressedCollection) -> dict:
    groups = []
    for group in compressed.groups:
        groups.append({'rank': group.rank, 'd_B': group.d_b, 'd_A': group.d_a, 'members': group.members})
    return {
        'mode': compressed.mode,
        'method': compressed.method,
        'normalized': compressed.normalized,
        'groups': groups,
        'assignment': compressed.assignment,
        'norms': compressed.norms,
    }


def save_compressed(compressed: CompressedCollection, path: PathLike) -> None:
    """
    Writes a compressed collection as a .jdc container: 8-byte magic, u32 version, u32 header
    length, JSON header, then float32 payloads (per group U, V, member Sigmas) in header order.

    Values are stored as float32; collections from CompressedCollection.rounded round-trip bit-exactly.

    :param compressed: Collection to write
    :param path: Target file
    :exception OSError: the file cannot be written
    :return: None
    """
    header = json.dumps(_artifact_header(compressed), separators=(',', ':')).encode('utf-8')
    with open(path, 'wb') as handle:
        handle.write(JDC_MAGIC)
        handle.write(struct.pack('<I', JDC_VERSION))
        handle.write(struct.pack('<I', len(header)))
        handle.write(header)
        for group in compressed.groups:
            handle.write(np.ascontiguousarray(group.u, dtype=STORAGE_DTYPE).tobytes())
            handle.write(np.ascontiguousarray(group.v, dtype=STORAGE_DTYPE).tobytes())
            for sigma in group.sigmas.values():
                handle.write(np.ascontiguousarray(sigma.values, dtype=STORAGE_DTYPE).tobytes())
    logger.info('wrote %s artifact with %d groups to %s', compressed.method, len(compressed.groups), path)


class _PayloadReader:
    """Sequential reader over the float32 payload section of a .jdc file"""

    def __init__(self, payload: bytes) -> None:
        self.__payload = payload
        self.__offset = 0

    def take(self, shape: Tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape))
        end = self.__offset + count * STORAGE_DTYPE.itemsize
        if end > len(self.__payload):
            raise ArtifactError('artifact payload is truncated')
        flat = np.frombuffer(self.__payload[self.__offset:end], dtype=STORAGE_DTYPE)
        self.__offset = end
        return flat.astype(np.float64).reshape(shape)

    def exhausted(self) -> bool:
        return self.__offset == len(self.__payload)


def load_compressed(path: PathLike) -> CompressedCollection:
    """
    Reads a .jdc container written by save_compressed

    :param path: Artifact file
    :exception ArtifactError: bad magic, unsupported version, malformed header or payload size mismatch
    :return: CompressedCollection
    """
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != JDC_MAGIC:
        raise ArtifactError(f'not a .jdc artifact: {path}')
    version, header_length = struct.unpack('<II', data[8:16])
    if version != JDC_VERSION:
        raise ArtifactError(f'unsupported version {version} in {path}')
    try:
        header = json.loads(data[16:16 + header_length].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise ArtifactError(f'malformed artifact header in {path}: {error}') from None

    reader = _PayloadReader(data[16 + header_length:])
    try:
        mode = header['mode']
        groups = []
        for entry in header['groups']:
            rank, d_b, d_a = int(entry['rank']), int(entry['d_B']), int(entry['d_A'])
            u = reader.take((d_b, rank))
            v = reader.take((d_a, rank))
            sigma_shape = (rank, rank) if mode == FULL else (rank,)
            sigmas: Dict[str, Sigma] = {}
            for adapter_id in entry['members']:
                sigmas[adapter_id] = Sigma(mode, reader.take(sigma_shape))
            groups.append(CompressedGroup(u, v, sigmas, mode))
        if not reader.exhausted():
            raise ArtifactError(f'artifact payload size mismatch in {path}')
        compressed = CompressedCollection(groups, header['assignment'], mode, norms=header['norms'],
                                          method=header['method'], normalized=header['normalized'])
    except ArtifactError:
        raise
    except (KeyError, TypeError, ValueError) as error:
        raise ArtifactError(f'malformed artifact header in {path}: {error!r}') from None
    logger.info('read %s artifact with %d groups from %s', compressed.method, len(groups), path)
    return compressed
