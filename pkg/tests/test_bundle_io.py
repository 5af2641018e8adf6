import json
import struct

import numpy as np
import pytest

from LoraJD.AdapterStore.BundleIO import (JDC_MAGIC, JDC_VERSION, load_activations, load_collection, load_compressed,
                                          resolve_module_bundles, save_activations, save_bundle, save_compressed)
from LoraJD.AdapterStore.LoraAdapter import AdapterCollection, LoraAdapter
from LoraJD.AdapterStore.Sigma import DIAGONAL, FULL
from LoraJD.Clustering.ClusterOptions import ClusterOptions
from LoraJD.Clustering.Clustering import cluster_solve
from LoraJD.Errors import ArtifactError, BundleError
from LoraJD.JointDiagonalization.SolveOptions import SolveOptions
from LoraJD.JointDiagonalization.Solver import solve_collection
from LoraJD.Metrics.Reconstruction import relative_recon_error


def _float32_adapters(adapters):
    """Collection whose factors survive float32 storage unchanged"""
    return AdapterCollection([LoraAdapter(adapter.id, adapter.b.astype(np.float32), adapter.a.astype(np.float32))
                              for adapter in adapters])


def test_bundle_round_trip(tmp_path, make_random_adapters):
    adapters = _float32_adapters(make_random_adapters(4, 6, 2, d_b=5, ranks=[1, 2, 3, 2]))
    save_bundle(adapters, tmp_path / 'bundle')
    loaded = load_collection(tmp_path / 'bundle')
    assert loaded.ids == adapters.ids
    assert (loaded.d_a, loaded.d_b) == (6, 5)
    for original, restored in zip(adapters, loaded):
        np.testing.assert_array_equal(original.b, restored.b)
        np.testing.assert_array_equal(original.a, restored.a)
        assert restored.original_norm == pytest.approx(original.original_norm, rel=1e-12)


def test_loaded_norms_match_dense_products(tmp_path, make_random_adapters):
    save_bundle(make_random_adapters(10, 32, 4, seed=0), tmp_path / 'bundle')
    loaded = load_collection(tmp_path / 'bundle')
    assert len(loaded) == 10
    for adapter in loaded:
        dense = np.linalg.norm(adapter.b @ adapter.a)
        assert adapter.original_norm == pytest.approx(dense, rel=1e-12)


def test_missing_bundle_names_path(tmp_path):
    with pytest.raises(BundleError, match='not found'):
        load_collection(tmp_path / 'absent')
    (tmp_path / 'empty').mkdir()
    with pytest.raises(BundleError, match='missing manifest'):
        load_collection(tmp_path / 'empty')


def test_payload_size_mismatch(tmp_path, make_random_adapters):
    save_bundle(make_random_adapters(2, 6, 2), tmp_path)
    manifest = json.loads((tmp_path / 'manifest.json').read_text())
    manifest['adapters'][1]['rank'] = 3
    (tmp_path / 'manifest.json').write_text(json.dumps(manifest))
    with pytest.raises(BundleError, match="adapter-001.*size mismatch"):
        load_collection(tmp_path)


def test_non_finite_payload_names_adapter(tmp_path, make_random_adapters):
    save_bundle(make_random_adapters(2, 4, 1), tmp_path)
    values = np.fromfile(tmp_path / '00001_a.bin', dtype='<f4')
    values[0] = np.nan
    values.tofile(tmp_path / '00001_a.bin')
    with pytest.raises(BundleError, match='adapter-001'):
        load_collection(tmp_path)


def test_model_directory_lists_modules(tmp_path, make_random_adapters):
    for name in ('layer0', 'layer1', 'layer2'):
        save_bundle(make_random_adapters(2, 4, 1), tmp_path / name)
    (tmp_path / 'modules.json').write_text(json.dumps({'version': 1, 'modules': ['layer0', 'layer1', 'layer2']}))
    assert [path.name for path in resolve_module_bundles(tmp_path)] == ['layer0', 'layer1', 'layer2']
    assert resolve_module_bundles(tmp_path / 'layer1') == [tmp_path / 'layer1']


@pytest.mark.parametrize('mode', [FULL, DIAGONAL])
def test_artifact_round_trip_is_bit_exact(tmp_path, make_random_adapters, mode):
    adapters = make_random_adapters(5, 8, 2, seed=4)
    compressed, _ = solve_collection(adapters, SolveOptions(rank=3, mode=mode))
    rounded = compressed.rounded()
    save_compressed(rounded, tmp_path / 'out.jdc')
    loaded = load_compressed(tmp_path / 'out.jdc')
    assert (loaded.mode, loaded.method, loaded.normalized) == (rounded.mode, rounded.method, rounded.normalized)
    assert loaded.assignment == rounded.assignment
    assert loaded.norms == rounded.norms
    for before, after in zip(rounded.groups, loaded.groups):
        np.testing.assert_array_equal(before.u, after.u)
        np.testing.assert_array_equal(before.v, after.v)
        assert before.sigmas == after.sigmas


def test_clustered_artifact_round_trip(tmp_path, make_planted_families):
    adapters, _ = make_planted_families(2, 4, 12, 2)
    compressed, _ = cluster_solve(adapters, ClusterOptions(k=2, per_cluster=SolveOptions(rank=2)))
    save_compressed(compressed, tmp_path / 'c.jdc')
    loaded = load_compressed(tmp_path / 'c.jdc')
    assert loaded.method == 'clustered'
    assert loaded.assignment == compressed.assignment
    assert [group.members for group in loaded.groups] == [group.members for group in compressed.groups]


def test_reconstruction_errors_survive_round_trip(tmp_path, make_planted_families):
    adapters, _ = make_planted_families(2, 4, 12, 2, seed=1)
    compressed, _ = cluster_solve(adapters, ClusterOptions(k=2, per_cluster=SolveOptions(rank=2)))
    rounded = compressed.rounded()
    save_compressed(rounded, tmp_path / 'c.jdc')
    before, _ = relative_recon_error(adapters, rounded)
    after, _ = relative_recon_error(adapters, load_compressed(tmp_path / 'c.jdc'))
    assert len(rounded.groups) == 2
    assert after == before


def test_artifact_rejects_bad_files(tmp_path, make_random_adapters):
    (tmp_path / 'junk.jdc').write_bytes(b'not an artifact at all')
    with pytest.raises(ArtifactError, match='not a .jdc artifact'):
        load_compressed(tmp_path / 'junk.jdc')

    compressed, _ = solve_collection(make_random_adapters(3, 6, 1), SolveOptions(rank=2))
    save_compressed(compressed, tmp_path / 'good.jdc')
    data = (tmp_path / 'good.jdc').read_bytes()

    (tmp_path / 'future.jdc').write_bytes(JDC_MAGIC + (99).to_bytes(4, 'little') + data[12:])
    with pytest.raises(ArtifactError, match='unsupported version 99'):
        load_compressed(tmp_path / 'future.jdc')

    (tmp_path / 'short.jdc').write_bytes(data[:-4])
    with pytest.raises(ArtifactError):
        load_compressed(tmp_path / 'short.jdc')

    (tmp_path / 'long.jdc').write_bytes(data + b'\x00' * 4)
    with pytest.raises(ArtifactError, match='size mismatch'):
        load_compressed(tmp_path / 'long.jdc')


@pytest.mark.parametrize('header', [{'mode': 'full', 'groups': []},
                                    {'mode': 'full', 'groups': [{'rank': 1}]},
                                    {'groups': []}])
def test_incomplete_header_is_an_artifact_error(tmp_path, header):
    text = json.dumps(header).encode('utf-8')
    (tmp_path / 'bad.jdc').write_bytes(JDC_MAGIC + struct.pack('<II', JDC_VERSION, len(text)) + text)
    with pytest.raises(ArtifactError, match='malformed artifact header'):
        load_compressed(tmp_path / 'bad.jdc')


def test_activation_round_trip(tmp_path, rng):
    x = rng.standard_normal((3, 2, 4)).astype(np.float32)
    base = rng.standard_normal((3, 2, 5)).astype(np.float32)
    save_activations(tmp_path / 'acts', x, ['a', 'b', 'a'], base_output=base)
    loaded_x, ids, loaded_base = load_activations(tmp_path / 'acts')
    np.testing.assert_array_equal(loaded_x, x)
    np.testing.assert_array_equal(loaded_base, base)
    assert ids == ['a', 'b', 'a']

    save_activations(tmp_path / 'plain', x, ['a', 'b', 'c'])
    assert load_activations(tmp_path / 'plain')[2] is None
