import numpy as np
import pytest

from LoraJD.AdapterStore.CompressedCollection import (CLUSTERED, CompressedCollection, CompressedGroup,
                                                      single_group_collection)
from LoraJD.AdapterStore.LoraAdapter import AdapterCollection, LoraAdapter
from LoraJD.AdapterStore.Normalization import denormalize_sigmas, normalize_collection
from LoraJD.AdapterStore.Sigma import DIAGONAL, FULL, Sigma
from LoraJD.Errors import ShapeMismatchError, UnknownAdapterError


def test_adapter_rejects_bad_input(rng):
    with pytest.raises(TypeError):
        LoraAdapter(7, np.ones((4, 2)), np.ones((2, 4)))
    with pytest.raises(ShapeMismatchError):
        LoraAdapter('x', np.ones((4, 2)), np.ones((3, 4)))
    with pytest.raises(ShapeMismatchError):
        LoraAdapter('x', np.ones(4), np.ones((1, 4)))


def test_adapter_factors_are_read_only(rng):
    adapter = LoraAdapter('x', rng.standard_normal((5, 2)), rng.standard_normal((2, 6)))
    with pytest.raises(ValueError):
        adapter.b[0, 0] = 1.0
    assert (adapter.d_b, adapter.d_a, adapter.rank) == (5, 6, 2)


def test_product_norm_matches_dense(rng):
    adapter = LoraAdapter('x', rng.standard_normal((9, 3)), rng.standard_normal((3, 7)))
    assert adapter.product_norm() == pytest.approx(np.linalg.norm(adapter.product()), rel=1e-12)
    assert adapter.original_norm == pytest.approx(adapter.product_norm())


def test_collection_lookup(make_random_adapters):
    adapters = make_random_adapters(4, 6, 2)
    assert adapters[1].id == 'adapter-001'
    assert adapters[np.int64(2)].id == 'adapter-002'
    assert adapters['adapter-003'] is adapters[3]
    assert adapters.index_of('adapter-000') == 0
    with pytest.raises(UnknownAdapterError, match='nope'):
        adapters['nope']


def test_collection_validation(rng):
    first = LoraAdapter('a', rng.standard_normal((4, 2)), rng.standard_normal((2, 4)))
    wide = LoraAdapter('b', rng.standard_normal((4, 2)), rng.standard_normal((2, 5)))
    with pytest.raises(ShapeMismatchError):
        AdapterCollection([first, wide])
    with pytest.raises(ValueError):
        AdapterCollection([first, first])
    with pytest.raises(ValueError):
        AdapterCollection([])


def test_heterogeneous_ranks_stack(make_random_adapters):
    adapters = make_random_adapters(3, 8, 0, ranks=[1, 2, 4])
    assert adapters.ranks == [1, 2, 4]
    assert adapters.stacked_b().shape == (8, 7)
    assert adapters.stacked_a().shape == (7, 8)


def test_subset_keeps_requested_order(make_random_adapters):
    adapters = make_random_adapters(5, 6, 2)
    subset = adapters.subset(['adapter-004', 'adapter-001'])
    assert subset.ids == ['adapter-004', 'adapter-001']


def test_normalize_scales_b_only(make_random_adapters):
    adapters = make_random_adapters(3, 8, 2, seed=3)
    normalized = normalize_collection(adapters)
    for original, scaled in zip(adapters, normalized):
        assert scaled.product_norm() == pytest.approx(1.0, rel=1e-12)
        assert scaled.original_norm == pytest.approx(original.product_norm(), rel=1e-12)
        np.testing.assert_array_equal(scaled.a, original.a)


def test_normalize_rejects_zero_product():
    zero = LoraAdapter('zero', np.zeros((4, 1)), np.ones((1, 4)))
    with pytest.raises(ValueError, match='zero'):
        normalize_collection(AdapterCollection([zero]))


def test_sigma_shapes():
    assert Sigma.full(np.eye(3)).size == 9
    assert Sigma.diagonal(np.ones(3)).size == 3
    np.testing.assert_array_equal(Sigma.diagonal([1.0, 2.0]).dense(), np.diag([1.0, 2.0]))
    with pytest.raises(ValueError):
        Sigma(FULL, np.ones(3))
    with pytest.raises(ValueError):
        Sigma(DIAGONAL, np.eye(2))
    with pytest.raises(ValueError):
        Sigma('block', np.eye(2))


def _group(rng, members, mode=FULL, rank=2, d=5):
    u, _ = np.linalg.qr(rng.standard_normal((d, rank)))
    v, _ = np.linalg.qr(rng.standard_normal((d, rank)))
    shape = (rank, rank) if mode == FULL else (rank,)
    return CompressedGroup(u, v, {member: Sigma(mode, rng.standard_normal(shape)) for member in members}, mode)


def test_group_rejects_mismatched_sigma(rng):
    u = np.eye(5)[:, :2]
    with pytest.raises(ShapeMismatchError):
        CompressedGroup(u, u, {'a': Sigma.full(np.eye(3))}, FULL)
    with pytest.raises(ValueError):
        CompressedGroup(u, u, {'a': Sigma.diagonal(np.ones(2))}, FULL)


def test_collection_assignment_must_cover_groups(rng):
    groups = [_group(rng, ['a', 'b']), _group(rng, ['c'])]
    collection = CompressedCollection(groups, {'a': 0, 'b': 0, 'c': 1}, FULL, method=CLUSTERED)
    assert collection.group_index('c') == 1
    assert collection.parameter_count() == 2 * (10 + 10) + 3 * 4 + 3
    with pytest.raises(ValueError):
        CompressedCollection(groups, {'a': 0, 'b': 1, 'c': 1}, FULL)
    with pytest.raises(ValueError):
        CompressedCollection(groups, {'a': 0, 'c': 1}, FULL)
    with pytest.raises(UnknownAdapterError):
        collection.group_of('zzz')


def test_residual_matches_dense(rng):
    adapter = LoraAdapter('a', rng.standard_normal((5, 3)), rng.standard_normal((3, 5)))
    group = _group(rng, ['a'])
    dense = np.linalg.norm(adapter.product() - group.reconstruct('a')) ** 2
    assert group.residual_sq_norm(adapter) == pytest.approx(dense, rel=1e-10)


def test_denormalize_applies_norms(rng):
    group = _group(rng, ['a', 'b'], mode=DIAGONAL)
    collection = single_group_collection(group, norms={'a': 2.0, 'b': 0.5}, normalized=True)
    restored = denormalize_sigmas(collection)
    assert not restored.normalized
    np.testing.assert_allclose(restored.sigma_of('a').values, 2.0 * group.sigma('a').values)
    np.testing.assert_allclose(restored.sigma_of('b').values, 0.5 * group.sigma('b').values)
    assert denormalize_sigmas(restored) is restored


def test_denormalize_needs_every_norm(rng):
    collection = single_group_collection(_group(rng, ['a', 'b']), norms={'a': 1.0}, normalized=True)
    with pytest.raises(UnknownAdapterError, match='missing norm'):
        denormalize_sigmas(collection)


def test_rounded_is_float32_representable(rng):
    collection = single_group_collection(_group(rng, ['a']))
    rounded = collection.rounded()
    u = rounded.groups[0].u
    np.testing.assert_array_equal(u, u.astype(np.float32).astype(np.float64))
    assert np.max(np.abs(u - collection.groups[0].u)) < 1e-6
