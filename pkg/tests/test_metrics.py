import numpy as np
import pytest

from LoraJD.AdapterStore.CompressedCollection import CompressedGroup
from LoraJD.AdapterStore.LoraAdapter import AdapterCollection, LoraAdapter
from LoraJD.AdapterStore.Sigma import FULL, Sigma
from LoraJD.Errors import UnknownAdapterError
from LoraJD.JointDiagonalization.SolveOptions import SolveOptions
from LoraJD.JointDiagonalization.Solver import solve, solve_collection
from LoraJD.Metrics.Reconstruction import minimal_lossless_rank, numerical_rank, relative_recon_error
from LoraJD.Metrics.SVD import svd_compress, truncated_svd

from conftest import dense_truncated_error


def test_truncated_svd_of_diagonal_adapter():
    adapter = LoraAdapter('diag', np.eye(5, 3) * [3.0, 2.0, 1.0], np.eye(3, 5))
    u, values, v = truncated_svd(adapter, 2)
    np.testing.assert_allclose(values, [3.0, 2.0])
    np.testing.assert_allclose(u, np.eye(5, 2), atol=1e-12)
    np.testing.assert_allclose(v, np.eye(5, 2), atol=1e-12)


@pytest.mark.parametrize('rank', [1, 3, 6, 9])
def test_truncated_svd_matches_dense(make_random_adapters, rank):
    adapter = make_random_adapters(1, 14, 6, seed=rank, d_b=11)[0]
    u, values, v = truncated_svd(adapter, rank)
    assert values.size == min(rank, 6)
    error = np.linalg.norm(adapter.product() - u @ np.diag(values) @ v.T) ** 2
    assert error == pytest.approx(dense_truncated_error(adapter, rank), rel=1e-8, abs=1e-20)
    pivots = np.argmax(np.abs(u), axis=0)
    assert np.all(u[pivots, np.arange(u.shape[1])] > 0)


def test_truncated_svd_rejects_rank_zero(make_random_adapters):
    with pytest.raises(ValueError):
        truncated_svd(make_random_adapters(1, 4, 2)[0], 0)


def test_svd_errors_decrease_with_rank(make_random_adapters):
    adapters = make_random_adapters(4, 24, 16, seed=3)
    means = [relative_recon_error(adapters, svd_compress(adapters, rank))[1] for rank in (2, 4, 8, 16)]
    assert all(later < earlier for earlier, later in zip(means, means[1:]))
    assert means[-1] < 1e-10


def test_lossless_solve_has_no_error(make_random_adapters):
    adapters = make_random_adapters(4, 12, 2, seed=5)
    compressed, _ = solve_collection(adapters, SolveOptions(rank=8))
    errors, mean = relative_recon_error(adapters, compressed)
    assert max(errors.values()) < 1e-8 and mean < 1e-8


def test_rank_zero_group_loses_everything(make_random_adapters):
    adapters = make_random_adapters(3, 6, 2)
    empty = CompressedGroup(np.zeros((6, 0)), np.zeros((6, 0)),
                            {adapter_id: Sigma(FULL, np.zeros((0, 0))) for adapter_id in adapters.ids}, FULL)
    errors, mean = relative_recon_error(adapters, empty)
    assert mean == pytest.approx(1.0)
    assert all(error == pytest.approx(1.0) for error in errors.values())


def test_error_needs_every_adapter(make_random_adapters):
    adapters = make_random_adapters(3, 8, 2)
    compressed, _ = solve_collection(adapters.subset(adapters.ids[:2]), SolveOptions(rank=2))
    with pytest.raises(UnknownAdapterError, match='adapter-002'):
        relative_recon_error(adapters, compressed)


def test_error_of_zero_adapter_is_undefined(rng):
    zero = AdapterCollection([LoraAdapter('zero', np.zeros((4, 1)), np.ones((1, 4)))])
    group = CompressedGroup(np.eye(4, 1), np.eye(4, 1), {'zero': Sigma.full(np.zeros((1, 1)))}, FULL)
    with pytest.raises(ValueError, match='zero product'):
        relative_recon_error(zero, group)


@pytest.mark.parametrize('seed', range(10))
def test_structured_adapters_compress_better_than_random(make_random_adapters, make_correlated_adapters, seed):
    options = SolveOptions(rank=16, seed=seed)
    structured = make_correlated_adapters(50, 32, 4, seed=seed)
    unstructured = make_random_adapters(50, 32, 4, seed=seed)
    structured_error = relative_recon_error(structured, solve_collection(structured, options)[0])[1]
    random_error = relative_recon_error(unstructured, solve_collection(unstructured, options)[0])[1]
    assert structured_error < random_error


def test_energy_splits_into_sigma_and_residual(make_random_adapters):
    adapters = make_random_adapters(5, 16, 3, seed=6)
    group, _ = solve(adapters, SolveOptions(rank=4, normalize=False))
    for adapter in adapters:
        total = adapter.product_norm() ** 2
        parts = group.sigma(adapter.id).squared_norm() + group.residual_sq_norm(adapter)
        assert parts == pytest.approx(total, rel=1e-10)


def test_minimal_lossless_rank(make_random_adapters, make_planted_families):
    assert minimal_lossless_rank(make_random_adapters(3, 10, 2)) == 6
    assert minimal_lossless_rank(make_random_adapters(3, 4, 2)) == 4
    adapters, _ = make_planted_families(2, 5, 16, 2)
    assert minimal_lossless_rank(adapters) == 4


def test_lossless_rank_is_lossless(make_planted_families):
    adapters, _ = make_planted_families(2, 5, 16, 2, seed=2)
    rank = minimal_lossless_rank(adapters)
    compressed, _ = solve_collection(adapters, SolveOptions(rank=rank))
    assert relative_recon_error(adapters, compressed)[1] < 1e-8


def test_numerical_rank_edge_cases():
    assert numerical_rank(np.zeros((3, 3))) == 0
    assert numerical_rank(np.zeros((0, 3))) == 0
    assert numerical_rank(np.diag([1.0, 1e-12, 0.0])) == 1
