"""lora-jd: compress adapter bundles, evaluate and audit artifacts, apply them to activations.

Reports go to stdout (and to a file next to the artifact or at --out); diagnostics go to stderr.
Exit codes: 0 success, 1 usage or input error, 2 audit failure.
"""
import functools
import logging
import sys
import time
import click
import numpy as np
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from LoraJD.AdapterStore.BundleIO import (load_activations, load_collection, load_compressed,
                                          resolve_module_bundles, save_activations, save_compressed)
from LoraJD.AdapterStore.CompressedCollection import CompressedCollection
from LoraJD.AdapterStore.LoraAdapter import AdapterCollection
from LoraJD.AdapterStore.Normalization import normalize_collection
from LoraJD.AdapterStore.Sigma import DIAGONAL, FULL
from LoraJD.Cli.HParams import SWEEP_RANK, NO_CLUSTER_LIMIT, recommend_clusters, recommend_rank, sweep_clusters
from LoraJD.Cli.Reports import render, write_report
from LoraJD.Clustering.ClusterOptions import ClusterOptions
from LoraJD.Clustering.Clustering import cluster_solve
from LoraJD.Errors import LoraJDError
from LoraJD.JointDiagonalization.SolveOptions import ALTERNATING, EIG_ITERATION, SolveOptions
from LoraJD.JointDiagonalization.Solver import solve_collection
from LoraJD.Metrics.Bounds import BOUNDS_TOLERANCE, theorem_bounds
from LoraJD.Metrics.ParameterCount import gpu_usage_ratio, param_count, saved_ratio, setting_for
from LoraJD.Metrics.Reconstruction import relative_recon_error
from LoraJD.Metrics.SVD import svd_compress
from LoraJD.Serving.Batch import Batch
from LoraJD.Serving.Forward import flop_estimate, forward_compressed


logger = logging.getLogger(__name__)

SVD_CHOICE = 'svd'
ALGORITHMS = {'alt': ALTERNATING, 'eig': EIG_ITERATION}
ARTIFACT_SUFFIX = '.jdc'

# float32 storage of Sigma perturbs the captured energy by up to 2^-23 relative
AUDIT_TOLERANCE = BOUNDS_TOLERANCE + 2.0 ** -22


class InputError(click.ClickException):
    exit_code = 1


class AuditFailure(click.ClickException):
    exit_code = 2


class LoraJDGroup(click.Group):
    """Command group whose usage errors exit with code 1"""

    def make_context(self, info_name, args, parent=None, **extra):
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as error:
            error.exit_code = 1
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as error:
            error.exit_code = 1
            raise


def _diagnosed(command: Callable) -> Callable:
    """Turns domain, value and I/O errors of a command into a one-line diagnostic with exit code 1"""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (LoraJDError, ValueError, KeyError, OSError) as error:
            raise InputError(str(error)) from None
    return wrapper


def _solve_flags(command: Callable) -> Callable:
    """Flags shared by the commands that run solves"""
    flags = [
        click.option('--iters', type=int, default=None, help='Iteration cap per solve [default: 10 alt, 100 eig]'),
        click.option('--tol', type=float, default=1e-3, show_default=True, help='Subspace-delta tolerance'),
        click.option('--seed', type=int, default=0, show_default=True, help='Seed for every random choice'),
        click.option('--threads', type=int, default=1, show_default=True, help='Concurrent per-cluster solves'),
        click.option('--no-normalize', is_flag=True, help='Compress the raw products instead of unit-norm ones'),
    ]
    for flag in reversed(flags):
        command = flag(command)
    return command


def _report_flags(command: Callable) -> Callable:
    command = click.option('--csv', 'as_csv', is_flag=True, help='Emit the report table as CSV instead of JSON')(command)
    return click.option('--out', default=None, help='Output path')(command)


def _emit(payload: Dict[str, Any], rows: List[Dict[str, Any]], as_csv: bool, path: Optional[Path]) -> None:
    text = render(payload, rows, as_csv)
    write_report(text, path)
    click.echo(text)


def _check_ids(adapters: AdapterCollection, compressed: CompressedCollection) -> None:
    if set(adapters.ids) != set(compressed.ids):
        missing = sorted(set(adapters.ids) ^ set(compressed.ids))
        raise InputError(f'adapter ids differ between bundle and artifact: {", ".join(missing[:5])}')


def _accounting(adapters: AdapterCollection, compressed: CompressedCollection) -> Dict[str, Any]:
    """Reconstruction errors and parameter accounting shared by the compress and eval reports"""
    errors, mean_error = relative_recon_error(adapters, compressed)
    setting = setting_for(compressed)
    return {
        'relative_errors': errors,
        'mean_relative_error': mean_error,
        'param_count': param_count(setting),
        'stored_parameters': compressed.parameter_count(),
        'saved_ratio': saved_ratio(setting),
        'gpu_usage_ratio': gpu_usage_ratio(setting),
    }


def _error_rows(compressed: CompressedCollection, errors: Dict[str, float]) -> List[Dict[str, Any]]:
    return [{'adapter_id': adapter_id, 'group': compressed.group_index(adapter_id), 'relative_error': error}
            for adapter_id, error in errors.items()]


@click.group(cls=LoraJDGroup)
@click.option('-v', '--verbose', count=True, help='-v for progress, -vv for every iteration')
def cli(verbose: int) -> None:
    """Joint-diagonalization compression of LoRA adapter collections."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s', stream=sys.stderr, force=True)


def _compress(adapters: AdapterCollection, mode: str, rank: int, clusters: int, algorithm: str,
              options: Dict[str, Any]) -> Tuple[CompressedCollection, Dict[str, Any]]:
    """Runs the compression the flags ask for and returns the collection plus its trace summary"""
    if mode == SVD_CHOICE:
        if clusters > 1:
            raise InputError('--mode svd compresses each adapter on its own and does not take --clusters')
        return svd_compress(adapters, rank), {'objective_trace': [], 'iterations': 0, 'converged': True}

    solve_options = SolveOptions(rank=rank, mode=mode, max_iters=options['iters'], tolerance=options['tol'],
                                 algorithm=ALGORITHMS[algorithm], seed=options['seed'],
                                 normalize=not options['no_normalize'])
    if clusters > 1:
        if solve_options.algorithm == EIG_ITERATION:
            raise InputError('--algorithm eig cannot warm-start cluster solves; use --algorithm alt with --clusters')
        cluster_options = ClusterOptions(k=clusters, per_cluster=solve_options, seed=options['seed'],
                                         threads=options['threads'])
        compressed, report = cluster_solve(adapters, cluster_options)
        return compressed, {'objective_trace': list(report.total_objective_trace),
                            'iterations': report.outer_iterations, 'converged': report.converged,
                            'assignment_history_hash': report.assignment_history_hash}
    compressed, report = solve_collection(adapters, solve_options)
    return compressed, {'objective_trace': list(report.objective_trace), 'iterations': report.iterations_run,
                        'converged': report.converged, 'final_subspace_delta': report.final_subspace_delta}


@cli.command()
@click.argument('bundle')
@click.option('--mode', type=click.Choice([FULL, DIAGONAL, SVD_CHOICE]), default=FULL, show_default=True)
@click.option('--rank', type=int, default=16, show_default=True, help='Shared rank r (per-adapter rank for svd)')
@click.option('--clusters', type=int, default=1, show_default=True, help='Number of clusters k')
@click.option('--algorithm', type=click.Choice(list(ALGORITHMS)), default='alt', show_default=True)
@_solve_flags
@_report_flags
@_diagnosed
def compress(bundle: str, mode: str, rank: int, clusters: int, algorithm: str, out: Optional[str], as_csv: bool,
             **options: Any) -> None:
    """Compress the adapter bundle BUNDLE into a .jdc artifact."""
    adapters = load_collection(bundle)
    started = time.perf_counter()
    compressed, trace = _compress(adapters, mode, rank, clusters, algorithm, options)
    elapsed = time.perf_counter() - started

    artifact = Path(out) if out else Path(Path(bundle).name + ARTIFACT_SUFFIX)
    save_compressed(compressed, artifact)
    stored = compressed.rounded()
    payload = {'command': 'compress', 'bundle': str(bundle), 'artifact': str(artifact), 'method': stored.method,
               'mode': stored.mode, 'rank': stored.max_rank, 'clusters': len(stored.groups), 'adapters': len(stored),
               'seed': options['seed'], 'wall_time_seconds': elapsed, **trace, **_accounting(adapters, stored)}
    rows = _error_rows(stored, payload['relative_errors'])
    _emit(payload, rows, as_csv, artifact.with_suffix('.csv' if as_csv else '.json'))


@cli.command(name='eval')
@click.argument('bundle')
@click.argument('artifact')
@_report_flags
@_diagnosed
def evaluate(bundle: str, artifact: str, out: Optional[str], as_csv: bool) -> None:
    """Score ARTIFACT against the original adapters in BUNDLE."""
    adapters = load_collection(bundle)
    compressed = load_compressed(artifact)
    _check_ids(adapters, compressed)

    batch = Batch(np.zeros((len(adapters), 1, adapters.d_a)), adapters.ids)
    flops = flop_estimate(batch, compressed, lora_rank=max(adapters.ranks))
    payload = {'command': 'eval', 'bundle': str(bundle), 'artifact': str(artifact), 'method': compressed.method,
               'mode': compressed.mode, 'rank': compressed.max_rank, 'clusters': len(compressed.groups),
               'adapters': len(compressed), **_accounting(adapters, compressed),
               'flops_per_token': {**asdict(flops), 'compressed_total': flops.compressed_total,
                                   'per_row_reduction': flops.per_row_reduction}}
    _emit(payload, _error_rows(compressed, payload['relative_errors']), as_csv, Path(out) if out else None)


def _probe_bundle(path: str, probe_module: Optional[str]) -> Path:
    bundles = resolve_module_bundles(path)
    if probe_module is None:
        return bundles[len(bundles) // 2]
    for bundle in bundles:
        if bundle.name == probe_module:
            return bundle
    raise InputError(f'unknown probe module {probe_module!r} in {path}')


@cli.command(name='select-hparams')
@click.argument('path')
@click.option('--no-clusters', is_flag=True, help=f'Recommend one shared rank (up to {NO_CLUSTER_LIMIT} adapters)')
@click.option('--probe-module', default=None, help='Module of a model directory to sweep [default: middle entry]')
@_solve_flags
@_report_flags
@_diagnosed
def select_hparams(path: str, no_clusters: bool, probe_module: Optional[str], out: Optional[str], as_csv: bool,
                   **options: Any) -> None:
    """Recommend a rank or a cluster count for the bundle or model directory PATH."""
    probe = _probe_bundle(path, probe_module)
    adapters = load_collection(probe)
    count = len(adapters)
    payload: Dict[str, Any] = {'command': 'select-hparams', 'probe_module': str(probe), 'adapters': count}

    if no_clusters and count <= NO_CLUSTER_LIMIT:
        recommendation = {'mode': FULL, 'rank': recommend_rank(count), 'clusters': 1}
        payload.update(recommendation=recommendation, sweep=[], threshold_met=True)
        _emit(payload, [recommendation], as_csv, Path(out) if out else None)
        return
    if no_clusters:
        logger.warning('--no-clusters applies to at most %d adapters; sweeping clusters for %d', NO_CLUSTER_LIMIT,
                       count)

    solve_options = SolveOptions(rank=min(SWEEP_RANK, adapters.d_a, adapters.d_b), mode=FULL,
                                 max_iters=options['iters'], tolerance=options['tol'], seed=options['seed'],
                                 normalize=not options['no_normalize'])
    points = sweep_clusters(adapters, solve_options, seed=options['seed'], threads=options['threads'])
    chosen, met = recommend_clusters(points)
    if not met:
        logger.warning('no cluster count reached a mean relative error below 0.6; best is %d clusters (%.3f)',
                       chosen.clusters, chosen.mean_error)
    rows = [asdict(point) for point in points]
    payload.update(recommendation={'mode': FULL, 'rank': chosen.rank, 'clusters': chosen.clusters}, sweep=rows,
                   threshold_met=met)
    _emit(payload, rows, as_csv, Path(out) if out else None)


@cli.command(name='audit-bounds')
@click.argument('bundle')
@click.argument('artifact')
@_report_flags
@_diagnosed
def audit_bounds(bundle: str, artifact: str, out: Optional[str], as_csv: bool) -> None:
    """Check the captured energy of every group of ARTIFACT against its lower and upper bounds."""
    compressed = load_compressed(artifact)
    if compressed.mode != FULL:
        raise InputError('bounds defined for JD-Full only')
    adapters = load_collection(bundle)
    _check_ids(adapters, compressed)
    if compressed.normalized:
        adapters = normalize_collection(adapters)

    rows = []
    for index, group in enumerate(compressed.groups):
        bounds = theorem_bounds(adapters, group)
        rows.append({'group': index, **asdict(bounds), 'passed': bounds.holds(AUDIT_TOLERANCE)})
    passed = all(row['passed'] for row in rows)
    _emit({'command': 'audit-bounds', 'artifact': str(artifact), 'groups': rows, 'passed': passed}, rows, as_csv,
          Path(out) if out else None)
    if not passed:
        failed = ', '.join(str(row['group']) for row in rows if not row['passed'])
        raise AuditFailure(f'bounds violated in group(s) {failed}')


@cli.command()
@click.argument('artifact')
@click.argument('activations')
@click.option('--out', default=None, help='Output activation bundle [default: ACTIVATIONS.out]')
@_diagnosed
def apply(artifact: str, activations: str, out: Optional[str]) -> None:
    """Apply ARTIFACT to the activation bundle ACTIVATIONS and write the adapter outputs."""
    compressed = load_compressed(artifact)
    x, adapter_ids, base_output = load_activations(activations)
    batch = Batch(x, adapter_ids)
    y = forward_compressed(batch, compressed, base_output=base_output)
    target = Path(out) if out else Path(str(Path(activations)) + '.out')
    save_activations(target, y, adapter_ids)
    flops = flop_estimate(batch, compressed)
    _emit({'command': 'apply', 'output': str(target), 'shape': list(y.shape),
           'groups_used': len({compressed.group_index(adapter_id) for adapter_id in adapter_ids}),
           'flops': {**asdict(flops), 'compressed_total': flops.compressed_total}}, [], False, None)


def main(argv: Optional[List[str]] = None) -> None:
    """Console entry point"""
    try:
        cli.main(args=argv, prog_name='lora-jd', standalone_mode=False)
    except click.ClickException as error:
        error.show()
        sys.exit(error.exit_code)
    except click.Abort:
        click.echo('Aborted!', err=True)
        sys.exit(1)


if __name__ == '__main__':
    main()
