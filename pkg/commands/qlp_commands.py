"""
QLP Commands - Farkas certificates, strong-duality probing and box projection
"""

import click
from flask import Blueprint, current_app

import storage
from commands.common import emit, handle_errors, resolve_seed
from services.errors import CheckFailedError
from services.manifest import RunManifest
from services.qlp import (
    QuaternionBox, check_separation, dual_gap_search, farkas, project_box,
    reference_gap_instance, separate_box, solve_qlp, solve_qlp_dual, validate_certificate,
)

qlp_bp = Blueprint('qlp_commands', __name__, cli_group=None)

REAL_GAP_LIMIT = 1e-7


@qlp_bp.cli.command('farkas')
@click.option('--input', 'input_path', required=True, type=click.Path(dir_okay=False),
              help='JSON file with upsilon and b.')
@handle_errors
def farkas_command(input_path):
    """Print the certificate of the Farkas alternative that holds."""
    doc = storage.load_qlp_document(input_path)
    certificate = farkas(doc['upsilon'], doc['b'])
    valid, message = validate_certificate(doc['upsilon'], doc['b'], certificate)
    if not valid:
        raise CheckFailedError(f'Certificate failed validation: {message}')
    manifest = RunManifest(command='farkas', config={})
    manifest.add_inputs([input_path])
    emit({'certificate': certificate.to_dict(), 'valid': valid, 'message': message}, manifest)


@qlp_bp.cli.command('gapscan')
@click.option('--seed', type=int, default=None, help='Defaults to the configured SEED.')
@click.option('--trials', type=click.IntRange(min=0), default=1000, show_default=True)
@click.option('--max-rows', type=click.IntRange(min=1), default=3, show_default=True)
@click.option('--max-cols', type=click.IntRange(min=1), default=4, show_default=True)
@click.option('--real-b', is_flag=True, help='Restrict b to purely real vectors.')
@click.option('--top', type=click.IntRange(min=0), default=10, show_default=True,
              help='Number of largest-gap instances to print.')
@handle_errors
def gapscan_command(seed, trials, max_rows, max_cols, real_b, top):
    """
    Compare primal and vertex-enumerated dual values on random QLPs.
    Exit 5 when a real-b scan shows a gap.
    """
    seed = resolve_seed(seed)
    scan = dual_gap_search(seed, trials, max_rows, max_cols, real_b=real_b)
    reference = reference_gap_instance()
    primal = solve_qlp(reference).objective
    dual = solve_qlp_dual(reference, method='vertex').value
    report = {
        'trials': scan.trials,
        'skipped': scan.skipped,
        'gap_count': len(scan.instances),
        'max_gap': scan.max_gap,
        'min_gap': scan.min_gap,
        'instances': [inst.to_dict() for inst in scan.instances[:top]],
        'reference': dict(reference.to_dict(), primal=primal, dual=dual, gap=primal - dual),
    }
    manifest = RunManifest(
        command='gapscan',
        config={'trials': trials, 'max_rows': max_rows, 'max_cols': max_cols, 'real_b': real_b, 'top': top},
        seed=seed,
    )
    emit(report, manifest)
    if real_b and scan.max_gap > REAL_GAP_LIMIT:
        raise CheckFailedError(f'Real-b scan found a duality gap of {scan.max_gap:.3e}.')


@qlp_bp.cli.command('project')
@click.option('--input', 'input_path', required=True, type=click.Path(dir_okay=False),
              help='JSON file with dim, upper, optional lower, and y.')
@click.option('--separate', is_flag=True, help='Also return a separating hyperplane.')
@handle_errors
def project_command(input_path, separate):
    """Project y onto an axis-aligned quaternion box."""
    doc = storage.load_box_document(input_path)
    box = QuaternionBox(doc['dim'], doc['upper'], doc['lower'])
    y = doc['y']
    xhat, distance = project_box(box, y)
    report = {'box': box.to_dict(), 'xhat': xhat.tolist(), 'distance': distance}
    if separate:
        plane = separate_box(box, y)
        valid, message = check_separation(box, y, plane)
        if not valid:
            raise CheckFailedError(f'Separating hyperplane failed its check: {message}')
        report['hyperplane'] = plane.to_dict()
    current_app.logger.debug('Projected onto box %s', box)
    manifest = RunManifest(command='project', config={'separate': separate})
    manifest.add_inputs([input_path])
    emit(report, manifest)
