"""
Check Commands - finite-difference gradient checks of the quaternion layers
"""

import click
from flask import Blueprint

from commands.common import emit, handle_errors, resolve_seed
from services.errors import CheckFailedError
from services.manifest import RunManifest
from services.qnn import gradcheck

check_bp = Blueprint('check_commands', __name__, cli_group=None)


@check_bp.cli.command('gradcheck')
@click.option('--seed', type=int, default=None)
@click.option('--arch', type=click.Choice(['small', 'default']), default='default', show_default=True)
@handle_errors
def gradcheck_command(seed, arch):
    """Exit 0 when every layer passes, 5 naming the worst layer otherwise."""
    seed = resolve_seed(seed)
    report = gradcheck(seed, arch)
    emit(report.to_dict(), RunManifest(command='gradcheck', config={'arch': arch}, seed=seed))
    if not report.passed:
        worst = report.worst()
        raise CheckFailedError(f'Gradient check failed for {", ".join(report.failing)}; '
                               f'worst layer {worst.layer} (relative error {worst.max_rel:.3e}).')
