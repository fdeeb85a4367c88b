"""
QWD Commands - exact quaternion Wasserstein distance between two distribution files
"""

import click
from flask import Blueprint

import storage
from commands.common import emit, handle_errors
from services.manifest import RunManifest
from services.qwd import CostMatrix, DiscreteDistribution, qwd_dual, qwd_primal

qwd_bp = Blueprint('qwd_commands', __name__, cli_group=None)


def load_distribution(path: str, renormalize: bool) -> DiscreteDistribution:
    doc = storage.load_distribution_document(path)
    return DiscreteDistribution.create(doc['points'], doc['mass'], renormalize=renormalize)


@qwd_bp.cli.command('qwd')
@click.option('--pr', 'pr_path', required=True, type=click.Path(dir_okay=False), help='Distribution file for P_r.')
@click.option('--pg', 'pg_path', required=True, type=click.Path(dir_okay=False), help='Distribution file for P_g.')
@click.option('--cost', default='euclid', show_default=True, help='"euclid" or a JSON cost matrix file.')
@click.option('--dual', is_flag=True, help='Also solve the dual and report the gap.')
@click.option('--plan', 'plan_path', type=click.Path(dir_okay=False), help='Write the transport plan here.')
@click.option('--renormalize', is_flag=True, help='Rescale real masses to sum to 1.')
@handle_errors
def qwd_command(pr_path, pg_path, cost, dual, plan_path, renormalize):
    """
    Compute QWD(P_r, P_g).
    Exit 2 on malformed files, 3 on unbalanced marginals.
    """
    p_r = load_distribution(pr_path, renormalize)
    p_g = load_distribution(pg_path, renormalize)
    if cost == 'euclid':
        cost_matrix = CostMatrix.euclid(p_r, p_g)
    else:
        cost_matrix = CostMatrix.from_values(storage.load_matrix(cost), p_r, p_g)

    plan, value = qwd_primal(p_r, p_g, cost_matrix)
    report = {'value': value, 'mode': plan.mode, 'per_component': plan.per_component.tolist()}
    if dual:
        potentials, dual_value = qwd_dual(p_r, p_g, cost_matrix)
        report['dual'] = {'value': dual_value, 'gap': value - dual_value, 'method': potentials.method,
                          'f': potentials.f.tolist(), 'g': potentials.g.tolist()}

    manifest = RunManifest(
        command='qwd',
        config={'cost': cost, 'dual': dual, 'renormalize': renormalize},
        inputs={},
    )
    manifest.add_inputs([pr_path, pg_path, None if cost == 'euclid' else cost])
    if plan_path:
        storage.write_json(plan_path, plan.to_dict())
        report['plan'] = plan_path
        manifest.add_artifacts([plan_path])
    emit(report, manifest)
