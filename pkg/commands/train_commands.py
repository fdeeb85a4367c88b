"""
Train Commands - adversarial training runs and sampling from checkpoints
"""

import os

import click
from flask import Blueprint, current_app

import storage
from commands.common import emit, handle_errors, resolve_seed
from services.errors import InputError
from services.manifest import RunManifest
from services.wqgan import DATASETS, SIGN_CONVENTIONS, TrainConfig, sample_generator, train

train_bp = Blueprint('train_commands', __name__, cli_group=None)


@train_bp.cli.command('train')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), help='JSON file of TrainConfig fields.')
@click.option('--iters', type=int, default=None)
@click.option('--batch', type=int, default=None)
@click.option('--lr', type=float, default=None)
@click.option('--clip', type=float, default=None)
@click.option('--ncritic', 'n_critic', type=int, default=None)
@click.option('--seed', type=int, default=None)
@click.option('--dataset', type=click.Choice(DATASETS), default=None)
@click.option('--eval-every', type=int, default=None)
@click.option('--noise-dim', type=int, default=None)
@click.option('--sign-convention', type=click.Choice(SIGN_CONVENTIONS), default=None)
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@handle_errors
def train_command(config_path, iters, batch, lr, clip, n_critic, seed, dataset, eval_every,
                  noise_dim, sign_convention, out_dir):
    """
    Train generator and critic; writes checkpoints, report.jsonl and manifest.json.
    Flags override values from --config. Exit 4 on a non-finite loss.
    """
    options = storage.read_json(config_path) if config_path else {}
    if not isinstance(options, dict):
        raise InputError(f'{config_path} must hold a JSON object of TrainConfig fields.')
    flags = {'iters': iters, 'batch': batch, 'lr': lr, 'clip': clip, 'n_critic': n_critic,
             'seed': seed, 'dataset': dataset, 'eval_every': eval_every, 'noise_dim': noise_dim,
             'sign_convention': sign_convention}
    options.update({k: v for k, v in flags.items() if v is not None})
    options['seed'] = resolve_seed(options.get('seed'))
    config = TrainConfig.from_mapping(options)

    report = train(config, out_dir)
    current_app.logger.info('Training took %.2fs', report.wall_clock)

    manifest = RunManifest(command='train', config=config.to_dict(), seed=config.seed)
    manifest.add_inputs([config_path])
    artifacts = list(report.checkpoints)
    report_path = os.path.join(out_dir, storage.REPORT_FILE)
    if os.path.exists(report_path):
        artifacts.append(report_path)
    manifest.add_artifacts(artifacts)
    storage.write_json(os.path.join(out_dir, storage.MANIFEST_FILE), manifest.to_dict())

    summary = {
        'records': len(report.records),
        'final': report.records[-1].to_dict() if report.records else None,
        'checkpoints': [os.path.basename(p) for p in report.checkpoints],
        'critic_steps': report.counters.critic_steps,
        'generator_steps': report.counters.generator_steps,
    }
    emit(summary, manifest)


@train_bp.cli.command('sample')
@click.option('--checkpoint', 'checkpoint_path', required=True, type=click.Path(dir_okay=False))
@click.option('--count', type=click.IntRange(min=0), default=64, show_default=True)
@click.option('--seed', type=int, default=None)
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False))
@handle_errors
def sample_command(checkpoint_path, count, seed, out_path):
    """Draw generator samples from a checkpoint into a sample file."""
    seed = resolve_seed(seed)
    checkpoint = storage.load_checkpoint(checkpoint_path)
    samples = sample_generator(checkpoint, count, seed)
    storage.save_samples(out_path, samples)
    manifest = RunManifest(command='sample', config={'count': count}, seed=seed)
    manifest.add_inputs([checkpoint_path])
    manifest.add_artifacts([out_path])
    emit({'count': int(samples.shape[0]), 'dim': int(samples.shape[1]), 'out': out_path}, manifest)
