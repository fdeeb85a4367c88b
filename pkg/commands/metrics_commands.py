"""
Metrics Commands - FID and IS over sample files
"""

import click
import numpy as np
from flask import Blueprint, current_app

import storage
from commands.common import emit, handle_errors
from services.errors import InputError
from services.manifest import RunManifest
from services.metrics import (
    DEFAULT_SPLITS, feature_extract, fid, inception_score, metric_report, parse_feature_kind,
)
from services.wqgan import DATASETS, make_dataset

metrics_bp = Blueprint('metrics_commands', __name__, cli_group=None)


def uniform_classifier(classes: int):
    def classify(samples):
        return np.full((len(samples), classes), 1.0 / classes)
    return classify


@metrics_bp.cli.command('metrics')
@click.option('--fid', 'want_fid', is_flag=True, help='Frechet distance between --real and --fake.')
@click.option('--is', 'want_is', is_flag=True, help='Inception score of --fake.')
@click.option('--real', 'real_path', type=click.Path(exists=False), help='Sample file or directory.')
@click.option('--fake', 'fake_path', required=True, type=click.Path(exists=False), help='Sample file or directory.')
@click.option('--features', default='raw', show_default=True, help='raw or proj:d:seed')
@click.option('--classifier', default='uniform:2', show_default=True,
              help='uniform:K or the name of a synthetic dataset.')
@click.option('--splits', type=int, default=DEFAULT_SPLITS, show_default=True)
@handle_errors
def metrics_command(want_fid, want_is, real_path, fake_path, features, classifier, splits):
    """Report FID and/or IS as JSON."""
    if not (want_fid or want_is):
        raise InputError('Choose --fid, --is or both.')
    kind = parse_feature_kind(features)
    fake = storage.load_samples(fake_path)
    results = []
    if want_fid:
        if not real_path:
            raise InputError('--fid needs --real.')
        real = storage.load_samples(real_path)
        value = fid(feature_extract(real, kind), feature_extract(fake, kind))
        current_app.logger.info('FID with %s features: %.6f', kind.label, value)
        results.append(metric_report('fid', value, config={'features': kind.label}))
    if want_is:
        if classifier in DATASETS:
            classify = make_dataset(classifier).classify
        elif classifier.startswith('uniform:'):
            try:
                classes = int(classifier.split(':', 1)[1])
            except ValueError:
                raise InputError(f'Malformed classifier {classifier!r}.') from None
            if classes < 1:
                raise InputError('uniform classifier needs at least one class.')
            classify = uniform_classifier(classes)
        else:
            raise InputError(f'Unknown classifier {classifier!r}.')
        mean, std = inception_score(fake, classify, min(splits, len(fake)) if len(fake) else splits)
        results.append(metric_report('is', mean, std, config={'classifier': classifier, 'splits': splits}))

    manifest = RunManifest(command='metrics', config={'features': kind.label, 'classifier': classifier,
                                                      'splits': splits, 'fid': want_fid, 'is': want_is})
    manifest.add_inputs([real_path, fake_path])
    emit({'metrics': results}, manifest)
