from contextlib import contextmanager
import os
import click
from flask import current_app
from app import attach_run_log, resolve_device
from app.data import (PRESETS, generate_toy, load_image, normalize,
                      open_manifest, sample_split)
from app.data.loader import ImageStore
from app.data.manifest import IMAGE_EXTENSIONS
from app.errors import ConfigError, DataError
from app.errors.handlers import handle_errors
from app.evaluation import (evaluate as run_evaluation, reference_grid,
                            reference_synthesis, write_cluster_report,
                            write_metric_report)
from app.evaluation.pipeline import evaluation_split
from app.evaluation.synthesis import Sample, sample_id, samples
from app.models import AugmentConfig, ToySpec, TrainConfig, parse_overrides
from app.style import pretrain_style_encoder
from app.train import load_models, run_training

EFFECTIVE_CONFIG = 'effective_config.env'


def load_config(path=None, overrides=()):
    """Run configuration from an optional key=value file plus overrides; the
    OCTMORPH_DEVICE setting replaces the file's device and NUM_WORKERS fills
    in num_workers when the run leaves it at 0."""
    overrides = parse_overrides(overrides)
    if path:
        cfg = TrainConfig.from_file(path, overrides)
    else:
        cfg = TrainConfig.from_mapping(overrides)
    device = current_app.config.get('OCTMORPH_DEVICE')
    if device and device != cfg.device:
        cfg = cfg.with_overrides({'device': device})
    workers = current_app.config.get('NUM_WORKERS')
    if workers and not cfg.num_workers:
        cfg = cfg.with_overrides({'num_workers': workers})
    return cfg


def write_effective_config(out, values):
    """Sorted key=value record of what a command actually ran with."""
    path = os.path.join(out, EFFECTIVE_CONFIG)
    if isinstance(values, TrainConfig):
        return values.write(path)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for key in sorted(values):
            value = values[key]
            if isinstance(value, (list, tuple)):
                value = ','.join(str(v) for v in value)
            f.write('{}={}\n'.format(key, '' if value is None else value))
    return path


@contextmanager
def output_dir(out):
    try:
        if not os.path.isdir(out):
            os.makedirs(out)
        handler = attach_run_log(current_app, out)
    except OSError as e:
        raise DataError('cannot write to {}: {}'.format(out, e))
    try:
        yield out
    finally:
        if handler is not None:
            current_app.logger.removeHandler(handler)
            handler.close()


def _manifest(data, domain_order=None):
    order = [d.strip() for d in domain_order.split(',')] if domain_order \
        else None
    return open_manifest(data, order, current_app.config['SOURCE_DOMAIN'])


def _image_samples(directory, resolution, channels):
    if not os.path.isdir(directory):
        raise DataError('input directory {} does not exist'.format(directory))
    found = []
    for name in sorted(os.listdir(directory)):
        if os.path.splitext(name)[1].lower() not in IMAGE_EXTENSIONS:
            continue
        raw = load_image(os.path.join(directory, name))
        if raw is not None:
            found.append(Sample(sample_id(name),
                                normalize(raw, resolution, channels)))
    if not found:
        raise DataError('no readable images in {}'.format(directory))
    return found


def register(app):
    @app.cli.command('toy')
    @click.option('--out', required=True, help='Directory for the dataset.')
    @click.option('--domains', default=3, show_default=True,
                  help='Number of target domains.')
    @click.option('--train', 'train_per_domain', default=200,
                  show_default=True)
    @click.option('--test', 'test_per_domain', default=40, show_default=True)
    @click.option('--resolution', default=64, show_default=True)
    @click.option('--seed', default=0, show_default=True)
    @handle_errors
    def toy(out, domains, train_per_domain, test_per_domain, resolution, seed):
        """Write the synthetic normal/pathology dataset."""
        spec = ToySpec(n_domains=domains, train_per_domain=train_per_domain,
                       test_per_domain=test_per_domain, resolution=resolution,
                       seed=seed)
        with output_dir(out):
            manifest = generate_toy(spec, out)
            write_effective_config(out, spec.to_dict())
        click.echo('{} images in {} domains under {}'.format(
            len(manifest.records), manifest.num_domains, out))

    @app.cli.command('prepare')
    @click.option('--data', required=True,
                  help='Dataset root, directory or manifest file.')
    @click.option('--out', required=True)
    @click.option('--preset', type=click.Choice(sorted(PRESETS)),
                  help='Per-class train/test counts of an experiment family.')
    @click.option('--train', 'per_class_train', type=int)
    @click.option('--test', 'per_class_test', type=int)
    @click.option('--seed', default=0, show_default=True)
    @click.option('--quota-augment/--no-quota-augment', default=None,
                  help='Top up short domains with augmented copies.')
    @click.option('--augment-source', is_flag=True,
                  help='Also top up the normal domain.')
    @click.option('--domain-order', help='Comma-separated domain names.')
    @handle_errors
    def prepare(data, out, preset, per_class_train, per_class_test, seed,
                quota_augment, augment_source, domain_order):
        """Draw the per-class train/test split into a manifest."""
        if preset:
            preset_train, preset_test = PRESETS[preset]
            per_class_train = per_class_train if per_class_train is not None \
                else preset_train
            per_class_test = per_class_test if per_class_test is not None \
                else preset_test
            if quota_augment is None:
                quota_augment = preset == 'rare'
        if per_class_train is None or per_class_test is None:
            raise click.UsageError('give --preset or both --train and --test')
        with output_dir(out):
            manifest = _manifest(data, domain_order)
            split = sample_split(manifest, per_class_train, per_class_test,
                                 seed, bool(quota_augment),
                                 AugmentConfig(seed=seed), augment_source)
            split.write(os.path.join(out, 'manifest.jsonl'))
            write_effective_config(out, {
                'data': os.path.abspath(data), 'preset': preset,
                'train': per_class_train, 'test': per_class_test,
                'seed': seed, 'quota_augment': bool(quota_augment),
                'augment_source': augment_source,
                'domains': split.domains})
        for domain, count in split.counts('train').items():
            click.echo('{}: {} train / {} test'.format(
                domain, count, split.counts('test')[domain]))

    @app.cli.command('pretrain-style')
    @click.option('--data', required=True)
    @click.option('--out', required=True)
    @click.option('--config', 'config_path', help='key=value config file.')
    @click.option('--override', multiple=True, help='key=value, repeatable.')
    @handle_errors
    def pretrain_style(data, out, config_path, override):
        """Stage 1: train the style encoder with EPHN triplets."""
        cfg = load_config(config_path, override)
        with output_dir(out):
            write_effective_config(out, cfg)
            manifest = _manifest(data)
            _, report = pretrain_style_encoder(
                manifest, cfg, resolve_device(cfg.device),
                os.path.join(out, 'style_encoder.pt'))
            write_cluster_report(report, manifest.domains, out)
        click.echo('style encoder: held-out accuracy {:.4f}, gap {:.4f}'.format(
            report['final']['accuracy'], report['final']['gap']))

    @app.cli.command('train')
    @click.option('--data', required=True)
    @click.option('--encoder', required=True, help='Stage-1 checkpoint.')
    @click.option('--out', required=True)
    @click.option('--config', 'config_path', help='key=value config file.')
    @click.option('--override', multiple=True, help='key=value, repeatable.')
    @click.option('--resume', help='Checkpoint or run directory to resume.')
    @handle_errors
    def train(data, encoder, out, config_path, override, resume):
        """Stage 2: adversarial training with the frozen style encoder."""
        cfg = load_config(config_path, override)
        with output_dir(out):
            write_effective_config(out, cfg)
            result = run_training(_manifest(data), encoder, cfg, out, resume,
                                  resolve_device(cfg.device))
        click.echo('trained {} steps; checkpoint {}'.format(
            result.step, result.checkpoint))

    @app.cli.command('generate')
    @click.option('--checkpoint', required=True)
    @click.option('--input', 'input_dir', required=True,
                  help='Directory of normal images.')
    @click.option('--out', required=True)
    @click.option('--reference', help='One reference image.')
    @click.option('--data', help='Dataset holding the references of --domain.')
    @click.option('--domain', help='Sample references from this domain.')
    @click.option('--k', default=1, show_default=True)
    @click.option('--seed', default=0, show_default=True)
    @handle_errors
    def generate(checkpoint, input_dir, out, reference, data, domain, k, seed):
        """Translate images with the style of reference images."""
        if bool(reference) == bool(domain):
            raise click.UsageError('give exactly one of --reference, --domain')
        device = resolve_device()
        with output_dir(out):
            generator, encoder, _ = load_models(checkpoint, device)
            res, channels = generator.resolution, generator.in_channels
            normals = _image_samples(input_dir, res, channels)
            if reference:
                raw = load_image(reference)
                if raw is None:
                    raise DataError('cannot decode {}'.format(reference))
                references = {'reference': [Sample(
                    sample_id(reference), normalize(raw, res, channels))]}
                k = 1
            else:
                if not data:
                    raise click.UsageError('--domain needs --data')
                manifest = _manifest(data)
                label = manifest.label_of(domain)
                if label == 0:
                    raise ConfigError('{!r} is the source domain'.format(
                        domain))
                store = ImageStore(manifest, res, channels)
                references = {domain: samples(
                    evaluation_split(manifest, label), store)}
            write_effective_config(out, {
                'checkpoint': os.path.abspath(checkpoint),
                'input': os.path.abspath(input_dir), 'reference': reference,
                'domain': domain, 'k': k, 'seed': seed})
            results = reference_synthesis(generator, encoder, normals,
                                          references, k, out, seed, device)
        click.echo('wrote {} images'.format(
            sum(len(r.paths) for r in results.values())))

    @app.cli.command('evaluate')
    @click.option('--checkpoint', required=True)
    @click.option('--data', required=True)
    @click.option('--out', required=True)
    @click.option('--k', default=10, show_default=True,
                  help='References per normal image and domain.')
    @click.option('--features', default='classifier', show_default=True,
                  type=click.Choice(['classifier', 'style', 'pixels']))
    @click.option('--features-weights', help='Trained feature extractor.')
    @click.option('--seed', default=0, show_default=True)
    @click.option('--dataset', help='Dataset name in the report.')
    @handle_errors
    def evaluate(checkpoint, data, out, k, features, features_weights, seed,
                 dataset):
        """FID, diversity and reference-guided synthesis."""
        weights = features_weights or \
            current_app.config.get('FEATURE_EXTRACTOR_WEIGHTS')
        with output_dir(out):
            write_effective_config(out, {
                'checkpoint': os.path.abspath(checkpoint),
                'data': os.path.abspath(data), 'k': k, 'features': features,
                'features_weights': weights, 'seed': seed,
                'dataset': dataset})
            report = run_evaluation(checkpoint, _manifest(data), k, out,
                                    features, weights, seed, resolve_device(),
                                    dataset)
            write_metric_report(report, out)
        click.echo('FID {:.4f} (untranslated {:.4f}), diversity {:.5f}, '
                   '{} images'.format(report.fid, report.baseline_fid,
                                      report.diversity, report.generated))

    @app.cli.command('grid')
    @click.option('--checkpoint', required=True)
    @click.option('--data', required=True)
    @click.option('--domain', required=True)
    @click.option('--out', required=True)
    @click.option('--sources', default=4, show_default=True)
    @click.option('--references', default=5, show_default=True)
    @handle_errors
    def grid(checkpoint, data, domain, out, sources, references):
        """Montage: references along the top, sources down the side."""
        device = resolve_device()
        with output_dir(out):
            generator, encoder, _ = load_models(checkpoint, device)
            manifest = _manifest(data)
            store = ImageStore(manifest, generator.resolution,
                               generator.in_channels)
            write_effective_config(out, {
                'checkpoint': os.path.abspath(checkpoint),
                'data': os.path.abspath(data), 'domain': domain,
                'sources': sources, 'references': references})
            path = reference_grid(
                generator, encoder,
                samples(evaluation_split(manifest, 0)[:sources], store),
                samples(evaluation_split(manifest, manifest.label_of(domain))
                        [:references], store),
                os.path.join(out, 'grid_{}.png'.format(domain)), device)
        click.echo(path)
