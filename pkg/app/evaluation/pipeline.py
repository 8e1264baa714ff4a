"""The evaluation protocol: k reference-guided translations per test normal
and domain, FID against the real target images and pairwise diversity."""
import logging
import os
import torch
from app.data.loader import ImageStore
from app.errors import DataError
from app.evaluation.features import make_feature_fn
from app.evaluation.metrics import diversity_score, fid
from app.evaluation.synthesis import reference_grid, reference_synthesis, samples
from app.models import DomainMetrics, MetricReport
from app.train.checkpoints import load_models

logger = logging.getLogger(__name__)


def _features(feature_fn, images, device, batch_size=64):
    chunks = [feature_fn(images[i:i + batch_size].to(device)).cpu()
              for i in range(0, len(images), batch_size)]
    return torch.cat(chunks).double().numpy()


def evaluation_split(manifest, label):
    return manifest.select('test', label) or manifest.select('train', label)


def evaluate(checkpoint, manifest, k, out_dir, features='classifier',
             features_weights=None, seed=0, device='cpu', dataset=None,
             grid_size=(4, 5)):
    """Runs the protocol and returns a ``MetricReport``.

    Images go to ``out_dir/generated/<domain>/``, one montage per domain to
    ``out_dir/grids/<domain>.png``. Test splits are used where present.
    """
    generator, encoder, meta = load_models(checkpoint, device)
    if list(meta['domains']) != list(manifest.domains):
        raise DataError('checkpoint was trained on domains {} but the dataset '
                        'has {}'.format(meta['domains'], list(manifest.domains)))
    store = ImageStore(manifest, generator.resolution, generator.in_channels)
    normals = samples(evaluation_split(manifest, 0), store)
    if not normals:
        raise DataError('no normal images to translate')
    targets = {manifest.domains[label]: samples(
        evaluation_split(manifest, label), store)
        for label in manifest.target_labels}

    feature_fn = make_feature_fn(features, manifest, generator.resolution,
                                 generator.in_channels, encoder=encoder,
                                 weights=features_weights, out_dir=out_dir,
                                 seed=seed, device=device)
    generated = reference_synthesis(generator, encoder, normals, targets, k,
                                    os.path.join(out_dir, 'generated'), seed,
                                    device)

    normal_images = torch.stack([s.image for s in normals])
    normal_features = _features(feature_fn, normal_images, device)
    report = MetricReport(dataset or os.path.basename(manifest.root.rstrip('/\\')),
                          feature_fn.name, k)
    for domain, pool in targets.items():
        outputs = generated[domain].outputs
        real = _features(feature_fn, torch.stack([s.image for s in pool]),
                         device)
        fake = _features(feature_fn, outputs.flatten(0, 1), device)
        diversity = diversity_score(outputs, feature_fn) if k >= 2 else 0.0
        metrics = DomainMetrics(domain, fid(real, fake),
                                fid(real, normal_features), diversity,
                                int(outputs.shape[0] * outputs.shape[1]),
                                len(pool))
        report.domains.append(metrics)
        logger.info('%s: FID %.4f (untranslated %.4f) diversity %.5f', domain,
                    metrics.fid, metrics.baseline_fid, metrics.diversity)
        m, r = grid_size
        reference_grid(generator, encoder, normals[:m], pool[:r],
                       os.path.join(out_dir, 'grids', domain + '.png'), device)
    return report
