import logging
import os
from PIL import Image
from app.data.augment import child_rng, sample_augment_params
from app.errors import DataError
from app.models import AugmentConfig, DatasetManifest, ImageRecord

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.jsonl'
IMAGE_EXTENSIONS = ('.png', '.jpg', '.jpeg', '.bmp', '.tif', '.tiff')

# per-class (train, test) counts of the two experiment families
PRESETS = {
    'prevalent': (1000, 100),
    'rare': (400, 80),
}


def _readable(path):
    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except (OSError, ValueError, SyntaxError) as e:
        logger.warning('skipping unreadable image %s: %s', path, e)
        return False


def order_domains(found, domain_order=None, source_domain='normal'):
    if domain_order:
        domain_order = list(domain_order)
        if sorted(domain_order) != sorted(found):
            raise DataError('domain order {} does not match the directories '
                            '{}'.format(domain_order, sorted(found)))
        return domain_order
    ordered = sorted(found)
    if source_domain in ordered:
        ordered.remove(source_domain)
        ordered.insert(0, source_domain)
    else:
        logger.warning('source domain %r not found; index 0 is %r',
                       source_domain, ordered[0])
    return ordered


def load_manifest(root, domain_order=None, source_domain='normal',
                  extensions=IMAGE_EXTENSIONS):
    """Indexes ``root/<domain>/<image>`` into a manifest with every record in
    the train split. Unreadable files are skipped and reported."""
    if not os.path.isdir(root):
        raise DataError('dataset root {} does not exist'.format(root))
    found = [d for d in os.listdir(root)
             if os.path.isdir(os.path.join(root, d)) and not d.startswith('.')]
    if not found:
        raise DataError('no domain directories under {}'.format(root))
    domains = order_domains(found, domain_order, source_domain)

    records, skipped = [], []
    for label, domain in enumerate(domains):
        names = sorted(f for f in os.listdir(os.path.join(root, domain))
                       if os.path.splitext(f)[1].lower() in extensions)
        kept = 0
        for name in names:
            relpath = domain + '/' + name
            if _readable(os.path.join(root, domain, name)):
                records.append(ImageRecord(relpath, label, 'train'))
                kept += 1
            else:
                skipped.append(relpath)
        if kept == 0:
            raise DataError('domain {!r} has no readable images'.format(domain))
    if skipped:
        logger.warning('%d unreadable files skipped under %s', len(skipped), root)
    return DatasetManifest(os.path.abspath(root), tuple(domains),
                           tuple(records), skipped=tuple(skipped))


def _fill_quota(sources, count, split, rng, augment_cfg):
    if len(sources) >= count:
        return [r._replace(split=split) for r in sources[:count]]
    records = [r._replace(split=split) for r in sources]
    for i in range(count - len(sources)):
        src = sources[i % len(sources)]
        params = sample_augment_params(augment_cfg, rng)
        records.append(ImageRecord('{}#aug{:05d}'.format(src.path, i),
                                   src.label, split, src.path,
                                   params.to_dict()))
    return records


def sample_split(manifest, per_class_train, per_class_test, seed,
                 quota_augment=False, augment_cfg=None, augment_source=False):
    """Draws exactly ``per_class_train``/``per_class_test`` disjoint records per
    domain with a seeded shuffle.

    With ``quota_augment`` a domain short of originals is topped up with
    augmented copies; its originals are first partitioned between the two
    splits so that no original feeds both. The source domain is only topped up
    when ``augment_source`` is set.
    """
    if per_class_train < 0 or per_class_test < 0:
        raise DataError('split counts must be non-negative')
    augment_cfg = augment_cfg or AugmentConfig(seed=seed)
    need = per_class_train + per_class_test
    records, deficits = [], {}
    for label, domain in enumerate(manifest.domains):
        originals = [r for r in manifest.records
                     if r.label == label and not r.synthetic]
        rng = child_rng(seed, label)
        order = [originals[i] for i in rng.permutation(len(originals))]
        if len(order) >= need:
            records.extend(r._replace(split='train')
                           for r in order[:per_class_train])
            records.extend(r._replace(split='test')
                           for r in order[per_class_train:need])
            continue
        may_augment = quota_augment and (label != 0 or augment_source)
        pools_needed = (per_class_train > 0) + (per_class_test > 0)
        if not may_augment or len(order) < pools_needed:
            deficits[domain] = need - len(order)
            continue
        n_test = 0
        if per_class_test:
            n_test = max(1, int(round(len(order) * per_class_test / need)))
            n_test = min(n_test, len(order) - (1 if per_class_train else 0))
        test_pool, train_pool = order[:n_test], order[n_test:]
        records.extend(_fill_quota(train_pool, per_class_train, 'train', rng,
                                   augment_cfg))
        records.extend(_fill_quota(test_pool, per_class_test, 'test', rng,
                                   augment_cfg))
    if deficits:
        report = ', '.join('{}: short by {}'.format(d, n)
                           for d, n in deficits.items())
        raise DataError('not enough images for {} train + {} test per class '
                        '({})'.format(per_class_train, per_class_test, report),
                        deficits=deficits)
    return DatasetManifest(manifest.root, manifest.domains, tuple(records),
                           seed=seed)


def open_manifest(path, domain_order=None, source_domain='normal'):
    """A manifest file, a directory holding ``manifest.jsonl``, or a dataset
    root to index."""
    if os.path.isfile(path):
        return DatasetManifest.read(path)
    sidecar = os.path.join(path, MANIFEST_NAME)
    if os.path.isfile(sidecar):
        manifest = DatasetManifest.read(sidecar)
        if domain_order and list(domain_order) != list(manifest.domains):
            raise DataError('{} records domains {}, not {}'.format(
                sidecar, list(manifest.domains), list(domain_order)))
        return manifest
    return load_manifest(path, domain_order, source_domain)
