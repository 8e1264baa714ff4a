"""Procedural stand-in for the retinal datasets.

Every image is a stack of smooth horizontal bands with a random vertical phase
(the content). Target domains add one localized signature (the style): a
bright bump, a dark elliptical gap or a speckle field. Domains beyond the third
reuse the archetypes with stronger parameters.
"""
import logging
import os
import numpy as np
from PIL import Image
from app.data.augment import child_rng
from app.data.manifest import MANIFEST_NAME
from app.errors import DataError
from app.models import DatasetManifest, ImageRecord

logger = logging.getLogger(__name__)

SOURCE_DOMAIN = 'normal'
ARCHETYPES = ('bump', 'hole', 'speckle')
BAND_PERIODS = 3.0


def domain_names(n_domains):
    names = [SOURCE_DOMAIN]
    for k in range(n_domains):
        archetype = ARCHETYPES[k % len(ARCHETYPES)]
        names.append(archetype if k < len(ARCHETYPES) else
                     '{}{}'.format(archetype, k // len(ARCHETYPES) + 1))
    return names


def _bands(rng, size):
    phase = rng.uniform(0, 2 * np.pi)
    rows = np.arange(size, dtype=np.float64)[:, None]
    tilt = rng.uniform(-0.15, 0.15) * np.arange(size)[None, :] / size
    image = 110.0 + 55.0 * np.sin(2 * np.pi * BAND_PERIODS * rows / size +
                                  phase + 2 * np.pi * tilt)
    return image + rng.normal(0.0, 4.0, (size, size))


def _center(rng, size):
    return (rng.uniform(0.3, 0.7) * size, rng.uniform(0.3, 0.7) * size)


def _add_bump(image, rng, spec, strength):
    size = image.shape[0]
    cy, cx = _center(rng, size)
    radius = size * rng.uniform(0.06, 0.10)
    rows, cols = np.mgrid[0:size, 0:size]
    blob = np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2 * radius ** 2))
    return image + spec.bump_amplitude * strength * blob


def _add_hole(image, rng, spec, strength):
    size = image.shape[0]
    cy, cx = _center(rng, size)
    ry = size * spec.hole_radius * strength * rng.uniform(0.8, 1.2)
    rx = ry * rng.uniform(1.5, 2.2)
    rows, cols = np.mgrid[0:size, 0:size]
    inside = ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0
    image = image.copy()
    image[inside] = 15.0 + rng.normal(0.0, 3.0, int(inside.sum()))
    return image


def _add_speckle(image, rng, spec, strength):
    size = image.shape[0]
    dots = rng.random((size, size)) < spec.speckle_density * strength
    values = rng.choice([-1.0, 1.0], size=(size, size)) * 90.0
    return image + dots * values


SIGNATURES = {'bump': _add_bump, 'hole': _add_hole, 'speckle': _add_speckle}


def render_image(spec, label, index):
    rng = child_rng(spec.seed, label, index)
    image = _bands(rng, spec.resolution)
    if label > 0:
        k = label - 1
        archetype = ARCHETYPES[k % len(ARCHETYPES)]
        strength = 1.0 + 0.5 * (k // len(ARCHETYPES))
        image = SIGNATURES[archetype](image, rng, spec, strength)
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def generate_toy(spec, out_root):
    if spec.n_domains < 1:
        raise DataError('at least one target domain is required')
    if spec.resolution < 8:
        raise DataError('toy resolution must be at least 8')
    names = domain_names(spec.n_domains)
    per_domain = spec.train_per_domain + spec.test_per_domain
    records = []
    try:
        for label, name in enumerate(names):
            directory = os.path.join(out_root, name)
            if not os.path.isdir(directory):
                os.makedirs(directory)
            for i in range(per_domain):
                filename = '{}_{:05d}.png'.format(name, i)
                Image.fromarray(render_image(spec, label, i)).save(
                    os.path.join(directory, filename))
                split = 'train' if i < spec.train_per_domain else 'test'
                records.append(ImageRecord(name + '/' + filename, label, split))
    except OSError as e:
        raise DataError('cannot write toy dataset to {}: {}'.format(out_root, e))
    logger.info('wrote %d toy images for domains %s', len(records), names)
    manifest = DatasetManifest(os.path.abspath(out_root), tuple(names),
                               tuple(records), seed=spec.seed)
    manifest.write(os.path.join(out_root, MANIFEST_NAME))
    return manifest
