"""Geometric, photometric and elastic augmentation of decoded images, plus the
integer-to-[-1, 1] normalization that follows it in the input pipeline.

Augmentation always runs on decoded integer images (0..255); normalization is
the last step before a tensor reaches a network.
"""
import logging
import math
import numpy as np
from PIL import Image
from scipy.ndimage import affine_transform, gaussian_filter, map_coordinates
import torch
from app.errors import DataError
from app.models import AugmentParams

logger = logging.getLogger(__name__)

# elastic alpha and sigma are expressed on this grid and rescaled to the image
ELASTIC_GRID = 128.0


def child_rng(seed, *keys):
    """Independent generator for (seed, worker_id, item_index, ...)."""
    return np.random.default_rng([int(seed)] + [int(k) for k in keys])


def sample_augment_params(cfg, rng):
    shift_x = rng.uniform(*cfg.shift_frac)
    shift_y = rng.uniform(*cfg.shift_frac)
    rotation = rng.uniform(*cfg.rotate_deg)
    scale = rng.uniform(0.0, cfg.scale_max_frac)
    brightness = rng.uniform(*cfg.brightness_frac)
    elastic_seed = int(rng.integers(0, 2 ** 31 - 1))
    if not cfg.elastic_enabled:
        return AugmentParams(shift_x, shift_y, rotation, scale, brightness)
    return AugmentParams(shift_x, shift_y, rotation, scale, brightness,
                         elastic_seed, cfg.elastic_alpha, cfg.elastic_sigma)


def _warp_matrix(params, height, width):
    theta = math.radians(params.rotation)
    zoom = 1.0 + params.scale
    cos, sin = math.cos(theta), math.sin(theta)
    # output (row, col) -> input (row, col)
    matrix = np.array([[cos, sin], [-sin, cos]]) / zoom
    center = np.array([(height - 1) / 2.0, (width - 1) / 2.0])
    shift = np.array([params.shift_y * height, params.shift_x * width])
    offset = center - matrix.dot(center + shift)
    return matrix, offset


def _per_channel(image, fn):
    if image.ndim == 2:
        return fn(image)
    return np.stack([fn(image[..., c]) for c in range(image.shape[-1])],
                    axis=-1)


def _elastic_field(shape, params):
    rng = np.random.default_rng(params.elastic_seed)
    factor = shape[1] / ELASTIC_GRID
    alpha = params.elastic_alpha * factor
    sigma = max(params.elastic_sigma * factor, 1e-3)
    dy = gaussian_filter(rng.uniform(-1, 1, shape), sigma, mode='constant') * alpha
    dx = gaussian_filter(rng.uniform(-1, 1, shape), sigma, mode='constant') * alpha
    rows, cols = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]),
                             indexing='ij')
    return np.reshape(rows + dy, (-1,)), np.reshape(cols + dx, (-1,))


def apply_augment(image, params):
    """Applies already sampled parameters; output keeps the input size."""
    image = np.asarray(image)
    if image.ndim not in (2, 3) or image.shape[0] == 0 or image.shape[1] == 0:
        raise DataError('cannot augment a degenerate image of shape {}'.format(
            image.shape))
    height, width = image.shape[:2]
    out = image.astype(np.float64)

    if params.shift_x or params.shift_y or params.rotation or params.scale:
        matrix, offset = _warp_matrix(params, height, width)
        out = _per_channel(out, lambda ch: affine_transform(
            ch, matrix, offset=offset, order=1, mode='reflect'))

    if params.elastic_seed is not None and params.elastic_alpha > 0:
        indices = _elastic_field((height, width), params)
        out = _per_channel(out, lambda ch: map_coordinates(
            ch, indices, order=1, mode='reflect').reshape(height, width))

    if params.brightness:
        out = out * (1.0 + params.brightness)

    if np.array_equal(out, image):
        return image.copy()
    return np.clip(np.rint(out), 0, 255).astype(image.dtype)


def augment(image, cfg, rng, audit=None):
    """Samples shift, rotation, scale, brightness and (optionally) elastic
    parameters from ``rng`` within the ranges of ``cfg`` and applies them.

    When ``audit`` is a list, the sampled :class:`AugmentParams` is appended.
    """
    params = sample_augment_params(cfg, rng)
    if audit is not None:
        audit.append(params)
    return apply_augment(image, params)


def load_image(path):
    """Decodes an image file into a uint8 array; ``None`` if it is unreadable."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ('L', 'RGB'):
                im = im.convert('RGB' if len(im.getbands()) >= 3 else 'L')
            return np.array(im, dtype=np.uint8)
    except (OSError, ValueError, SyntaxError) as e:
        logger.warning('skipping unreadable image %s: %s', path, e)
        return None


def normalize(raw, resolution, channels=1):
    """Maps a 0..255 image to a C x R x R float tensor with v / 127.5 - 1."""
    raw = np.asarray(raw)
    if raw.dtype != np.uint8:
        raw = np.clip(raw, 0, 255).astype(np.uint8)
    if raw.ndim == 3 and raw.shape[-1] == 1:
        raw = raw[..., 0]
    im = Image.fromarray(raw)
    im = im.convert('L' if channels == 1 else 'RGB')
    if im.size != (resolution, resolution):
        im = im.resize((resolution, resolution), Image.BILINEAR)
    arr = np.asarray(im, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return torch.from_numpy(np.ascontiguousarray(arr / np.float32(127.5) -
                                                 np.float32(1.0)))
