"""Fréchet distance between feature Gaussians and pairwise output diversity."""
import logging
import numpy as np
from scipy import linalg
import torch
from app.errors import DataError, NumericalError

logger = logging.getLogger(__name__)

# eigenvalues above -EIG_TOLERANCE (relative to the largest) are clamped to 0
EIG_TOLERANCE = 1e-6


def _check_features(features, name):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    if features.ndim != 2 or features.shape[1] < 1:
        raise DataError('{} features must be an N x k matrix'.format(name))
    if not np.isfinite(features).all():
        raise NumericalError('{} features are not finite'.format(name),
                             component='features')
    if features.shape[0] < 2:
        raise DataError('{} features need at least two samples'.format(name))
    if features.shape[0] < features.shape[1] + 1:
        logger.warning('%s features: %d samples for %d dimensions; the '
                       'covariance is rank deficient', name, features.shape[0],
                       features.shape[1])
    return features


def gaussian_moments(features, name='feature'):
    features = _check_features(features, name)
    return features.mean(axis=0), np.atleast_2d(np.cov(features, rowvar=False))


def _psd_eigh(matrix, what):
    matrix = (matrix + matrix.T) / 2.0
    values, vectors = linalg.eigh(matrix)
    scale = max(1.0, float(np.abs(values).max()) if values.size else 1.0)
    if values.min() < -EIG_TOLERANCE * scale:
        positive = values[values > EIG_TOLERANCE * scale]
        condition = (float(values.max() / positive.min()) if positive.size
                     else float('inf'))
        raise NumericalError(
            '{} is not positive semi-definite (smallest eigenvalue {:.3e}, '
            'condition number {:.3e})'.format(what, values.min(), condition),
            component='sqrtm')
    return np.clip(values, 0.0, None), vectors


def psd_sqrtm(matrix):
    values, vectors = _psd_eigh(np.asarray(matrix, dtype=np.float64),
                                'covariance')
    return (vectors * np.sqrt(values)) @ vectors.T


def product_sqrtm(a, b):
    """(a b)^(1/2) for symmetric PSD a, b, through the symmetric product
    a^(1/2) b a^(1/2)."""
    root_a = psd_sqrtm(a)
    middle = psd_sqrtm(root_a @ np.asarray(b, dtype=np.float64) @ root_a)
    return root_a @ middle @ linalg.pinvh(root_a)


def trace_sqrt_product(a, b):
    root_a = psd_sqrtm(a)
    values, _ = _psd_eigh(root_a @ np.asarray(b, dtype=np.float64) @ root_a,
                          'covariance product')
    return float(np.sqrt(values).sum())


def frechet_distance(mu1, sigma1, mu2, sigma2):
    mu1, mu2 = np.atleast_1d(mu1), np.atleast_1d(mu2)
    sigma1, sigma2 = np.atleast_2d(sigma1), np.atleast_2d(sigma2)
    if mu1.shape != mu2.shape or sigma1.shape != sigma2.shape:
        raise DataError('feature dimensions differ: {} vs {}'.format(
            mu1.shape, mu2.shape))
    diff = mu1 - mu2
    distance = (diff.dot(diff) + np.trace(sigma1) + np.trace(sigma2) -
                2.0 * trace_sqrt_product(sigma1, sigma2))
    return max(0.0, float(distance))


def fid(features_real, features_fake):
    mu_r, sigma_r = gaussian_moments(features_real, 'real')
    mu_f, sigma_f = gaussian_moments(features_fake, 'generated')
    return frechet_distance(mu_r, sigma_r, mu_f, sigma_f)


def diversity_score(outputs, feature_fn):
    """Mean feature distance over all pairs of the k outputs of one input,
    averaged over inputs.

    ``outputs`` is k x C x H x W for one input or N x k x C x H x W. Distances
    are root-mean-square differences of the feature vectors.
    """
    if outputs.dim() == 4:
        outputs = outputs.unsqueeze(0)
    k = outputs.shape[1]
    if k < 2:
        raise DataError('diversity needs at least two outputs per input, '
                        'got {}'.format(k))
    scores = []
    with torch.no_grad():
        for group in outputs:
            features = feature_fn(group).reshape(k, -1).double()
            distances = torch.cdist(features, features)
            upper = torch.triu_indices(k, k, offset=1)
            pairs = distances[upper[0], upper[1]]
            scores.append((pairs / features.shape[1] ** 0.5).mean().item())
    return float(np.mean(scores))
