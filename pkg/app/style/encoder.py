import torch
from torch import nn
import torch.nn.functional as F
from app.errors import NumericalError, ShapeError

STAGE = 'style_encoder_v1'


def gram_matrix(features):
    """Channel inner products of a (B x) C x H x W map, scaled by 1 / (H W)."""
    if features.dim() not in (3, 4):
        raise ShapeError('gram_matrix expects C x H x W or B x C x H x W, '
                         'got {}'.format(tuple(features.shape)))
    if not torch.isfinite(features).all():
        raise NumericalError('non-finite features passed to gram_matrix',
                             component='gram')
    squeeze = features.dim() == 3
    if squeeze:
        features = features.unsqueeze(0)
    b, c, h, w = features.shape
    flat = features.reshape(b, c, h * w)
    gram = torch.bmm(flat, flat.transpose(1, 2)) / (h * w)
    return gram[0] if squeeze else gram


def upper_triangle(gram):
    c = gram.shape[-1]
    rows, cols = torch.triu_indices(c, c, device=gram.device)
    return gram[..., rows, cols]


class StyleEncoder(nn.Module):
    """Strided convolutional trunk; the Gram matrix of every stage is reduced to
    its upper triangle, projected to ``style_dim`` and L2-normalized."""

    def __init__(self, resolution, in_channels=1, channels=(16, 32, 64),
                 style_dim=64):
        super(StyleEncoder, self).__init__()
        self.resolution = resolution
        self.in_channels = in_channels
        self.channels = tuple(channels)
        self.style_dim = style_dim
        stages, prev = [], in_channels
        for width in self.channels:
            stages.append(nn.Sequential(
                nn.Conv2d(prev, width, 3, 2, 1),
                nn.LeakyReLU(0.2),
                nn.Conv2d(width, width, 3, 1, 1),
                nn.LeakyReLU(0.2)))
            prev = width
        self.stages = nn.ModuleList(stages)
        gram_dim = sum(w * (w + 1) // 2 for w in self.channels)
        self.project = nn.Linear(gram_dim, style_dim)

    def check_input(self, x):
        if x.dim() != 4 or x.shape[1] != self.in_channels or \
                x.shape[2] != self.resolution or x.shape[3] != self.resolution:
            raise ShapeError('style encoder trained for {}x{}x{} inputs, got '
                             '{}'.format(self.in_channels, self.resolution,
                                         self.resolution, tuple(x.shape)))

    def gram_features(self, x):
        self.check_input(x)
        taps, h = [], x
        for stage in self.stages:
            h = stage(h)
            taps.append(upper_triangle(gram_matrix(h)))
        return torch.cat(taps, dim=1)

    def forward(self, x):
        return F.normalize(self.project(self.gram_features(x)), dim=1)

    def meta(self):
        return {'resolution': self.resolution, 'in_channels': self.in_channels,
                'channels': list(self.channels), 'style_dim': self.style_dim}

    @staticmethod
    def from_meta(meta):
        return StyleEncoder(meta['resolution'], meta['in_channels'],
                            tuple(meta['channels']), meta['style_dim'])


def freeze(encoder):
    encoder.eval()
    for p in encoder.parameters():
        p.requires_grad_(False)
    return encoder


@torch.no_grad()
def encode(encoder, batch):
    """Unit-norm style codes of a batch, computed in inference mode."""
    was_training = encoder.training
    encoder.eval()
    try:
        return encoder(batch)
    finally:
        encoder.train(was_training)
