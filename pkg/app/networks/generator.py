import torch
from torch import nn
import torch.nn.functional as F
from app.errors import ShapeError

STAGE = 'generator_v1'
EPS = 1e-5


class AdaINParams(object):
    """One (gamma, beta) pair per decoder AdaIN layer, each B x C."""

    def __init__(self, pairs):
        self.pairs = list(pairs)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, index):
        return self.pairs[index]

    def __iter__(self):
        return iter(self.pairs)


def adain(content, gamma, beta, eps=EPS):
    """gamma * (f - mean(f)) / sqrt(var(f) + eps) + beta over spatial positions,
    per sample and channel. gamma/beta are C or B x C."""
    if content.dim() != 4:
        raise ShapeError('adain expects B x C x H x W features')
    b, c = content.shape[:2]
    if gamma.shape[-1] != c or beta.shape[-1] != c:
        raise ShapeError('adain got {} channels but gamma/beta of size {}/{}'
                         .format(c, gamma.shape[-1], beta.shape[-1]))
    if content.shape[2] * content.shape[3] < 2:
        raise ShapeError('adain needs at least two spatial positions')
    mean = content.mean(dim=(2, 3), keepdim=True)
    var = content.var(dim=(2, 3), keepdim=True, unbiased=False)
    normalized = (content - mean) / torch.sqrt(var + eps)
    gamma = gamma.reshape(-1, c, 1, 1)
    beta = beta.reshape(-1, c, 1, 1)
    return gamma * normalized + beta


class MappingNetwork(nn.Module):
    """Style code -> (gamma, beta) for every AdaIN layer. Heads start at zero so
    an untrained mapping modulates with gamma = 1, beta = 0."""

    def __init__(self, style_dim, adain_channels, hidden=128):
        super(MappingNetwork, self).__init__()
        self.style_dim = style_dim
        self.adain_channels = tuple(adain_channels)
        self.shared = nn.Sequential(
            nn.Linear(style_dim, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU())
        self.heads = nn.ModuleList(nn.Linear(hidden, 2 * c)
                                   for c in self.adain_channels)
        for head in self.heads:
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def forward(self, s):
        if s.dim() == 1:
            s = s.unsqueeze(0)
        if s.shape[-1] != self.style_dim:
            raise ShapeError('style code has {} dims, mapping expects {}'.format(
                s.shape[-1], self.style_dim))
        h = self.shared(s)
        pairs = []
        for head, c in zip(self.heads, self.adain_channels):
            delta_gamma, beta = head(h).split(c, dim=1)
            pairs.append((1.0 + delta_gamma, beta))
        return AdaINParams(pairs)


def map_style(mapping, s):
    return mapping(s)


class ResBlock(nn.Module):
    def __init__(self, dim):
        super(ResBlock, self).__init__()
        self.model = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(dim, dim, 3),
            nn.InstanceNorm2d(dim, affine=True), nn.ReLU(),
            nn.ReflectionPad2d(1), nn.Conv2d(dim, dim, 3),
            nn.InstanceNorm2d(dim, affine=True))

    def forward(self, x):
        return x + self.model(x)


class UpBlock(nn.Module):
    """Nearest upsampling, convolution, AdaIN, ReLU."""

    def __init__(self, in_dim, out_dim):
        super(UpBlock, self).__init__()
        self.conv = nn.Sequential(nn.Upsample(scale_factor=2, mode='nearest'),
                                  nn.ReflectionPad2d(2),
                                  nn.Conv2d(in_dim, out_dim, 5))

    def forward(self, x, gamma, beta):
        return F.relu(adain(self.conv(x), gamma, beta))


class Generator(nn.Module):
    """Content encoder (two stride-2 blocks, instance-normalized residual blocks)
    and a decoder whose upsampling blocks are modulated by the style code."""

    def __init__(self, resolution, in_channels=1, style_dim=64, channels=32,
                 res_blocks=4, mapping_dim=128):
        super(Generator, self).__init__()
        self.resolution = resolution
        self.in_channels = in_channels
        self.style_dim = style_dim
        self.channels = channels
        self.res_blocks = res_blocks
        self.mapping_dim = mapping_dim
        c1, c2, c3 = channels, channels * 2, channels * 4

        self.content = nn.Sequential(
            nn.ReflectionPad2d(3), nn.Conv2d(in_channels, c1, 7),
            nn.InstanceNorm2d(c1, affine=True), nn.ReLU(),
            nn.Conv2d(c1, c2, 4, 2, 1), nn.InstanceNorm2d(c2, affine=True),
            nn.ReLU(),
            nn.Conv2d(c2, c3, 4, 2, 1), nn.InstanceNorm2d(c3, affine=True),
            nn.ReLU(),
            *[ResBlock(c3) for _ in range(res_blocks)])
        self.up = nn.ModuleList([UpBlock(c3, c2), UpBlock(c2, c1)])
        self.to_image = nn.Sequential(nn.ReflectionPad2d(3),
                                      nn.Conv2d(c1, in_channels, 7), nn.Tanh())
        self.mapping = MappingNetwork(style_dim, self.adain_channels,
                                      mapping_dim)

    @property
    def adain_channels(self):
        return (self.channels * 2, self.channels)

    def check_input(self, x):
        if x.dim() != 4 or x.shape[1] != self.in_channels or \
                x.shape[2] != self.resolution or x.shape[3] != self.resolution:
            raise ShapeError('generator trained for {}x{}x{} inputs, got {}'
                             .format(self.in_channels, self.resolution,
                                     self.resolution, tuple(x.shape)))

    def forward(self, x, s):
        self.check_input(x)
        if s.dim() == 1:
            s = s.unsqueeze(0)
        if s.shape[0] == 1 and x.shape[0] > 1:
            s = s.expand(x.shape[0], -1)
        if s.shape[0] != x.shape[0]:
            raise ShapeError('{} style codes for {} images'.format(
                s.shape[0], x.shape[0]))
        params = self.mapping(s)
        h = self.content(x)
        for block, (gamma, beta) in zip(self.up, params):
            h = block(h, gamma, beta)
        return self.to_image(h)

    def meta(self):
        return {'resolution': self.resolution,
                'in_channels': self.in_channels, 'style_dim': self.style_dim,
                'channels': self.channels, 'res_blocks': self.res_blocks,
                'mapping_dim': self.mapping_dim,
                'adain_channels': list(self.adain_channels)}

    @staticmethod
    def from_meta(meta):
        return Generator(meta['resolution'], meta['in_channels'],
                         meta['style_dim'], meta['channels'],
                         meta['res_blocks'], meta['mapping_dim'])


@torch.no_grad()
def generate(generator, x, s):
    """G(x, s) in inference mode."""
    was_training = generator.training
    generator.eval()
    try:
        return generator(x, s)
    finally:
        generator.train(was_training)
