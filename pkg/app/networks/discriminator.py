import math
import torch
from torch import nn
import torch.nn.functional as F
from app.errors import ShapeError

STAGE = 'discriminator_v1'


def l2normalize(v, eps=1e-12):
    return v / (v.norm() + eps)


def spectral_normalize(weight, u, n_power_iter=1, eps=1e-12, update=True):
    """Returns (W / sigma, u) with sigma the power-iteration estimate of the
    top singular value of W viewed as (out, -1). ``u`` is updated in place
    when ``update`` is true."""
    height = weight.shape[0]
    matrix = weight.reshape(height, -1)
    with torch.no_grad():
        u_new = u.clone()
        v = l2normalize(torch.mv(matrix.t(), u_new), eps)
        steps = n_power_iter if update else 0
        for _ in range(steps):
            u_new = l2normalize(torch.mv(matrix, v), eps)
            v = l2normalize(torch.mv(matrix.t(), u_new), eps)
        if update:
            u.copy_(u_new)
    sigma = torch.dot(u_new, torch.mv(matrix, v)).clamp_min(eps)
    return weight / sigma, u


class SNConv2d(nn.Conv2d):
    def __init__(self, *args, n_power_iterations=1, **kwargs):
        super(SNConv2d, self).__init__(*args, **kwargs)
        self.n_power_iterations = n_power_iterations
        self.register_buffer(
            'u', l2normalize(self.weight.new_empty(self.weight.shape[0])
                             .normal_(0, 1)))

    def normalized_weight(self):
        return spectral_normalize(self.weight, self.u, self.n_power_iterations,
                                  update=self.training)[0]

    def forward(self, input):
        return F.conv2d(input, self.normalized_weight(), self.bias,
                        self.stride, self.padding, self.dilation, self.groups)


class MultiTaskDiscriminator(nn.Module):
    """Shared strided trunk and one 1x1 head per branch; each branch's patch map
    is averaged to one raw (unsquashed) score per image."""

    def __init__(self, resolution, in_channels=1, branches=1, channels=32,
                 max_channels=256):
        super(MultiTaskDiscriminator, self).__init__()
        if branches < 1:
            raise ShapeError('discriminator needs at least one branch')
        self.resolution = resolution
        self.in_channels = in_channels
        self.branches = branches
        self.channels = channels
        self.max_channels = max_channels
        n_layers = max(1, int(math.log2(resolution)) - 3)
        layers, prev = [], in_channels
        for i in range(n_layers):
            width = min(channels * 2 ** i, max_channels)
            layers += [SNConv2d(prev, width, 4, 2, 1), nn.LeakyReLU(0.2)]
            prev = width
        layers += [SNConv2d(prev, prev, 3, 1, 1), nn.LeakyReLU(0.2)]
        self.trunk = nn.Sequential(*layers)
        self.heads = nn.ModuleList(SNConv2d(prev, 1, 1)
                                   for _ in range(branches))

    def forward(self, x):
        """All branch scores, B x branches."""
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ShapeError('discriminator expects B x {} x H x W, got {}'
                             .format(self.in_channels, tuple(x.shape)))
        h = self.trunk(x)
        return torch.cat([head(h).mean(dim=(2, 3)) for head in self.heads],
                         dim=1)

    def discriminate(self, x, label):
        """Score of branch ``label`` (int or one per image) for every image."""
        label = torch.as_tensor(label, device=x.device).long()
        if label.dim() == 0:
            label = label.expand(x.shape[0])
        if label.numel() and (label.min() < 0 or label.max() >= self.branches):
            raise ShapeError('branch label out of range 0..{}'.format(
                self.branches - 1))
        scores = self(x)
        return scores.gather(1, label.view(-1, 1)).squeeze(1)

    def meta(self):
        return {'resolution': self.resolution, 'in_channels': self.in_channels,
                'branches': self.branches, 'channels': self.channels,
                'max_channels': self.max_channels}

    @staticmethod
    def from_meta(meta):
        return MultiTaskDiscriminator(meta['resolution'], meta['in_channels'],
                                      meta['branches'], meta['channels'],
                                      meta['max_channels'])


def r1_from_scores(scores, inputs, gamma):
    if not scores.requires_grad:
        return scores.new_zeros(())
    grad, = torch.autograd.grad(scores.sum(), inputs, create_graph=True,
                                allow_unused=True)
    if grad is None:
        return scores.new_zeros(())
    return 0.5 * gamma * grad.pow(2).flatten(1).sum(dim=1).mean()


def r1_penalty(discriminate_fn, real_batch, labels, gamma=1.0):
    """(gamma / 2) * E ||grad_x D_label(x)||^2 on real samples."""
    if not torch.is_grad_enabled():
        raise RuntimeError('r1_penalty needs gradients; called under no_grad')
    real = real_batch.detach().requires_grad_(True)
    return r1_from_scores(discriminate_fn(real, labels), real, gamma)
