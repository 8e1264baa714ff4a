"""Adversarial, reconstruction and style losses of the translation stage."""
import math
import torch
import torch.nn.functional as F
from app.errors import NumericalError, ShapeError


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ShapeError('{}: shapes {} and {} differ'.format(
            what, tuple(a.shape), tuple(b.shape)))


def adv_loss_d(d_fake, d_real):
    """Relativistic pairing hinge for the discriminator:
    mean(max(0, 1 + (D(fake) - D(real))))."""
    _same_shape(d_fake, d_real, 'adv_loss_d')
    return F.relu(1.0 + d_fake - d_real).mean()


def adv_loss_g(d_fake, d_real):
    """mean(max(0, 1 + (D(real) - D(fake)))), with D(real) held constant."""
    _same_shape(d_fake, d_real, 'adv_loss_g')
    return F.relu(1.0 + d_real.detach() - d_fake).mean()


def cycle_loss(x, x_rec):
    _same_shape(x, x_rec, 'cycle_loss')
    return (x - x_rec).abs().mean()


def style_loss(s, s_rec):
    _same_shape(s, s_rec, 'style_loss')
    return (s - s_rec).abs().mean()


def _value(component):
    return component.item() if torch.is_tensor(component) else float(component)


def total_loss(adv, cyc, sty, weights):
    """adv + lambda_cyc * cyc + lambda_sty * sty; a non-finite component is
    reported by name."""
    for name, component in (('adv', adv), ('cyc', cyc), ('sty', sty)):
        value = _value(component)
        if not math.isfinite(value):
            raise NumericalError('{} loss is {}'.format(name, value),
                                 component=name)
    return adv + weights.lambda_cyc * cyc + weights.lambda_sty * sty
