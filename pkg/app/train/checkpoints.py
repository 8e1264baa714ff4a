"""Stage-2 checkpoint directories.

A checkpoint is a directory ``step_XXXXXXX`` holding the generator, the
discriminator (with its spectral-norm ``u`` vectors), the frozen style encoder
and the optimizer/progress state. ``LATEST`` in the parent names the newest one.
"""
import logging
import os
import shutil
import torch
from app.checkpoint import load_checkpoint, save_checkpoint
from app.errors import DataError
from app.models import CheckpointMeta
from app.networks.discriminator import STAGE as DISCRIMINATOR_STAGE
from app.networks.discriminator import MultiTaskDiscriminator
from app.networks.generator import STAGE as GENERATOR_STAGE
from app.networks.generator import Generator
from app.style.pretrain import load_style_encoder

logger = logging.getLogger(__name__)

TRAINER_STAGE = 'trainer_state_v1'
GENERATOR_FILE = 'generator.pt'
DISCRIMINATOR_FILE = 'discriminator.pt'
ENCODER_FILE = 'style_encoder.pt'
TRAINER_FILE = 'trainer_state.pt'
LATEST = 'LATEST'


def step_dirname(step):
    return 'step_{:07d}'.format(step)


def save_training_checkpoint(root, generator, discriminator, encoder_path,
                             g_optimizer, d_optimizer, progress, cfg, domains):
    """Writes one checkpoint directory under ``root`` and points LATEST at it.

    ``progress`` carries step, epoch and the batch offset inside the epoch.
    """
    directory = os.path.join(root, step_dirname(progress['step']))
    if not os.path.isdir(directory):
        os.makedirs(directory)

    def meta(stage, **extra):
        return CheckpointMeta(stage, progress['step'], progress['epoch'],
                              cfg.config_hash, tuple(domains), cfg.resolution,
                              extra).to_dict()

    save_checkpoint(os.path.join(directory, GENERATOR_FILE),
                    {'generator': generator.state_dict()},
                    meta(GENERATOR_STAGE, **generator.meta()))
    save_checkpoint(os.path.join(directory, DISCRIMINATOR_FILE),
                    {'discriminator': discriminator.state_dict()},
                    meta(DISCRIMINATOR_STAGE,
                         normal_as_target=cfg.normal_as_target,
                         **discriminator.meta()))
    save_checkpoint(os.path.join(directory, TRAINER_FILE),
                    {'g_optimizer': g_optimizer.state_dict(),
                     'd_optimizer': d_optimizer.state_dict(),
                     'torch_rng': torch.get_rng_state()},
                    meta(TRAINER_STAGE, offset=progress['offset'],
                         config=cfg.to_env_text()))
    target = os.path.join(directory, ENCODER_FILE)
    if os.path.abspath(encoder_path) != os.path.abspath(target):
        shutil.copyfile(encoder_path, target)
    with open(os.path.join(root, LATEST), 'w', encoding='utf-8') as f:
        f.write(step_dirname(progress['step']) + '\n')
    return directory


def resolve_checkpoint_dir(path):
    """Accepts a checkpoint directory, a ``checkpoints`` directory or a run
    directory and returns the concrete checkpoint directory."""
    for candidate in (path, os.path.join(path, 'checkpoints')):
        if os.path.isfile(os.path.join(candidate, GENERATOR_FILE)):
            return candidate
        latest = os.path.join(candidate, LATEST)
        if os.path.isfile(latest):
            with open(latest, encoding='utf-8') as f:
                name = f.read().strip()
            return os.path.join(candidate, name)
    raise DataError('no training checkpoint found at {}'.format(path))


def load_generator(directory, device='cpu'):
    meta, state = load_checkpoint(os.path.join(directory, GENERATOR_FILE),
                                  GENERATOR_STAGE)
    generator = Generator.from_meta(meta)
    generator.load_state_dict(state['generator'])
    return generator.to(device).eval(), meta


def load_discriminator(directory, device='cpu'):
    meta, state = load_checkpoint(os.path.join(directory, DISCRIMINATOR_FILE),
                                  DISCRIMINATOR_STAGE)
    discriminator = MultiTaskDiscriminator.from_meta(meta)
    discriminator.load_state_dict(state['discriminator'])
    return discriminator.to(device), meta


def load_models(path, device='cpu'):
    """(generator, style encoder, generator metadata) of a checkpoint."""
    directory = resolve_checkpoint_dir(path)
    generator, meta = load_generator(directory, device)
    encoder, encoder_meta = load_style_encoder(
        os.path.join(directory, ENCODER_FILE), device)
    if list(encoder_meta['domains']) != list(meta['domains']):
        raise DataError('{} mixes a generator and a style encoder trained on '
                        'different domains'.format(directory))
    return generator, encoder, meta


def load_trainer_state(directory):
    meta, state = load_checkpoint(os.path.join(directory, TRAINER_FILE),
                                  TRAINER_STAGE)
    return CheckpointMeta.from_dict(meta), state
