"""Stage 2: adversarial translation training against a frozen style encoder."""
import csv
import json
import logging
import math
import os
from typing import NamedTuple, Optional
import torch
from torch.utils.data import DataLoader
from tqdm import tqdm
from app.checkpoint import parameter_hash
from app.data.augment import child_rng
from app.data.loader import ImageStore, PairDataset
from app.errors import DataError, NumericalError, ShapeError
from app.losses import (adv_loss_d, adv_loss_g, cycle_loss, style_loss,
                        total_loss)
from app.models import LossReport
from app.networks.discriminator import MultiTaskDiscriminator, r1_from_scores
from app.networks.generator import Generator
from app.style.encoder import freeze
from app.style.pretrain import load_style_encoder
from app.train.checkpoints import (load_discriminator, load_generator,
                                   load_trainer_state, resolve_checkpoint_dir,
                                   save_training_checkpoint, step_dirname)

logger = logging.getLogger(__name__)

LOSSES_FILE = 'losses.csv'


class TrainResult(NamedTuple):
    step: int
    epoch: int
    checkpoint: Optional[str]
    losses: str
    encoder_hash: str


def _finite(value, component, step):
    if not torch.isfinite(value).all():
        raise NumericalError('{} loss is not finite at step {}'.format(
            component, step), component=component)


def training_step(generator, discriminator, encoder, batch, cfg, g_optimizer,
                  d_optimizer, step=0, branch_offset=1):
    """One discriminator update followed by one generator update.

    ``batch`` is (x normals, y references, reference labels); the reference
    label minus ``branch_offset`` selects the discriminator branch.
    """
    x, y, labels = batch
    branches = labels.long() - branch_offset
    with torch.no_grad():
        s = encoder(y)
        s_tilde = encoder(x)

    fake = generator(x, s)

    apply_r1 = cfg.r1_gamma > 0 and step % cfg.r1_interval == 0
    real = y.detach().requires_grad_(apply_r1)
    d_real = discriminator.discriminate(real, branches)
    d_fake = discriminator.discriminate(fake.detach(), branches)
    loss_d = adv_loss_d(d_fake, d_real)
    r1 = torch.zeros((), device=x.device)
    if apply_r1:
        r1 = r1_from_scores(d_real, real, cfg.r1_gamma) * cfg.r1_interval
    _finite(loss_d, 'adv_d', step)
    _finite(r1, 'r1', step)
    d_optimizer.zero_grad()
    (loss_d + r1).backward()
    d_optimizer.step()

    discriminator.requires_grad_(False)
    try:
        d_fake = discriminator.discriminate(fake, branches)
        with torch.no_grad():
            d_real = discriminator.discriminate(y, branches)
        adv = adv_loss_g(d_fake, d_real)
        cyc = cycle_loss(x, generator(fake, s_tilde))
        sty = style_loss(s, encoder(fake))
        total = total_loss(adv, cyc, sty, cfg.weights)
    finally:
        discriminator.requires_grad_(True)
    g_optimizer.zero_grad()
    total.backward()
    g_optimizer.step()

    return LossReport(step=step, adv_d=loss_d.item(), adv_g=adv.item(),
                      cyc=cyc.item(), sty=sty.item(), r1=r1.item(),
                      total=total.item())


def epoch_pairs(normals, references, seed, epoch):
    """(normal, reference) pairs of one epoch, fixed by (seed, epoch).

    Target domains are stratified: the list of domains is repeated to the
    number of normals and shuffled, so every domain appears in every epoch once
    there are at least as many normals as domains.
    """
    rng = child_rng(seed, epoch)
    order = rng.permutation(len(normals))
    labels = sorted(references)
    repeats = int(math.ceil(len(normals) / float(len(labels))))
    targets = (labels * repeats)[:len(normals)]
    targets = [targets[i] for i in rng.permutation(len(targets))]
    pairs = []
    for i, label in zip(order, targets):
        pool = references[label]
        pairs.append((normals[i], pool[int(rng.integers(len(pool)))]))
    return pairs


def _deterministic():
    torch.backends.cudnn.deterministic = True
    torch.backends.cudnn.benchmark = False


def _write_losses_header(path):
    with open(path, 'w', newline='') as f:
        csv.writer(f).writerow(LossReport.CSV_HEADER)


def _truncate_losses(path, step):
    """Drops rows after ``step`` so a resumed run appends where it left off."""
    if not os.path.exists(path):
        _write_losses_header(path)
        return
    with open(path, newline='') as f:
        rows = list(csv.reader(f))
    kept = [r for r in rows[1:] if r and int(r[0]) <= step]
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(LossReport.CSV_HEADER)
        writer.writerows(kept)


def _dump_failure(out_dir, step, error, last):
    path = os.path.join(out_dir, 'failure_step_{:07d}.json'.format(step))
    with open(path, 'w', encoding='utf-8') as f:
        json.dump({'step': step, 'component': error.component,
                   'message': error.message,
                   'last_report': last.to_dict() if last else None},
                  f, indent=2, sort_keys=True)
    return path


def build_networks(manifest, cfg, encoder):
    branches = manifest.num_domains - (0 if cfg.normal_as_target else 1)
    torch.manual_seed(cfg.seed)
    generator = Generator(cfg.resolution, cfg.channels, encoder.style_dim,
                          cfg.gen_channels, cfg.gen_res_blocks,
                          cfg.gen_mapping_dim)
    discriminator = MultiTaskDiscriminator(cfg.resolution, cfg.channels,
                                           branches, cfg.disc_channels)
    return generator, discriminator


def run_training(manifest, encoder_path, cfg, out_dir, resume=None,
                 device='cpu'):
    """Trains G and D over (normal, reference) pairs of the train split.

    Checkpoints go to ``out_dir/checkpoints`` every ``checkpoint_interval``
    steps and at the end; one CSV row per step goes to ``out_dir/losses.csv``.
    """
    _deterministic()
    device = torch.device(device)
    encoder, encoder_meta = load_style_encoder(encoder_path, device)
    if list(encoder_meta['domains']) != list(manifest.domains):
        raise DataError('style encoder was trained on domains {} but the '
                        'dataset has {}'.format(encoder_meta['domains'],
                                                list(manifest.domains)))
    if encoder_meta['resolution'] != cfg.resolution or \
            encoder_meta['in_channels'] != cfg.channels:
        raise ShapeError('style encoder expects {}x{} images with {} channels, '
                         'config asks for {}x{} with {}'.format(
                             encoder_meta['resolution'],
                             encoder_meta['resolution'],
                             encoder_meta['in_channels'], cfg.resolution,
                             cfg.resolution, cfg.channels))
    freeze(encoder)
    encoder_hash = parameter_hash(encoder)

    normals = manifest.select('train', 0)
    target_labels = list(range(0 if cfg.normal_as_target else 1,
                               manifest.num_domains))
    references = {label: manifest.select('train', label)
                  for label in target_labels}
    if not normals:
        raise DataError('no training images in source domain {!r}'.format(
            manifest.source_domain))
    empty = [manifest.domains[label] for label, pool in references.items()
             if not pool]
    if not target_labels or empty:
        raise DataError('target domains without training images: {}'.format(
            ', '.join(empty) or 'none defined'))

    generator, discriminator = build_networks(manifest, cfg, encoder)
    generator.to(device).train()
    discriminator.to(device).train()
    g_optimizer = torch.optim.Adam(generator.parameters(), cfg.learning_rate,
                                   betas=(cfg.beta1, cfg.beta2))
    d_optimizer = torch.optim.Adam(discriminator.parameters(),
                                   cfg.learning_rate,
                                   betas=(cfg.beta1, cfg.beta2))
    branch_offset = 0 if cfg.normal_as_target else 1

    checkpoint_root = os.path.join(out_dir, 'checkpoints')
    losses_path = os.path.join(out_dir, LOSSES_FILE)
    progress = {'step': 0, 'epoch': 0, 'offset': 0}
    if resume:
        directory = resolve_checkpoint_dir(resume)
        g_state, meta = load_generator(directory, device)
        d_state, _ = load_discriminator(directory, device)
        generator.load_state_dict(g_state.state_dict())
        discriminator.load_state_dict(d_state.state_dict())
        trainer_meta, state = load_trainer_state(directory)
        if trainer_meta.config_hash != cfg.config_hash:
            logger.warning('resuming %s with a different configuration',
                           directory)
        g_optimizer.load_state_dict(state['g_optimizer'])
        d_optimizer.load_state_dict(state['d_optimizer'])
        torch.set_rng_state(state['torch_rng'])
        progress = {'step': trainer_meta.step, 'epoch': trainer_meta.epoch,
                    'offset': trainer_meta.extra['offset']}
        _truncate_losses(losses_path, progress['step'])
        logger.info('resumed from %s at step %d', directory, progress['step'])
    else:
        _write_losses_header(losses_path)

    store = ImageStore(manifest, cfg.resolution, cfg.channels)

    def checkpoint():
        return save_training_checkpoint(
            checkpoint_root, generator, discriminator, encoder_path,
            g_optimizer, d_optimizer, progress, cfg, manifest.domains)

    saved = None
    if cfg.epochs == 0 or not resume:
        saved = checkpoint()
    batches_per_epoch = int(math.ceil(len(normals) / float(cfg.batch_size)))
    last = None
    done = False
    with open(losses_path, 'a', newline='') as f:
        writer = csv.writer(f)
        while progress['epoch'] < cfg.epochs and not done:
            pairs = epoch_pairs(normals, references, cfg.seed,
                                progress['epoch'])
            start = progress['offset'] * cfg.batch_size
            loader = DataLoader(PairDataset(pairs[start:], store),
                                batch_size=cfg.batch_size, shuffle=False,
                                num_workers=cfg.num_workers)
            bar = tqdm(loader, desc='epoch {}'.format(progress['epoch'] + 1),
                       initial=progress['offset'], total=batches_per_epoch,
                       disable=None)
            for x, y, labels in bar:
                step = progress['step'] + 1
                batch = (x.to(device), y.to(device), labels.to(device))
                try:
                    last = training_step(generator, discriminator, encoder,
                                         batch, cfg, g_optimizer, d_optimizer,
                                         step, branch_offset)
                except NumericalError as e:
                    f.flush()
                    dump = _dump_failure(out_dir, step, e, last)
                    logger.error('training diverged (%s); diagnostics in %s',
                                 e.component, dump)
                    e.checkpoint = saved
                    raise
                last.epoch = progress['epoch']
                writer.writerow(last.to_row())
                progress['step'] = step
                progress['offset'] += 1
                if progress['offset'] >= batches_per_epoch:
                    progress['epoch'] += 1
                    progress['offset'] = 0
                if step % cfg.checkpoint_interval == 0:
                    f.flush()
                    saved = checkpoint()
                if cfg.max_steps and step >= cfg.max_steps:
                    done = True
                    break
            if last is not None:
                logger.info('epoch %d step %d: adv_d %.4f adv_g %.4f cyc %.4f '
                            'sty %.4f', last.epoch + 1, last.step, last.adv_d,
                            last.adv_g, last.cyc, last.sty)

    if saved is None or \
            os.path.basename(saved) != step_dirname(progress['step']):
        saved = checkpoint()
    if parameter_hash(encoder) != encoder_hash:
        raise NumericalError('style encoder parameters changed during training',
                             component='encoder', checkpoint=saved)
    return TrainResult(progress['step'], progress['epoch'], saved, losses_path,
                       encoder_hash)
