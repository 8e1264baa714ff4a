"""Stage 1: cluster the style codes of all domains with EPHN triplets."""
import logging
import math
import torch
from torch.utils.data import Sampler
from tqdm import tqdm
from app.checkpoint import load_checkpoint, save_checkpoint
from app.data.augment import child_rng
from app.data.loader import ImageStore
from app.errors import DataError, NumericalError
from app.style.encoder import STAGE, StyleEncoder, encode
from app.style.mining import batch_triplet_loss

logger = logging.getLogger(__name__)


class BalancedBatchSampler(Sampler):
    """Class-balanced batches so that every batch offers positives to mine.

    The batch order depends only on (seed, epoch).
    """

    def __init__(self, labels, batch_size, seed=0):
        self.labels = [int(label) for label in labels]
        self.classes = sorted(set(self.labels))
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = 0
        self.classes_per_batch = min(len(self.classes), max(2, batch_size // 2))
        self.per_class = max(2, batch_size // self.classes_per_batch)

    def set_epoch(self, epoch):
        self.epoch = epoch

    def __len__(self):
        return max(1, math.ceil(len(self.labels) / self.batch_size))

    def __iter__(self):
        rng = child_rng(self.seed, self.epoch)
        pools = {c: [i for i, label in enumerate(self.labels) if label == c]
                 for c in self.classes}
        queues = {c: [pool[i] for i in rng.permutation(len(pool))]
                  for c, pool in pools.items()}
        cursor = dict.fromkeys(self.classes, 0)
        for _ in range(len(self)):
            chosen = [self.classes[i] for i in
                      sorted(rng.choice(len(self.classes),
                                        self.classes_per_batch, replace=False))]
            batch = []
            for c in chosen:
                queue = queues[c]
                for _ in range(self.per_class):
                    batch.append(queue[cursor[c] % len(queue)])
                    cursor[c] += 1
            yield batch


def encode_records(encoder, store, records, device, batch_size=64):
    codes = []
    for start in range(0, len(records), batch_size):
        chunk = store.batch(records[start:start + batch_size]).to(device)
        codes.append(encode(encoder, chunk).cpu())
    return torch.cat(codes) if codes else torch.empty(0, encoder.style_dim)


def cluster_quality(train_codes, train_labels, test_codes, test_labels):
    """Nearest-centroid accuracy, leave-one-out retrieval accuracy and the mean
    intra-class minus inter-class cosine similarity of the held-out codes."""
    train_labels = torch.as_tensor(train_labels)
    test_labels = torch.as_tensor(test_labels)
    classes = sorted(set(train_labels.tolist()))
    centroids = torch.stack([train_codes[train_labels == c].mean(dim=0)
                             for c in classes])
    centroids = torch.nn.functional.normalize(centroids, dim=1)
    predicted = torch.as_tensor(classes)[(test_codes @ centroids.t()).argmax(1)]
    accuracy = (predicted == test_labels).float().mean().item()

    sim = test_codes @ test_codes.t()
    n = len(test_labels)
    same = test_labels[:, None] == test_labels[None, :]
    off_diagonal = ~torch.eye(n, dtype=torch.bool)
    intra_mask, inter_mask = same & off_diagonal, ~same
    intra = sim[intra_mask].mean().item() if intra_mask.any() else 0.0
    inter = sim[inter_mask].mean().item() if inter_mask.any() else 0.0
    retrieval = 0.0
    if n > 1:
        nearest = sim.masked_fill(~off_diagonal, -2.0).argmax(dim=1)
        retrieval = (test_labels[nearest] == test_labels).float().mean().item()
    return {'accuracy': accuracy, 'retrieval': retrieval, 'intra': intra,
            'inter': inter, 'gap': intra - inter}


def _snapshot(module):
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def pretrain_style_encoder(manifest, cfg, device, checkpoint_path=None):
    """Trains a fresh encoder on the train split of every domain and returns
    ``(encoder, report)``; the report holds per-epoch diagnostics measured on
    the test split (train split when there is none)."""
    if manifest.num_domains < 2:
        raise DataError('style pre-training needs at least two domains')
    train = manifest.select('train')
    held_out = manifest.select('test') or train
    store = ImageStore(manifest, cfg.resolution, cfg.channels)

    torch.manual_seed(cfg.seed)
    encoder = StyleEncoder(cfg.resolution, cfg.channels, cfg.style_channels,
                           cfg.style_dim).to(device)
    optimizer = torch.optim.Adam(encoder.parameters(),
                                 lr=cfg.style_learning_rate,
                                 betas=(cfg.beta1, cfg.beta2))
    sampler = BalancedBatchSampler([r.label for r in train],
                                   cfg.style_batch_size, cfg.seed)

    def diagnostics():
        return cluster_quality(
            encode_records(encoder, store, train, device),
            [r.label for r in train],
            encode_records(encoder, store, held_out, device),
            [r.label for r in held_out])

    report = {'untrained': cfg.style_epochs == 0, 'epochs': [],
              'initial': diagnostics()}
    logger.info('style encoder at initialization: %s', report['initial'])
    last_finite = _snapshot(encoder)
    for epoch in tqdm(range(cfg.style_epochs), desc='stage 1', disable=None):
        encoder.train()
        sampler.set_epoch(epoch)
        losses, mined = [], 0
        for indices in sampler:
            records = [train[i] for i in indices]
            images = store.batch(records).to(device)
            labels = torch.tensor([r.label for r in records], device=device)
            loss, count = batch_triplet_loss(encoder(images), labels, cfg)
            if loss is None:
                continue
            if not torch.isfinite(loss):
                encoder.load_state_dict(last_finite)
                saved = None
                if checkpoint_path:
                    saved = save_style_encoder(checkpoint_path, encoder,
                                               manifest, cfg, report)
                raise NumericalError('triplet loss diverged in epoch {}'.format(
                    epoch), component='triplet', checkpoint=saved)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            last_finite = _snapshot(encoder)
            losses.append(loss.item())
            mined += count
        stats = diagnostics()
        stats.update(epoch=epoch + 1, triplets=mined,
                     loss=sum(losses) / len(losses) if losses else float('nan'))
        report['epochs'].append(stats)
        logger.info('stage 1 epoch %d: loss %.4f accuracy %.3f gap %.3f',
                    epoch + 1, stats['loss'], stats['accuracy'], stats['gap'])
    report['final'] = report['epochs'][-1] if report['epochs'] else \
        report['initial']
    encoder.eval()
    if checkpoint_path:
        save_style_encoder(checkpoint_path, encoder, manifest, cfg, report)
    return encoder, report


def save_style_encoder(path, encoder, manifest, cfg, report=None):
    meta = {'stage': STAGE, 'domains': list(manifest.domains),
            'config_hash': cfg.config_hash,
            'untrained': bool(report and report['untrained'])}
    meta.update(encoder.meta())
    return save_checkpoint(path, {'encoder': encoder.state_dict()}, meta)


def load_style_encoder(path, device='cpu'):
    meta, state = load_checkpoint(path, STAGE)
    encoder = StyleEncoder.from_meta(meta)
    encoder.load_state_dict(state['encoder'])
    return encoder.to(device).eval(), meta
