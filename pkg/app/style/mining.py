import logging
from typing import NamedTuple
import torch
import torch.nn.functional as F
from app.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)


class TripletIndices(NamedTuple):
    anchor: int
    positive: int
    negative: int


def mine_ephn(embeddings, labels):
    """Easy-positive / hard-negative mining.

    For each anchor with a same-class partner, the positive is the most similar
    same-class sample and the negative the most similar other-class sample.
    Ties go to the lowest index.
    """
    if embeddings.dim() != 2 or embeddings.shape[0] != len(labels):
        raise ShapeError('mine_ephn expects B x d embeddings and B labels')
    labels = torch.as_tensor(labels, device=embeddings.device).reshape(-1)
    if labels.unique().numel() < 2:
        logger.warning('batch holds a single class; no triplets mined')
        return []
    with torch.no_grad():
        sim = embeddings @ embeddings.t()
        same = labels[:, None] == labels[None, :]
        eye = torch.eye(len(labels), dtype=torch.bool, device=sim.device)
        positive_mask = same & ~eye
        negative_mask = ~same
        low = torch.finfo(sim.dtype).min
        positives = sim.masked_fill(~positive_mask, low).argmax(dim=1)
        negatives = sim.masked_fill(~negative_mask, low).argmax(dim=1)
        eligible = positive_mask.any(dim=1) & negative_mask.any(dim=1)
    triplets = [TripletIndices(a, int(positives[a]), int(negatives[a]))
                for a in range(len(labels)) if eligible[a]]
    if not triplets:
        logger.warning('no anchor has a same-class partner; no triplets mined')
    return triplets


def triplet_loss(anchor, positive, negative, temperature=0.1):
    """-log(exp(a.p/t) / (exp(a.p/t) + exp(a.n/t))), averaged over rows."""
    if temperature <= 0:
        raise ConfigError('temperature must be positive')
    ap = (anchor * positive).sum(dim=-1)
    an = (anchor * negative).sum(dim=-1)
    return F.softplus((an - ap) / temperature).mean()


def margin_triplet_loss(anchor, positive, negative, margin=0.2):
    ap = (anchor * positive).sum(dim=-1)
    an = (anchor * negative).sum(dim=-1)
    return F.relu(margin - ap + an).mean()


def batch_triplet_loss(embeddings, labels, cfg):
    """Mines a batch and returns (loss, number of triplets); loss is None when
    nothing could be mined."""
    triplets = mine_ephn(embeddings.detach(), labels)
    if not triplets:
        return None, 0
    index = torch.tensor(triplets, device=embeddings.device)
    a, p, n = (embeddings[index[:, i]] for i in range(3))
    if cfg.style_loss == 'margin':
        return margin_triplet_loss(a, p, n, cfg.style_margin), len(triplets)
    return triplet_loss(a, p, n, cfg.style_temperature), len(triplets)
