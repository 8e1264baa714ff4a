import logging
import torch
from torch.utils.data import Dataset
from app.data.augment import apply_augment, load_image, normalize
from app.errors import DataError
from app.models import AugmentParams

logger = logging.getLogger(__name__)


class ImageStore(object):
    """Decodes, augments (for synthetic records) and normalizes manifest
    records, keeping the resulting tensors in memory."""

    def __init__(self, manifest, resolution, channels=1, cache=True):
        self.manifest = manifest
        self.resolution = resolution
        self.channels = channels
        self.cache = {} if cache else None

    def load(self, record):
        if self.cache is not None and record.path in self.cache:
            return self.cache[record.path]
        raw = load_image(self.manifest.abspath(record))
        if raw is None:
            raise DataError('cannot decode {}'.format(record.path))
        if record.params is not None:
            raw = apply_augment(raw, AugmentParams.from_dict(record.params))
        tensor = normalize(raw, self.resolution, self.channels)
        if self.cache is not None:
            self.cache[record.path] = tensor
        return tensor

    def batch(self, records):
        return torch.stack([self.load(r) for r in records])


class RecordDataset(Dataset):
    def __init__(self, records, store):
        self.records = list(records)
        self.store = store

    def __len__(self):
        return len(self.records)

    def __getitem__(self, index):
        record = self.records[index]
        return self.store.load(record), record.label


class PairDataset(Dataset):
    """(normal image, reference image, reference label) triples of one epoch."""

    def __init__(self, pairs, store):
        self.pairs = list(pairs)
        self.store = store

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, index):
        normal, reference = self.pairs[index]
        return (self.store.load(normal), self.store.load(reference),
                reference.label)
