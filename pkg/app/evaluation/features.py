"""Feature extractors behind FID and diversity.

Scores computed with different extractors are not comparable, so every
extractor carries an identifier that ends up in the metric report.
"""
import logging
import os
import torch
from torch import nn
import torch.nn.functional as F
from torch.utils.data import DataLoader
from tqdm import tqdm
from app.checkpoint import load_checkpoint, parameter_hash, save_checkpoint
from app.data.loader import ImageStore, RecordDataset
from app.errors import ConfigError, DataError, ShapeError
from app.style.encoder import encode

logger = logging.getLogger(__name__)

STAGE = 'feature_extractor_v1'
SOURCES = ('classifier', 'style', 'pixels')


class FeatureClassifier(nn.Module):
    """Two strided convolutions, a feature layer and a domain classifier."""

    def __init__(self, resolution, in_channels=1, num_classes=2,
                 feature_dim=32, width=16):
        super(FeatureClassifier, self).__init__()
        self.resolution = resolution
        self.in_channels = in_channels
        self.num_classes = num_classes
        self.feature_dim = feature_dim
        self.width = width
        self.conv1 = nn.Conv2d(in_channels, width, 3, 2, 1)
        self.conv2 = nn.Conv2d(width, width * 2, 3, 2, 1)
        self.pool = nn.AdaptiveAvgPool2d(4)
        self.fc = nn.Linear(width * 2 * 16, feature_dim)
        self.classifier = nn.Linear(feature_dim, num_classes)

    def features(self, x):
        if x.dim() != 4 or x.shape[1] != self.in_channels or \
                x.shape[-1] != self.resolution:
            raise ShapeError('feature extractor trained for {}x{}x{} inputs, '
                             'got {}'.format(self.in_channels, self.resolution,
                                             self.resolution, tuple(x.shape)))
        h = F.relu(self.conv1(x))
        h = self.pool(F.relu(self.conv2(h)))
        return self.fc(h.flatten(1))

    def forward(self, x):
        return self.classifier(F.relu(self.features(x)))

    def meta(self):
        return {'resolution': self.resolution, 'in_channels': self.in_channels,
                'num_classes': self.num_classes,
                'feature_dim': self.feature_dim, 'width': self.width}

    @staticmethod
    def from_meta(meta):
        return FeatureClassifier(meta['resolution'], meta['in_channels'],
                                 meta['num_classes'], meta['feature_dim'],
                                 meta['width'])


@torch.no_grad()
def classification_accuracy(model, store, records, device, batch_size=64):
    model.eval()
    correct = 0
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        logits = model(store.batch(chunk).to(device))
        labels = torch.tensor([r.label for r in chunk], device=device)
        correct += (logits.argmax(1) == labels).sum().item()
    return correct / max(1, len(records))


def train_feature_extractor(manifest, resolution, channels=1, epochs=5,
                            batch_size=32, learning_rate=1e-3, seed=0,
                            device='cpu'):
    """Fits the classifier on the train split of every domain and returns
    ``(model, held-out accuracy)``."""
    train = manifest.select('train')
    held_out = manifest.select('test') or train
    if not train:
        raise DataError('no training images for the feature extractor')
    store = ImageStore(manifest, resolution, channels)
    torch.manual_seed(seed)
    model = FeatureClassifier(resolution, channels, manifest.num_domains)
    model.to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate)
    generator = torch.Generator().manual_seed(seed)
    loader = DataLoader(RecordDataset(train, store), batch_size=batch_size,
                        shuffle=True, generator=generator)
    for _ in tqdm(range(epochs), desc='feature extractor', disable=None):
        model.train()
        for images, labels in loader:
            loss = F.cross_entropy(model(images.to(device)), labels.to(device))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    accuracy = classification_accuracy(model, store, held_out, device)
    logger.info('feature extractor held-out accuracy %.3f', accuracy)
    return model.eval(), accuracy


def save_feature_extractor(path, model, manifest, accuracy=None):
    meta = {'stage': STAGE, 'domains': list(manifest.domains),
            'accuracy': accuracy}
    meta.update(model.meta())
    return save_checkpoint(path, {'classifier': model.state_dict()}, meta)


def load_feature_extractor(path, device='cpu'):
    meta, state = load_checkpoint(path, STAGE)
    model = FeatureClassifier.from_meta(meta)
    model.load_state_dict(state['classifier'])
    return model.to(device).eval(), meta


class FeatureFunction(object):
    """Callable mapping an image batch to an N x k feature matrix."""

    def __init__(self, name, fn):
        self.name = name
        self.fn = fn

    def __call__(self, images):
        with torch.no_grad():
            return self.fn(images).reshape(images.shape[0], -1)

    def __repr__(self):
        return '<FeatureFunction {}>'.format(self.name)


def pixel_features():
    return FeatureFunction('pixels', lambda images: images)


def style_features(encoder):
    return FeatureFunction('style:' + parameter_hash(encoder)[:12],
                           lambda images: encode(encoder, images))


def classifier_features(model):
    model.eval()
    return FeatureFunction('classifier:' + parameter_hash(model)[:12],
                           model.features)


def make_feature_fn(source, manifest, resolution, channels=1, encoder=None,
                    weights=None, out_dir=None, seed=0, device='cpu'):
    """Builds the extractor named by ``source``. Without ``weights`` the
    classifier is trained on ``manifest`` and saved under ``out_dir``."""
    if source not in SOURCES:
        raise ConfigError('unknown feature source {!r}; choose one of {}'
                          .format(source, ', '.join(SOURCES)))
    if source == 'pixels':
        return pixel_features()
    if source == 'style':
        if encoder is None:
            raise ConfigError('style features need a style encoder')
        return style_features(encoder)
    if weights:
        model, meta = load_feature_extractor(weights, device)
        if list(meta['domains']) != list(manifest.domains):
            logger.warning('feature extractor %s was trained on domains %s',
                           weights, meta['domains'])
    else:
        model, accuracy = train_feature_extractor(
            manifest, resolution, channels, seed=seed,
            device=device)
        if out_dir:
            save_feature_extractor(os.path.join(out_dir, 'feature_extractor.pt'),
                                   model, manifest, accuracy)
    return classifier_features(model)
