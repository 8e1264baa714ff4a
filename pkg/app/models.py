import dataclasses
from dataclasses import dataclass, field
import hashlib
import json
import os
from typing import NamedTuple, Optional, Tuple
from dotenv import dotenv_values
from app.errors import ConfigError, DataError

SPLITS = ('train', 'test')
MANIFEST_FORMAT = 'octmorph-manifest-v1'


class ImageRecord(NamedTuple):
    path: str
    label: int
    split: str
    source: Optional[str] = None
    params: Optional[dict] = None

    @property
    def synthetic(self):
        return self.source is not None

    def to_dict(self):
        data = {'path': self.path, 'label': self.label, 'split': self.split}
        if self.source is not None:
            data['source'] = self.source
            data['params'] = self.params
        return data

    @staticmethod
    def from_dict(data):
        return ImageRecord(data['path'], int(data['label']), data['split'],
                           data.get('source'), data.get('params'))


@dataclass(frozen=True)
class DatasetManifest:
    root: str
    domains: Tuple[str, ...]
    records: Tuple[ImageRecord, ...]
    seed: Optional[int] = None
    skipped: Tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.domains)
        seen = {}
        for record in self.records:
            if not 0 <= record.label < n:
                raise DataError('record {} has label {} outside 0..{}'.format(
                    record.path, record.label, n - 1))
            if record.split not in SPLITS:
                raise DataError('record {} has unknown split {!r}'.format(
                    record.path, record.split))
            other = seen.setdefault(record.path, record.split)
            if other != record.split:
                raise DataError('{} appears in both train and test'.format(
                    record.path))

    @property
    def num_domains(self):
        return len(self.domains)

    @property
    def source_domain(self):
        return self.domains[0]

    @property
    def target_labels(self):
        return list(range(1, len(self.domains)))

    def label_of(self, domain):
        try:
            return self.domains.index(domain)
        except ValueError:
            raise DataError('unknown domain {!r}'.format(domain))

    def select(self, split=None, label=None):
        return [r for r in self.records
                if (split is None or r.split == split) and
                (label is None or r.label == label)]

    def counts(self, split=None):
        return {domain: len(self.select(split, label))
                for label, domain in enumerate(self.domains)}

    def abspath(self, record):
        path = record.source if record.source is not None else record.path
        return os.path.join(self.root, *path.split('/'))

    def header(self):
        return {'format': MANIFEST_FORMAT, 'root': self.root,
                'domains': list(self.domains), 'seed': self.seed}

    def serialize(self):
        lines = [json.dumps(self.header(), sort_keys=True)]
        for record in self.records:
            lines.append(json.dumps(record.to_dict(), sort_keys=True))
        return '\n'.join(lines) + '\n'

    def write(self, path):
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(self.serialize())
        return path

    @staticmethod
    def read(path):
        try:
            with open(path, encoding='utf-8') as f:
                lines = [line for line in f.read().splitlines() if line]
        except OSError as e:
            raise DataError('cannot read manifest {}: {}'.format(path, e))
        if not lines:
            raise DataError('manifest {} is empty'.format(path))
        try:
            header = json.loads(lines[0])
            if not isinstance(header, dict) or \
                    header.get('format') != MANIFEST_FORMAT:
                raise DataError('{} is not an octmorph manifest'.format(path))
            records = tuple(ImageRecord.from_dict(json.loads(line))
                            for line in lines[1:])
            return DatasetManifest(header['root'], tuple(header['domains']),
                                   records, header.get('seed'))
        except (ValueError, KeyError, TypeError) as e:
            raise DataError('corrupt manifest {}: {}'.format(path, e))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def __repr__(self):
        return '<DatasetManifest {} domains={} records={}>'.format(
            self.root, list(self.domains), len(self.records))


@dataclass(frozen=True)
class AugmentConfig:
    shift_frac: Tuple[float, float] = (-0.05, 0.05)
    rotate_deg: Tuple[float, float] = (-15.0, 15.0)
    scale_max_frac: float = 0.20
    brightness_frac: Tuple[float, float] = (-0.10, 0.10)
    elastic_enabled: bool = True
    elastic_alpha: float = 34.0
    elastic_sigma: float = 4.0
    seed: int = 0

    @staticmethod
    def identity(seed=0):
        return AugmentConfig((0.0, 0.0), (0.0, 0.0), 0.0, (0.0, 0.0),
                             elastic_enabled=False, seed=seed)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class AugmentParams:
    shift_x: float = 0.0
    shift_y: float = 0.0
    rotation: float = 0.0
    scale: float = 0.0
    brightness: float = 0.0
    elastic_seed: Optional[int] = None
    elastic_alpha: float = 0.0
    elastic_sigma: float = 0.0

    def to_dict(self):
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(data):
        return AugmentParams(**data)


@dataclass(frozen=True)
class ToySpec:
    n_domains: int = 3
    train_per_domain: int = 200
    test_per_domain: int = 40
    resolution: int = 64
    bump_amplitude: float = 90.0
    hole_radius: float = 0.12
    speckle_density: float = 0.04
    seed: int = 0

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class LossWeights:
    lambda_cyc: float = 1.0
    lambda_sty: float = 1.0


@dataclass
class LossReport:
    step: int
    adv_d: float
    adv_g: float
    cyc: float
    sty: float
    r1: float
    total: float
    epoch: int = 0

    CSV_HEADER = ('step', 'adv_d', 'adv_g', 'cyc', 'sty', 'r1', 'total')

    def to_row(self):
        return [self.step] + [repr(float(getattr(self, name)))
                              for name in self.CSV_HEADER[1:]]

    def to_dict(self):
        return dataclasses.asdict(self)


def _parse_bool(value):
    lowered = str(value).strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError('not a boolean: {!r}'.format(value))


def _parse_ints(value):
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return tuple(int(v) for v in str(value).split(',') if v.strip())


def _format_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ','.join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class TrainConfig:
    resolution: int = 128
    channels: int = 1
    batch_size: int = 8
    learning_rate: float = 0.0001
    epochs: int = 100
    beta1: float = 0.5
    beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    r1_gamma: float = 1.0
    r1_interval: int = 1
    seed: int = 0
    checkpoint_interval: int = 1000
    max_steps: int = 0
    device: str = 'auto'
    num_workers: int = 0
    style_dim: int = 64
    style_channels: Tuple[int, ...] = (16, 32, 64)
    style_epochs: int = 20
    style_batch_size: int = 32
    style_learning_rate: float = 0.0001
    style_loss: str = 'softmax'
    style_temperature: float = 0.1
    style_margin: float = 0.2
    gen_channels: int = 32
    gen_res_blocks: int = 4
    gen_mapping_dim: int = 128
    disc_channels: int = 32
    normal_as_target: bool = False
    joint_finetune: bool = False

    STYLE_LOSSES = ('softmax', 'margin')

    def __post_init__(self):
        if self.joint_finetune:
            raise ConfigError('the joint fine-tuning stage is not supported; '
                              'set joint_finetune=false')
        checks = [
            (self.resolution >= 8 and self.resolution % 4 == 0,
             'resolution must be a multiple of 4 and at least 8'),
            (self.channels in (1, 3), 'channels must be 1 or 3'),
            (self.batch_size >= 1, 'batch_size must be positive'),
            (self.learning_rate > 0, 'learning_rate must be positive'),
            (self.epochs >= 0, 'epochs must be non-negative'),
            (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1,
             'Adam betas must lie in [0, 1)'),
            (self.weights.lambda_cyc >= 0 and self.weights.lambda_sty >= 0,
             'loss weights must be non-negative'),
            (self.r1_gamma >= 0, 'r1_gamma must be non-negative'),
            (self.r1_interval >= 1, 'r1_interval must be at least 1'),
            (self.checkpoint_interval >= 1,
             'checkpoint_interval must be at least 1'),
            (self.max_steps >= 0, 'max_steps must be non-negative'),
            (self.num_workers >= 0, 'num_workers must be non-negative'),
            (self.style_dim >= 1, 'style_dim must be positive'),
            (len(self.style_channels) >= 1 and min(self.style_channels) >= 1,
             'style_channels needs at least one positive width'),
            (self.style_epochs >= 0, 'style_epochs must be non-negative'),
            (self.style_batch_size >= 2,
             'style_batch_size must be at least 2'),
            (self.style_learning_rate > 0,
             'style_learning_rate must be positive'),
            (self.style_loss in self.STYLE_LOSSES,
             'style_loss must be one of ' + ', '.join(self.STYLE_LOSSES)),
            (self.style_temperature > 0,
             'style_temperature must be positive'),
            (self.gen_channels >= 1 and self.disc_channels >= 1,
             'network widths must be positive'),
            (self.gen_res_blocks >= 0, 'gen_res_blocks must be non-negative'),
            (self.gen_mapping_dim >= 1, 'gen_mapping_dim must be positive'),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @classmethod
    def keys(cls):
        names = []
        for f in dataclasses.fields(cls):
            if f.name == 'weights':
                names.extend('weights.' + w.name
                             for w in dataclasses.fields(LossWeights))
            else:
                names.append(f.name)
        return names

    def to_flat(self):
        flat = {}
        for f in dataclasses.fields(self):
            if f.name == 'weights':
                for w in dataclasses.fields(LossWeights):
                    flat['weights.' + w.name] = getattr(self.weights, w.name)
            else:
                flat[f.name] = getattr(self, f.name)
        return flat

    @classmethod
    def from_mapping(cls, mapping, base=None):
        flat = (base or cls()).to_flat()
        for key, raw in mapping.items():
            key = key.strip()
            if key not in flat:
                raise ConfigError('unknown configuration key {!r}'.format(key))
            default = flat[key]
            try:
                if isinstance(default, bool):
                    value = _parse_bool(raw)
                elif isinstance(default, int):
                    value = int(raw)
                elif isinstance(default, float):
                    value = float(raw)
                elif isinstance(default, tuple):
                    value = _parse_ints(raw)
                else:
                    value = str(raw).strip()
            except (TypeError, ValueError):
                raise ConfigError('invalid value {!r} for {}'.format(raw, key))
            flat[key] = value
        weights = LossWeights(flat.pop('weights.lambda_cyc'),
                              flat.pop('weights.lambda_sty'))
        return cls(weights=weights, **flat)

    @classmethod
    def from_file(cls, path, overrides=None):
        if not os.path.exists(path):
            raise ConfigError('config file {} does not exist'.format(path))
        values = dotenv_values(path)
        missing = [k for k, v in values.items() if v is None]
        if missing:
            raise ConfigError('keys without a value in {}: {}'.format(
                path, ', '.join(missing)))
        values.update(overrides or {})
        return cls.from_mapping(values)

    def with_overrides(self, overrides):
        return type(self).from_mapping(overrides, base=self)

    def to_env_text(self):
        flat = self.to_flat()
        return ''.join('{}={}\n'.format(key, _format_value(flat[key]))
                       for key in sorted(flat))

    def write(self, path):
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(self.to_env_text())
        return path

    @property
    def config_hash(self):
        return hashlib.sha256(self.to_env_text().encode('utf-8')).hexdigest()


def parse_overrides(pairs):
    """Turns ``('epochs=2', 'weights.lambda_cyc=10')`` into a mapping."""
    overrides = {}
    for pair in pairs or ():
        if '=' not in pair:
            raise ConfigError('override {!r} is not key=value'.format(pair))
        key, value = pair.split('=', 1)
        overrides[key.strip()] = value.strip()
    return overrides


@dataclass
class CheckpointMeta:
    """Metadata block of a checkpoint file; ``extra`` is stored flat next to
    the named fields."""
    stage: str
    step: int = 0
    epoch: int = 0
    config_hash: str = ''
    domains: Tuple[str, ...] = ()
    resolution: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        data = {'stage': self.stage, 'step': self.step, 'epoch': self.epoch,
                'config_hash': self.config_hash,
                'domains': list(self.domains), 'resolution': self.resolution}
        for key, value in self.extra.items():
            data.setdefault(key, value)
        return data

    @staticmethod
    def from_dict(data):
        names = ('stage', 'step', 'epoch', 'config_hash', 'domains',
                 'resolution')
        return CheckpointMeta(
            data['stage'], int(data.get('step', 0)), int(data.get('epoch', 0)),
            data.get('config_hash', ''), tuple(data.get('domains', ())),
            int(data.get('resolution', 0)),
            {k: v for k, v in data.items() if k not in names})


@dataclass
class DomainMetrics:
    domain: str
    fid: float
    baseline_fid: float
    diversity: float
    generated: int
    real: int


@dataclass
class MetricReport:
    dataset: str
    extractor: str
    k: int
    domains: list = field(default_factory=list)

    @property
    def fid(self):
        return sum(d.fid for d in self.domains) / max(1, len(self.domains))

    @property
    def baseline_fid(self):
        return (sum(d.baseline_fid for d in self.domains) /
                max(1, len(self.domains)))

    @property
    def diversity(self):
        return (sum(d.diversity for d in self.domains) /
                max(1, len(self.domains)))

    @property
    def generated(self):
        return sum(d.generated for d in self.domains)

    def csv_header(self):
        return ['model', '{} FID↓'.format(self.dataset),
                '{} diversity↑'.format(self.dataset)]

    def csv_row(self, model='octmorph'):
        return [model, '{:.4f}'.format(self.fid),
                '{:.5f}'.format(self.diversity)]

    def to_dict(self):
        return {
            'dataset': self.dataset,
            'extractor': self.extractor,
            'k': self.k,
            'fid': self.fid,
            'baseline_fid': self.baseline_fid,
            'diversity': self.diversity,
            'generated': self.generated,
            'domains': [dataclasses.asdict(d) for d in self.domains],
        }
