#!/usr/bin/env python
import csv
import math
import os
import tempfile
import unittest
from unittest import mock
import numpy as np
from PIL import Image
from scipy import linalg
import torch
from torch import nn
from app import cli, create_app, resolve_device
from app.checkpoint import load_checkpoint, parameter_hash, save_checkpoint
from app.data import (ImageStore, generate_toy, load_manifest, normalize,
                      open_manifest, sample_split)
from app.data.augment import (apply_augment, augment, child_rng,
                              sample_augment_params)
from app.errors import ConfigError, DataError, NumericalError, ShapeError
from app.evaluation import (build_grid_cells, diversity_score, fid,
                            frechet_distance, product_sqrtm, reference_grid,
                            reference_synthesis, train_feature_extractor,
                            write_cluster_report)
from app.evaluation.features import pixel_features
from app.evaluation.synthesis import Sample
from app.losses import (adv_loss_d, adv_loss_g, cycle_loss, style_loss,
                        total_loss)
from app.models import (AugmentConfig, AugmentParams, DatasetManifest,
                        ImageRecord, LossReport, LossWeights, ToySpec,
                        TrainConfig, parse_overrides)
from app.networks import (Generator, MappingNetwork, MultiTaskDiscriminator,
                          adain, generate, map_style, r1_penalty,
                          spectral_normalize)
from app.style import (StyleEncoder, cluster_quality, encode, freeze,
                       gram_matrix, load_style_encoder, margin_triplet_loss,
                       mine_ephn, pretrain_style_encoder, save_style_encoder,
                       triplet_loss)
from app.style.mining import batch_triplet_loss
from app.train import run_training, training_step
from app.train.checkpoints import (load_generator, load_trainer_state,
                                   resolve_checkpoint_dir,
                                   save_training_checkpoint)
from app.train.trainer import build_networks, epoch_pairs
from config import Config
from octmorph import main

SLOW = bool(os.environ.get('OCTMORPH_SLOW_TESTS'))


class TestConfig(Config):
    TESTING = True
    OCTMORPH_DEVICE = 'cpu'
    FEATURE_EXTRACTOR_WEIGHTS = None


def small_config(**changes):
    values = dict(resolution=16, batch_size=2, epochs=1, style_channels=(4, 8),
                  style_dim=8, style_epochs=0, style_batch_size=6,
                  gen_channels=4, gen_res_blocks=1, gen_mapping_dim=8,
                  disc_channels=4, checkpoint_interval=1, device='cpu')
    values.update(changes)
    return TrainConfig(**values)


def fake_manifest(counts, root='/data'):
    domains = tuple(counts)
    records = []
    for label, (domain, n) in enumerate(counts.items()):
        records.extend(ImageRecord('{}/{}_{:04d}.png'.format(domain, domain, i),
                                   label, 'train') for i in range(n))
    return DatasetManifest(root, domains, tuple(records))


def write_png(path, value=128, size=8):
    Image.fromarray(np.full((size, size), value, dtype=np.uint8)).save(path)


class OctMorphCase(unittest.TestCase):
    def setUp(self):
        self.app = create_app(TestConfig)
        self.app_context = self.app.app_context()
        self.app_context.push()
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name
        torch.manual_seed(0)

    def tearDown(self):
        self.tmp.cleanup()
        self.app_context.pop()

    def path(self, *parts):
        return os.path.join(self.dir, *parts)


class ConfigCase(OctMorphCase):
    def test_defaults(self):
        cfg = TrainConfig()
        self.assertEqual(cfg.resolution, 128)
        self.assertEqual(cfg.batch_size, 8)
        self.assertEqual(cfg.learning_rate, 0.0001)
        self.assertEqual(cfg.epochs, 100)
        self.assertEqual((cfg.beta1, cfg.beta2), (0.5, 0.999))
        self.assertEqual(cfg.weights, LossWeights(1.0, 1.0))

    def test_file_and_overrides(self):
        with open(self.path('cfg.txt'), 'w') as f:
            f.write('epochs=5\nweights.lambda_cyc=10\nstyle_channels=8,16\n')
        cfg = TrainConfig.from_file(self.path('cfg.txt'),
                                    parse_overrides(['epochs=2']))
        self.assertEqual(cfg.epochs, 2)
        self.assertEqual(cfg.weights.lambda_cyc, 10.0)
        self.assertEqual(cfg.style_channels, (8, 16))

    def test_rejects_bad_keys_and_values(self):
        with self.assertRaises(ConfigError):
            TrainConfig.from_mapping({'epoch': '3'})
        with self.assertRaises(ConfigError):
            TrainConfig.from_mapping({'epochs': 'many'})
        with self.assertRaises(ConfigError):
            TrainConfig.from_mapping({'batch_size': '0'})
        with self.assertRaises(ConfigError):
            TrainConfig.from_mapping({'joint_finetune': 'true'})
        with self.assertRaises(ConfigError):
            parse_overrides(['epochs'])

    def test_device_setting_wins(self):
        self.assertEqual(resolve_device('cuda'), torch.device('cpu'))
        self.app.config['OCTMORPH_DEVICE'] = None
        self.assertEqual(resolve_device('cpu'), torch.device('cpu'))
        self.assertIn(resolve_device().type, ('cpu', 'cuda'))
        self.app.config['OCTMORPH_DEVICE'] = 'cpu'

    def test_effective_config_round_trip(self):
        cfg = TrainConfig.from_mapping({'learning_rate': '2e-5',
                                        'weights.lambda_sty': '0.5',
                                        'normal_as_target': 'yes'})
        cfg.write(self.path('effective.env'))
        again = TrainConfig.from_file(self.path('effective.env'))
        self.assertEqual(again, cfg)
        self.assertEqual(again.config_hash, cfg.config_hash)
        self.assertNotEqual(TrainConfig().config_hash, cfg.config_hash)


class DataCase(OctMorphCase):
    def test_normalize_endpoints(self):
        self.assertTrue(torch.all(normalize(np.zeros((4, 4), np.uint8), 4)
                                  == -1.0))
        self.assertTrue(torch.all(normalize(np.full((4, 4), 255, np.uint8), 4)
                                  == 1.0))
        mid = normalize(np.full((4, 4), 128, np.uint8), 4)
        self.assertAlmostEqual(mid[0, 0, 0].item(), 128 / 127.5 - 1, places=6)

    def test_normalize_resizes_and_coerces_channels(self):
        rgb = np.random.RandomState(0).randint(0, 256, (10, 12, 3)) \
            .astype(np.uint8)
        self.assertEqual(tuple(normalize(rgb, 8, 1).shape), (1, 8, 8))
        gray = np.zeros((10, 10), np.uint8)
        self.assertEqual(tuple(normalize(gray, 8, 3).shape), (3, 8, 8))

    def test_identity_augment(self):
        image = np.random.RandomState(1).randint(0, 256, (32, 32)) \
            .astype(np.uint8)
        out = augment(image, AugmentConfig.identity(), child_rng(0))
        self.assertTrue(np.array_equal(out, image))

    def test_sampled_parameters_stay_in_range(self):
        cfg, rng = AugmentConfig(), child_rng(0)
        for _ in range(10000):
            p = sample_augment_params(cfg, rng)
            self.assertTrue(-0.05 <= p.shift_x <= 0.05)
            self.assertTrue(-0.05 <= p.shift_y <= 0.05)
            self.assertTrue(-15.0 <= p.rotation <= 15.0)
            self.assertTrue(0.0 <= p.scale <= 0.20)
            self.assertTrue(-0.10 <= p.brightness <= 0.10)

    def test_augment_is_deterministic_and_size_preserving(self):
        image = np.random.RandomState(2).randint(0, 256, (40, 32)) \
            .astype(np.uint8)
        audit = []
        first = augment(image, AugmentConfig(), child_rng(3), audit)
        second = augment(image, AugmentConfig(), child_rng(3))
        self.assertEqual(first.shape, image.shape)
        self.assertTrue(np.array_equal(first, second))
        self.assertEqual(len(audit), 1)
        self.assertTrue(np.array_equal(apply_augment(image, audit[0]), first))

    def test_degenerate_image(self):
        with self.assertRaises(DataError):
            apply_augment(np.zeros((0, 5), np.uint8), AugmentParams())

    def test_load_manifest(self):
        for domain, n in (('normal', 3), ('mh', 2)):
            os.makedirs(self.path('root', domain))
            for i in range(n):
                write_png(self.path('root', domain, '{}.png'.format(i)))
        manifest = load_manifest(self.path('root'))
        self.assertEqual(manifest.num_domains, 2)
        self.assertEqual(len(manifest.records), 5)
        self.assertEqual(manifest.domains[0], 'normal')
        again = load_manifest(self.path('root'))
        self.assertEqual(manifest.serialize(), again.serialize())
        manifest.write(self.path('index.jsonl'))
        read = DatasetManifest.read(self.path('index.jsonl'))
        self.assertEqual(read.records, manifest.records)

    def test_manifest_errors(self):
        os.makedirs(self.path('empty'))
        with self.assertRaisesRegex(DataError, 'no domain directories'):
            load_manifest(self.path('empty'))
        with self.assertRaises(DataError):
            load_manifest(self.path('missing'))
        os.makedirs(self.path('empty', 'normal'))
        with open(self.path('empty', 'normal', 'notes.txt'), 'w') as f:
            f.write('x')
        with self.assertRaises(DataError):
            load_manifest(self.path('empty'))

    def test_unreadable_files_are_skipped(self):
        os.makedirs(self.path('root', 'normal'))
        write_png(self.path('root', 'normal', 'good.png'))
        with open(self.path('root', 'normal', 'bad.png'), 'wb') as f:
            f.write(b'not an image')
        with self.assertLogs('app.data.manifest', level='WARNING'):
            manifest = load_manifest(self.path('root'))
        self.assertEqual(len(manifest.records), 1)
        self.assertEqual(manifest.skipped, ('normal/bad.png',))

    def test_sample_split(self):
        manifest = fake_manifest({'normal': 20, 'mh': 20})
        split = sample_split(manifest, 10, 5, seed=1)
        for label in range(2):
            train = split.select('train', label)
            test = split.select('test', label)
            self.assertEqual((len(train), len(test)), (10, 5))
            self.assertFalse({r.path for r in train} & {r.path for r in test})
        self.assertEqual(split.serialize(),
                         sample_split(manifest, 10, 5, seed=1).serialize())
        self.assertNotEqual(split.serialize(),
                            sample_split(manifest, 10, 5, seed=2).serialize())

    def test_presets(self):
        prevalent = sample_split(fake_manifest({'normal': 1100, 'cnv': 1100}),
                                 1000, 100, seed=0)
        self.assertEqual(prevalent.counts('train'),
                         {'normal': 1000, 'cnv': 1000})
        self.assertEqual(prevalent.counts('test'), {'normal': 100, 'cnv': 100})

        rare = sample_split(fake_manifest({'normal': 500, 'mh': 30}), 400, 80,
                            seed=0, quota_augment=True)
        self.assertEqual(rare.counts('train'), {'normal': 400, 'mh': 400})
        self.assertEqual(rare.counts('test'), {'normal': 80, 'mh': 80})
        self.assertFalse(any(r.synthetic for r in rare.select(label=0)))
        synthetic = [r for r in rare.select(label=1) if r.synthetic]
        self.assertTrue(synthetic)
        for record in synthetic:
            self.assertTrue(record.source.startswith('mh/'))
            self.assertIn('shift_x', record.params)
        sources = {}
        for record in rare.select(label=1):
            sources.setdefault(record.split, set()).add(record.source
                                                        or record.path)
        self.assertFalse(sources['train'] & sources['test'])

    def test_insufficient_images(self):
        manifest = fake_manifest({'normal': 20, 'mh': 5})
        with self.assertRaises(DataError) as cm:
            sample_split(manifest, 10, 2, seed=0)
        self.assertEqual(cm.exception.details['deficits'], {'mh': 7})

    def test_store_applies_recorded_augmentation(self):
        os.makedirs(self.path('root', 'normal'))
        os.makedirs(self.path('root', 'mh'))
        for i in range(4):
            write_png(self.path('root', 'normal', '{}.png'.format(i)), 60 + i,
                      16)
        gradient = np.tile(np.arange(0, 256, 16, dtype=np.uint8), (16, 1))
        Image.fromarray(gradient).save(self.path('root', 'mh', '0.png'))
        Image.fromarray(gradient[::-1].copy()).save(
            self.path('root', 'mh', '1.png'))
        split = sample_split(load_manifest(self.path('root')), 3, 1, seed=0,
                             quota_augment=True)
        store = ImageStore(split, 16)
        synthetic = [r for r in split.select('train', 1) if r.synthetic]
        self.assertEqual(len(synthetic), 2)
        source = ImageRecord(synthetic[0].source, 1, 'train')
        image = store.load(synthetic[0])
        self.assertEqual(tuple(image.shape), (1, 16, 16))
        self.assertFalse(torch.equal(image, store.load(source)))


class ToyCase(OctMorphCase):
    def test_counts_and_layout(self):
        manifest = generate_toy(ToySpec(), self.path('toy'))
        self.assertEqual(sorted(os.listdir(self.path('toy'))),
                         ['bump', 'hole', 'manifest.jsonl', 'normal',
                          'speckle'])
        files = sum(len(os.listdir(self.path('toy', d)))
                    for d in manifest.domains)
        self.assertEqual(files, 720)
        self.assertEqual(manifest.counts('train')['hole'], 200)
        self.assertEqual(manifest.counts('test')['normal'], 40)

    def test_deterministic(self):
        spec = ToySpec(n_domains=2, train_per_domain=3, test_per_domain=1,
                       resolution=16, seed=7)
        generate_toy(spec, self.path('a'))
        generate_toy(spec, self.path('b'))
        for domain in ('normal', 'bump', 'hole'):
            for name in os.listdir(self.path('a', domain)):
                with open(self.path('a', domain, name), 'rb') as f1, \
                        open(self.path('b', domain, name), 'rb') as f2:
                    self.assertEqual(f1.read(), f2.read())
        manifest = open_manifest(self.path('a'))
        self.assertEqual(manifest.domains, ('normal', 'bump', 'hole'))

    def test_needs_a_target_domain(self):
        with self.assertRaisesRegex(DataError, 'at least one target domain'):
            generate_toy(ToySpec(n_domains=0), self.path('toy'))


def reference_ephn(sim, labels):
    triplets = []
    for a in range(len(labels)):
        pos = neg = None
        for j in range(len(labels)):
            if j == a:
                continue
            if labels[j] == labels[a]:
                if pos is None or sim[a][j] > sim[a][pos]:
                    pos = j
            elif neg is None or sim[a][j] > sim[a][neg]:
                neg = j
        if pos is not None and neg is not None:
            triplets.append((a, pos, neg))
    return triplets


class StyleEncoderCase(OctMorphCase):
    def test_gram_analytic_cases(self):
        self.assertTrue(torch.equal(gram_matrix(torch.zeros(3, 4, 4)),
                                    torch.zeros(3, 3)))
        gram = gram_matrix(torch.full((1, 5, 5), 3.0))
        self.assertAlmostEqual(gram.item(), 9.0, places=5)

    def test_gram_matches_loops(self):
        f = torch.randn(4, 8, 8, dtype=torch.float64)
        gram = gram_matrix(f)
        for i in range(4):
            for j in range(4):
                total = sum(f[i, h, w] * f[j, h, w]
                            for h in range(8) for w in range(8)) / 64.0
                self.assertAlmostEqual(gram[i, j].item(), total.item(),
                                       delta=1e-6)
        self.assertLess((gram - gram.t()).abs().max().item(), 1e-6)
        self.assertGreaterEqual(torch.linalg.eigvalsh(gram).min().item(),
                                -1e-6)

    def test_gram_rejects_non_finite(self):
        f = torch.zeros(2, 3, 3)
        f[0, 0, 0] = float('nan')
        with self.assertRaises(NumericalError):
            gram_matrix(f)

    def test_encode(self):
        encoder = StyleEncoder(16, 1, (4, 8), 8)
        batch = torch.rand(5, 1, 16, 16) * 2 - 1
        codes = encode(encoder, batch)
        self.assertEqual(tuple(codes.shape), (5, 8))
        self.assertTrue(torch.allclose(codes.norm(dim=1), torch.ones(5),
                                       atol=1e-5))
        self.assertTrue(torch.equal(codes, encode(encoder, batch)))
        with self.assertRaises(ShapeError):
            encode(encoder, torch.zeros(1, 1, 32, 32))

    def test_mining_hand_computed_case(self):
        e = torch.tensor([[1.0, 0.0], [0.9, 0.436], [0.0, 1.0], [-1.0, 0.0]])
        triplets = mine_ephn(e, [0, 0, 1, 1])
        self.assertEqual(tuple(triplets[0]), (0, 1, 2))
        with self.assertLogs('app.style.mining', level='WARNING'):
            self.assertEqual(mine_ephn(e, [1, 1, 1, 1]), [])

    def test_mining_matches_exhaustive_search(self):
        rng = np.random.RandomState(0)
        for _ in range(1000):
            b = rng.randint(2, 33)
            n = rng.randint(2, 6)
            labels = rng.randint(0, n, b).tolist()
            emb = torch.nn.functional.normalize(
                torch.from_numpy(rng.randn(b, 4).astype(np.float32)), dim=1)
            if b > 3:
                emb[1] = emb[0]
                emb[b - 1] = emb[2]
            sim = (emb @ emb.t()).tolist()
            got = [tuple(t) for t in mine_ephn(emb, labels)]
            self.assertEqual(got, reference_ephn(sim, labels))

    def test_triplet_loss_values(self):
        a = torch.tensor([[1.0, 0.0]])
        self.assertAlmostEqual(triplet_loss(a, a, a, 0.1).item(),
                               math.log(2), places=5)
        loss = triplet_loss(a, a, -a, temperature=1.0)
        self.assertAlmostEqual(loss.item(), math.log(1 + math.exp(-2)),
                               places=5)
        n = torch.tensor([[0.0, 1.0]])
        previous = None
        for angle in (1.5, 1.0, 0.5, 0.0):
            p = torch.tensor([[math.cos(angle), math.sin(angle)]])
            value = triplet_loss(a, p, n, 0.5).item()
            if previous is not None:
                self.assertLess(value, previous)
            previous = value
        with self.assertRaises(ConfigError):
            triplet_loss(a, a, a, 0.0)

    def test_margin_loss_and_cluster_quality(self):
        a = torch.tensor([[1.0, 0.0]])
        self.assertEqual(margin_triplet_loss(a, a, -a, 0.2).item(), 0.0)
        self.assertAlmostEqual(margin_triplet_loss(a, a, a, 0.2).item(), 0.2,
                               places=6)
        codes = torch.tensor([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        labels = [0, 0, 1, 1]
        quality = cluster_quality(codes, labels, codes, labels)
        self.assertEqual(quality['accuracy'], 1.0)
        self.assertEqual(quality['retrieval'], 1.0)
        self.assertAlmostEqual(quality['gap'], 1.0, places=6)

    def _toy(self, n_domains=2, train=6, test=2):
        return generate_toy(ToySpec(n_domains=n_domains, train_per_domain=train,
                                    test_per_domain=test, resolution=16),
                            self.path('toy'))

    def test_zero_epochs_is_untrained(self):
        manifest = self._toy()
        cfg = small_config(style_epochs=0)
        encoder, report = pretrain_style_encoder(manifest, cfg, 'cpu',
                                                 self.path('style.pt'))
        self.assertTrue(report['untrained'])
        self.assertEqual(report['epochs'], [])
        loaded, meta = load_style_encoder(self.path('style.pt'))
        self.assertEqual(meta['domains'], list(manifest.domains))
        batch = ImageStore(manifest, 16).batch(manifest.select('test'))
        self.assertTrue(torch.equal(encode(encoder, batch),
                                    encode(loaded, batch)))

    def test_pretrain_and_cluster_report(self):
        manifest = self._toy()
        cfg = small_config(style_epochs=1)
        _, report = pretrain_style_encoder(manifest, cfg, 'cpu')
        self.assertFalse(report['untrained'])
        self.assertEqual(len(report['epochs']), 1)
        self.assertGreater(report['epochs'][0]['triplets'], 0)
        path = write_cluster_report(report, manifest.domains, self.dir)
        with open(path) as f:
            text = f.read()
        self.assertIn('normal, bump, hole', text)
        self.assertIn('retrieval', text)

    def test_pretrain_needs_two_domains(self):
        manifest = DatasetManifest('/data', ('normal',), ())
        with self.assertRaises(DataError):
            pretrain_style_encoder(manifest, small_config(), 'cpu')

    def test_divergence_keeps_last_finite_encoder(self):
        manifest = self._toy(n_domains=2, train=6)
        built, calls, before_nan = [], [], {}

        def build(*args, **kwargs):
            built.append(StyleEncoder(*args, **kwargs))
            return built[-1]

        def diverge_on_second_batch(codes, labels, cfg):
            calls.append(len(labels))
            if len(calls) < 2:
                return batch_triplet_loss(codes, labels, cfg)
            before_nan.update({k: v.detach().clone()
                               for k, v in built[0].state_dict().items()})
            return codes.sum() * float('nan'), 1

        with mock.patch('app.style.pretrain.StyleEncoder', build), \
                mock.patch('app.style.pretrain.batch_triplet_loss',
                           diverge_on_second_batch):
            with self.assertRaises(NumericalError) as raised:
                pretrain_style_encoder(manifest, small_config(style_epochs=1),
                                       'cpu', self.path('style.pt'))
        self.assertEqual(raised.exception.component, 'triplet')
        self.assertEqual(raised.exception.checkpoint, self.path('style.pt'))
        self.assertEqual(len(calls), 2)
        saved, _ = load_style_encoder(self.path('style.pt'))
        for name, value in saved.state_dict().items():
            self.assertTrue(torch.equal(value, before_nan[name]), name)
            self.assertTrue(torch.equal(built[0].state_dict()[name],
                                        before_nan[name]), name)


def two_pass_adain(f, gamma, beta, eps=1e-5):
    out = torch.empty_like(f)
    for b in range(f.shape[0]):
        for c in range(f.shape[1]):
            values = f[b, c]
            mean = values.sum() / values.numel()
            var = ((values - mean) ** 2).sum() / values.numel()
            out[b, c] = gamma[c] * (values - mean) / torch.sqrt(var + eps) + \
                beta[c]
    return out


class GeneratorCase(OctMorphCase):
    def test_adain_contract(self):
        for _ in range(100):
            f = torch.randn(2, 3, 5, 6, dtype=torch.float64) * 3 + 1
            out = adain(f, torch.ones(3, dtype=torch.float64),
                        torch.zeros(3, dtype=torch.float64))
            self.assertLess(out.mean(dim=(2, 3)).abs().max().item(), 1e-4)
            var = out.var(dim=(2, 3), unbiased=False)
            self.assertLess((var - 1).abs().max().item(), 1e-4)

            gamma = torch.full((3,), 2.0, dtype=torch.float64)
            beta = torch.full((3,), 3.0, dtype=torch.float64)
            out = adain(f, gamma, beta)
            self.assertLess((out.mean(dim=(2, 3)) - 3).abs().max().item(), 1e-4)
            std = out.std(dim=(2, 3), unbiased=False)
            self.assertLess((std - 2).abs().max().item(), 1e-3)

            gamma, beta = torch.randn(3, dtype=torch.float64), \
                torch.randn(3, dtype=torch.float64)
            self.assertLess((adain(f, gamma, beta) -
                             two_pass_adain(f, gamma, beta)).abs().max().item(),
                            1e-5)

    def test_adain_channel_mismatch(self):
        with self.assertRaises(ShapeError):
            adain(torch.randn(1, 3, 4, 4), torch.ones(2), torch.zeros(2))

    def test_map_style(self):
        mapping = MappingNetwork(64, [256, 128, 64])
        params = map_style(mapping, torch.zeros(64))
        self.assertEqual([g.shape[-1] for g, _ in params], [256, 128, 64])
        for gamma, beta in params:
            self.assertTrue(torch.allclose(gamma, torch.ones_like(gamma)))
            self.assertTrue(torch.allclose(beta, torch.zeros_like(beta)))
        with self.assertRaises(ShapeError):
            mapping(torch.zeros(32))

    def test_generate_shape_and_range(self):
        generator = Generator(128, 1, style_dim=64, channels=8, res_blocks=1)
        x = torch.rand(8, 1, 128, 128) * 2 - 1
        s = torch.nn.functional.normalize(torch.randn(64), dim=0)
        out = generate(generator, x, s)
        self.assertEqual(out.shape, x.shape)
        self.assertLessEqual(out.abs().max().item(), 1.0)
        self.assertTrue(torch.equal(out, generate(generator, x, s)))
        with self.assertRaises(ShapeError):
            generate(generator, torch.zeros(1, 1, 64, 64), s)
        with self.assertRaises(ShapeError):
            generate(generator, torch.zeros(1, 3, 128, 128), s)

    def test_gradient_flow_with_frozen_encoder(self):
        encoder = freeze(StyleEncoder(16, 1, (4, 8), 8))
        generator = Generator(16, 1, style_dim=8, channels=4, res_blocks=1,
                              mapping_dim=8)
        x = torch.rand(2, 1, 16, 16) * 2 - 1
        y = torch.rand(2, 1, 16, 16) * 2 - 1
        with torch.no_grad():
            s, s_tilde = encoder(y), encoder(x)
        fake = generator(x, s)
        loss = style_loss(s, encoder(fake)) + \
            cycle_loss(x, generator(fake, s_tilde))
        loss.backward()
        for p in encoder.parameters():
            self.assertTrue(p.grad is None or not p.grad.any())
        self.assertTrue(any(p.grad is not None and p.grad.abs().sum() > 0
                            for p in generator.parameters()))

    def test_checkpoint_round_trip(self):
        generator = Generator(16, 1, style_dim=8, channels=4, res_blocks=1,
                              mapping_dim=8)
        save_checkpoint(self.path('g.pt'),
                        {'generator': generator.state_dict()},
                        dict(generator.meta(), stage='generator_v1'))
        meta, state = load_checkpoint(self.path('g.pt'), 'generator_v1')
        loaded = Generator.from_meta(meta)
        loaded.load_state_dict(state['generator'])
        x, s = torch.rand(3, 1, 16, 16), torch.randn(3, 8)
        self.assertTrue(torch.equal(generate(generator, x, s),
                                    generate(loaded, x, s)))
        with self.assertRaises(DataError):
            load_checkpoint(self.path('g.pt'), 'discriminator_v1')


class DiscriminatorCase(OctMorphCase):
    def _top_singular(self, w):
        return torch.linalg.svdvals(w.reshape(w.shape[0], -1))[0].item()

    def test_spectral_normalize_diagonal(self):
        w = torch.diag(torch.tensor([3.0, 1.0], dtype=torch.float64))
        u = torch.nn.functional.normalize(torch.randn(2, dtype=torch.float64),
                                          dim=0)
        normalized, _ = spectral_normalize(w, u, n_power_iter=20)
        self.assertAlmostEqual(self._top_singular(normalized), 1.0, delta=1e-4)

    def test_spectral_normalize_orthonormal(self):
        q, _ = torch.linalg.qr(torch.randn(8, 8, dtype=torch.float64))
        u = torch.nn.functional.normalize(torch.randn(8, dtype=torch.float64),
                                          dim=0)
        normalized, _ = spectral_normalize(q, u)
        self.assertLess((normalized - q).abs().max().item(), 1e-4)

    def test_spectral_normalize_matches_svd(self):
        w = torch.randn(64, 64, dtype=torch.float64)
        u = torch.nn.functional.normalize(torch.randn(64, dtype=torch.float64),
                                          dim=0)
        normalized, u = spectral_normalize(w, u, n_power_iter=50)
        sigma_hat = (w.norm() / normalized.norm()).item()
        sigma = self._top_singular(w)
        self.assertLess(abs(sigma_hat - sigma) / sigma, 1e-3)

    def test_spectral_bound_on_random_matrices(self):
        rng = np.random.RandomState(0)
        for _ in range(100):
            m, n = rng.randint(2, 129, 2)
            w = torch.from_numpy(rng.randn(m, n))
            u = torch.nn.functional.normalize(torch.from_numpy(rng.randn(m)),
                                              dim=0)
            normalized, _ = spectral_normalize(w, u, n_power_iter=100)
            self.assertAlmostEqual(self._top_singular(normalized), 1.0,
                                   delta=1e-3)

    def test_zero_weight(self):
        normalized, _ = spectral_normalize(torch.zeros(3, 4), torch.ones(3))
        self.assertTrue(torch.equal(normalized, torch.zeros(3, 4)))

    def test_persistent_state(self):
        d = MultiTaskDiscriminator(16, 1, branches=2, channels=4)
        self.assertIn('trunk.0.u', d.state_dict())
        d.eval()
        x = torch.randn(2, 1, 16, 16)
        before = d.state_dict()['trunk.0.u'].clone()
        d(x)
        self.assertTrue(torch.equal(before, d.state_dict()['trunk.0.u']))
        d.train()
        d(x)
        self.assertFalse(torch.equal(before, d.state_dict()['trunk.0.u']))

    def test_discriminate_selects_branch(self):
        d = MultiTaskDiscriminator(16, 1, branches=5, channels=4).eval()
        x = torch.randn(3, 1, 16, 16)
        scores = d(x)
        self.assertEqual(tuple(scores.shape), (3, 5))
        picked = d.discriminate(x, 3)
        self.assertEqual(tuple(picked.shape), (3,))
        self.assertTrue(torch.equal(picked, scores[:, 3]))
        with self.assertRaises(ShapeError):
            d.discriminate(x, 5)

    def test_branch_isolation(self):
        d = MultiTaskDiscriminator(16, 1, branches=5, channels=4)
        d.discriminate(torch.randn(3, 1, 16, 16), 2).sum().backward()
        for i in (0, 1, 3, 4):
            grad = d.heads[i].weight.grad
            self.assertTrue(grad is None or not grad.any())
        self.assertTrue(d.heads[2].weight.grad.any())
        self.assertTrue(d.trunk[0].weight.grad.any())

    def test_r1_constant_discriminator(self):
        real = torch.randn(4, 1, 4, 4)
        penalty = r1_penalty(lambda x, l: x.sum(dim=(1, 2, 3)) * 0 + 2.0,
                             real, None)
        self.assertEqual(penalty.item(), 0.0)
        penalty = r1_penalty(lambda x, l: torch.full((x.shape[0],), 2.0),
                             real, None)
        self.assertEqual(penalty.item(), 0.0)

    def test_r1_linear_discriminator(self):
        w = torch.randn(1, 4, 4, dtype=torch.float64)
        real = torch.randn(5, 1, 4, 4, dtype=torch.float64)
        penalty = r1_penalty(lambda x, l: (x * w).sum(dim=(1, 2, 3)), real,
                             None, gamma=3.0)
        self.assertAlmostEqual(penalty.item(), 1.5 * w.pow(2).sum().item(),
                               delta=1e-6)

    def test_r1_matches_finite_differences(self):
        for seed in range(3):
            torch.manual_seed(seed)
            model = nn.Sequential(nn.Conv2d(1, 3, 3), nn.Tanh(), nn.Flatten(),
                                  nn.Linear(27, 1)).double()

            def d(x, labels):
                return model(x).squeeze(1)

            real = torch.randn(2, 1, 5, 5, dtype=torch.float64)
            penalty = r1_penalty(d, real, None, gamma=1.0).item()
            h, norms = 1e-5, []
            for b in range(2):
                total = 0.0
                for idx in range(25):
                    plus, minus = real[b:b + 1].clone(), real[b:b + 1].clone()
                    plus.view(-1)[idx] += h
                    minus.view(-1)[idx] -= h
                    with torch.no_grad():
                        g = (d(plus, None) - d(minus, None)).item() / (2 * h)
                    total += g * g
                norms.append(total)
            expected = 0.5 * sum(norms) / 2
            self.assertLess(abs(penalty - expected) / expected, 1e-3)

    def test_r1_needs_gradients(self):
        d = MultiTaskDiscriminator(16, 1, branches=1, channels=4)
        with torch.no_grad():
            with self.assertRaises(RuntimeError):
                r1_penalty(d.discriminate, torch.randn(1, 1, 16, 16), 0)


class LossCase(OctMorphCase):
    def test_hinge_values(self):
        t = torch.tensor
        self.assertEqual(adv_loss_d(t([0.3]), t([0.3])).item(), 1.0)
        self.assertEqual(adv_loss_d(t([-1.0]), t([1.0])).item(), 0.0)
        self.assertEqual(adv_loss_d(t([0.5]), t([-0.5])).item(), 2.0)
        self.assertEqual(adv_loss_g(t([0.3]), t([0.3])).item(), 1.0)
        self.assertEqual(adv_loss_g(t([1.0]), t([-1.0])).item(), 0.0)

    def test_hinge_duality(self):
        a, b = torch.randn(10000) * 3, torch.randn(10000) * 3
        for i in range(10000):
            self.assertEqual(adv_loss_g(a[i:i + 1], b[i:i + 1]).item(),
                             adv_loss_d(b[i:i + 1], a[i:i + 1]).item())
        self.assertGreaterEqual(adv_loss_d(a, b).item(), 0.0)

    def test_hinge_gradients(self):
        d_fake = torch.tensor([0.4, -3.0, 1.2], dtype=torch.float64,
                              requires_grad=True)
        d_real = torch.tensor([0.1, 0.2, -0.5], dtype=torch.float64)
        adv_loss_d(d_fake, d_real).backward()
        h = 1e-6
        for i in range(3):
            plus, minus = d_fake.detach().clone(), d_fake.detach().clone()
            plus[i] += h
            minus[i] -= h
            fd = (adv_loss_d(plus, d_real) - adv_loss_d(minus, d_real)).item() \
                / (2 * h)
            self.assertAlmostEqual(d_fake.grad[i].item(), fd, delta=1e-4)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            adv_loss_d(torch.zeros(3), torch.zeros(4))
        with self.assertRaises(ShapeError):
            cycle_loss(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 5))
        with self.assertRaises(ShapeError):
            style_loss(torch.zeros(64), torch.zeros(32))

    def test_cycle_loss(self):
        x = torch.rand(2, 1, 4, 4)
        self.assertEqual(cycle_loss(x, x).item(), 0.0)
        self.assertAlmostEqual(cycle_loss(x, x + 0.5).item(), 0.5, places=6)
        y = torch.rand(2, 1, 4, 4, dtype=torch.float64)
        z = torch.rand(2, 1, 4, 4, dtype=torch.float64)
        total = sum(abs(a - b) for a, b in zip(y.view(-1).tolist(),
                                                z.view(-1).tolist()))
        self.assertAlmostEqual(cycle_loss(y, z).item(), total / 32, delta=1e-6)

    def test_style_loss(self):
        s, s_rec = torch.zeros(64), torch.zeros(64)
        s[0], s_rec[1] = 1.0, 1.0
        self.assertAlmostEqual(style_loss(s, s_rec).item(), 0.03125)
        self.assertEqual(style_loss(s, s).item(), 0.0)

    def test_total_loss(self):
        t = torch.tensor
        self.assertAlmostEqual(total_loss(t(1.0), t(0.5), t(0.25),
                                          LossWeights()).item(), 1.75)
        self.assertEqual(total_loss(t(1.0), t(0.5), t(0.25),
                                    LossWeights(0.0, 0.0)).item(), 1.0)
        with self.assertRaises(NumericalError) as cm:
            total_loss(t(1.0), t(float('nan')), t(0.25), LossWeights())
        self.assertEqual(cm.exception.component, 'cyc')

    def test_report_row(self):
        report = LossReport(3, 1.0, 0.5, 0.25, 0.125, 0.0, 0.875)
        self.assertEqual(report.to_row()[0], 3)
        self.assertEqual(len(report.to_row()), len(LossReport.CSV_HEADER))


class MetricCase(OctMorphCase):
    def test_fid_identity_and_closed_form(self):
        a = np.random.RandomState(0).randn(50, 4)
        self.assertLess(abs(fid(a, a)), 1e-6)
        real = np.array([[-1.0], [1.0]]) / math.sqrt(2)
        self.assertAlmostEqual(fid(real, real + 1.0), 1.0, delta=1e-9)

    def test_fid_symmetry(self):
        rng = np.random.RandomState(1)
        a, b = rng.randn(60, 3), rng.randn(80, 3) * 2 + 0.5
        self.assertAlmostEqual(fid(a, b), fid(b, a), delta=1e-8)

    def test_gaussian_oracle(self):
        rng = np.random.RandomState(2)
        for k in range(1, 9):
            a = rng.randn(200, k)
            b = rng.randn(200, k) @ rng.randn(k, k) + 1.0
            mu1, mu2 = a.mean(0), b.mean(0)
            s1 = np.atleast_2d(np.cov(a, rowvar=False))
            s2 = np.atleast_2d(np.cov(b, rowvar=False))
            closed = ((mu1 - mu2) ** 2).sum() + np.trace(s1 + s2 - 2 * np.real(
                linalg.sqrtm(s1 @ s2)))
            self.assertLess(abs(frechet_distance(mu1, s1, mu2, s2) - closed)
                            / closed, 1e-4)

    def test_product_sqrtm(self):
        rng = np.random.RandomState(3)
        for _ in range(10):
            x, y = rng.randn(6, 6), rng.randn(6, 6)
            a, b = x @ x.T + 0.1 * np.eye(6), y @ y.T + 0.1 * np.eye(6)
            root = product_sqrtm(a, b)
            self.assertLess(np.linalg.norm(root @ root - a @ b) /
                            np.linalg.norm(a @ b), 1e-6)

    def test_fid_errors_and_warnings(self):
        with self.assertLogs('app.evaluation.metrics', level='WARNING'):
            fid(np.random.randn(5, 8), np.random.randn(5, 8))
        bad = np.zeros((4, 2))
        bad[0, 0] = np.nan
        with self.assertRaises(NumericalError):
            fid(bad, np.zeros((4, 2)))

    def test_diversity(self):
        image = torch.rand(1, 8, 8)
        features = pixel_features()
        self.assertAlmostEqual(diversity_score(image.expand(10, -1, -1, -1),
                                               features), 0.0, places=6)
        with self.assertRaises(DataError):
            diversity_score(torch.rand(1, 1, 8, 8), features)
        noise = torch.randn(10, 1, 8, 8)
        scores = [diversity_score(image + amplitude * noise, features)
                  for amplitude in (0.01, 0.05, 0.1, 0.3)]
        self.assertEqual(scores, sorted(scores))
        self.assertEqual(len(set(scores)), 4)


class SynthesisCase(OctMorphCase):
    def setUp(self):
        super(SynthesisCase, self).setUp()
        self.generator = Generator(16, 1, style_dim=8, channels=4,
                                   res_blocks=1, mapping_dim=8)
        self.encoder = freeze(StyleEncoder(16, 1, (4, 8), 8))

    def samples(self, prefix, n):
        return [Sample('{}{}'.format(prefix, i), torch.rand(1, 16, 16) * 2 - 1)
                for i in range(n)]

    def test_reference_synthesis(self):
        normals = self.samples('n', 3)
        references = {'a': self.samples('a', 5), 'b': self.samples('b', 2)}
        with self.assertLogs('app.evaluation.synthesis', level='WARNING'):
            result = reference_synthesis(self.generator, self.encoder, normals,
                                         references, 3, self.path('out'),
                                         seed=4)
        for domain in ('a', 'b'):
            self.assertEqual(len(os.listdir(self.path('out', domain))), 9)
            self.assertEqual(tuple(result[domain].outputs.shape),
                             (3, 3, 1, 16, 16))
        again = reference_synthesis(self.generator, self.encoder, normals,
                                    references, 3, self.path('again'), seed=4)
        self.assertEqual(result['a'].assignments, again['a'].assignments)
        self.assertEqual(len(set(result['a'].assignments[0])), 3)
        self.assertTrue(os.path.exists(self.path(
            'out', 'a', 'n0_{}.png'.format(result['a'].assignments[0][0]))))

    def test_grid_layout(self):
        cells, ncol = build_grid_cells(self.generator, self.encoder,
                                       self.samples('n', 4),
                                       self.samples('r', 5))
        self.assertEqual(tuple(cells.shape), (30, 1, 16, 16))
        self.assertEqual(ncol, 6)
        path = reference_grid(self.generator, self.encoder,
                              self.samples('n', 4), self.samples('r', 5),
                              self.path('grid.png'))
        with Image.open(path) as im:
            self.assertEqual(im.size, (6 * 18 + 2, 5 * 18 + 2))


class TrainingCase(OctMorphCase):
    def setUp(self):
        super(TrainingCase, self).setUp()
        self.manifest = generate_toy(
            ToySpec(n_domains=2, train_per_domain=4, test_per_domain=2,
                    resolution=16), self.path('toy'))
        self.cfg = small_config(epochs=2)
        encoder, _ = pretrain_style_encoder(self.manifest, self.cfg, 'cpu')
        self.encoder_path = save_style_encoder(self.path('style.pt'), encoder,
                                               self.manifest, self.cfg)

    def _step(self, batch):
        encoder, _ = load_style_encoder(self.encoder_path)
        freeze(encoder)
        generator, discriminator = build_networks(self.manifest, self.cfg,
                                                  encoder)
        g_opt = torch.optim.Adam(generator.parameters(), 1e-4,
                                 betas=(0.5, 0.999))
        d_opt = torch.optim.Adam(discriminator.parameters(), 1e-4,
                                 betas=(0.5, 0.999))
        before = parameter_hash(encoder)
        report = training_step(generator, discriminator, encoder, batch,
                               self.cfg, g_opt, d_opt, step=1)
        self.assertEqual(parameter_hash(encoder), before)
        return report

    def _batch(self):
        store = ImageStore(self.manifest, 16)
        normals = self.manifest.select('train', 0)[:2]
        refs = [self.manifest.select('train', 1)[0],
                self.manifest.select('train', 2)[0]]
        return (store.batch(normals), store.batch(refs),
                torch.tensor([1, 2]))

    def test_training_step(self):
        report = self._step(self._batch())
        self.assertAlmostEqual(report.total,
                               report.adv_g + report.cyc + report.sty,
                               places=5)
        self.assertGreaterEqual(report.r1, 0.0)
        self.assertEqual(report, self._step(self._batch()))

    def test_nan_input_aborts(self):
        x, y, labels = self._batch()
        x[0, 0, 0, 0] = float('nan')
        with self.assertRaises(NumericalError):
            self._step((x, y, labels))

    def test_reference_sampling_covers_domains(self):
        normals = self.manifest.select('train', 0)
        references = {1: self.manifest.select('train', 1),
                      2: self.manifest.select('train', 2)}
        for epoch in range(3):
            pairs = epoch_pairs(normals, references, 0, epoch)
            self.assertEqual(sorted(n.path for n, _ in pairs),
                             sorted(n.path for n in normals))
            self.assertEqual({r.label for _, r in pairs}, {1, 2})
        self.assertEqual(epoch_pairs(normals, references, 0, 1),
                         epoch_pairs(normals, references, 0, 1))

    def _rows(self, out):
        with open(os.path.join(out, 'losses.csv')) as f:
            return list(csv.reader(f))

    def test_run_training(self):
        encoder, _ = load_style_encoder(self.encoder_path)
        result = run_training(self.manifest, self.encoder_path, self.cfg,
                              self.path('run'))
        self.assertEqual(result.step, 4)
        self.assertEqual(result.epoch, 2)
        self.assertEqual(result.encoder_hash, parameter_hash(encoder))
        rows = self._rows(self.path('run'))
        self.assertEqual(rows[0], list(LossReport.CSV_HEADER))
        self.assertEqual([int(r[0]) for r in rows[1:]], [1, 2, 3, 4])
        self.assertEqual(resolve_checkpoint_dir(self.path('run')),
                         result.checkpoint)

    def test_zero_epochs(self):
        result = run_training(self.manifest, self.encoder_path,
                              self.cfg.with_overrides({'epochs': '0'}),
                              self.path('run'))
        self.assertEqual(result.step, 0)
        self.assertTrue(os.path.isdir(self.path('run', 'checkpoints',
                                                'step_0000000')))
        self.assertEqual(len(self._rows(self.path('run'))), 1)

    def test_resume_matches_uninterrupted_run(self):
        run_training(self.manifest, self.encoder_path, self.cfg,
                     self.path('full'))
        run_training(self.manifest, self.encoder_path,
                     self.cfg.with_overrides({'max_steps': '2'}),
                     self.path('part'))
        self.assertEqual(len(self._rows(self.path('part'))), 3)
        run_training(self.manifest, self.encoder_path, self.cfg,
                     self.path('part'), resume=self.path('part'))
        self.assertEqual(self._rows(self.path('part')),
                         self._rows(self.path('full')))

    def test_batch_order_ignores_worker_count(self):
        run_training(self.manifest, self.encoder_path, self.cfg,
                     self.path('serial'))
        run_training(self.manifest, self.encoder_path,
                     self.cfg.with_overrides({'num_workers': '2'}),
                     self.path('workers'))
        self.assertEqual(self._rows(self.path('workers')),
                         self._rows(self.path('serial')))

    def test_domain_order_mismatch(self):
        shuffled = self.manifest.replace(domains=('normal', 'hole', 'bump'))
        with self.assertRaises(DataError):
            run_training(shuffled, self.encoder_path, self.cfg,
                         self.path('run'))

    def test_checkpoint_round_trip(self):
        encoder, _ = load_style_encoder(self.encoder_path)
        generator, discriminator = build_networks(self.manifest, self.cfg,
                                                  encoder)
        g_opt = torch.optim.Adam(generator.parameters())
        d_opt = torch.optim.Adam(discriminator.parameters())
        directory = save_training_checkpoint(
            self.path('ckpt'), generator, discriminator, self.encoder_path,
            g_opt, d_opt, {'step': 7, 'epoch': 1, 'offset': 0}, self.cfg,
            self.manifest.domains)
        loaded, meta = load_generator(directory)
        self.assertEqual(meta['step'], 7)
        trainer_meta, state = load_trainer_state(directory)
        self.assertEqual((trainer_meta.step, trainer_meta.epoch), (7, 1))
        self.assertEqual(trainer_meta.domains, self.manifest.domains)
        self.assertEqual(trainer_meta.extra['offset'], 0)
        self.assertIn('g_optimizer', state)
        x, s = torch.rand(2, 1, 16, 16), torch.randn(2, 8)
        self.assertTrue(torch.equal(generate(generator, x, s),
                                    generate(loaded, x, s)))


class CommandLineCase(OctMorphCase):
    def setUp(self):
        super(CommandLineCase, self).setUp()
        cli.register(self.app)

    def run_cli(self, *argv):
        return main(list(argv), self.app)

    def test_usage_errors(self):
        self.assertEqual(self.run_cli('no-such-command'), 2)
        self.assertEqual(self.run_cli('toy', '--bogus'), 2)
        self.assertEqual(self.run_cli('toy'), 2)

    def test_config_error(self):
        code = self.run_cli('train', '--data', self.dir, '--encoder', 'e.pt',
                            '--out', self.path('run'), '--override', 'nope=1')
        self.assertEqual(code, 3)

    def test_data_error(self):
        self.assertEqual(self.run_cli('toy', '--out', self.path('toy'),
                                      '--domains', '0'), 4)

    def test_corrupt_manifest(self):
        with open(self.path('bad.jsonl'), 'w') as f:
            f.write('this is not json\n')
        self.assertEqual(self.run_cli('prepare', '--data', self.path('bad.jsonl'),
                                      '--out', self.path('split'), '--train',
                                      '1', '--test', '1'), 4)
        with open(self.path('partial.jsonl'), 'w') as f:
            f.write('{"format": "octmorph-manifest-v1"}\n')
        with self.assertRaises(DataError):
            DatasetManifest.read(self.path('partial.jsonl'))

    def test_unwritable_output(self):
        write_png(self.path('taken'))
        self.assertEqual(self.run_cli('toy', '--out',
                                      self.path('taken', 'toy'),
                                      '--domains', '2', '--train', '1',
                                      '--test', '1'), 4)

    def test_run_log_stays_out_of_dataset_layout(self):
        class LoggedConfig(TestConfig):
            TESTING = False
            LOG_TO_STDOUT = None

        logged = create_app(LoggedConfig)
        cli.register(logged)
        toy = self.path('toy')
        self.assertEqual(main(['toy', '--out', toy, '--domains', '2',
                               '--train', '2', '--test', '1',
                               '--resolution', '16'], logged), 0)
        self.assertTrue(os.path.isfile(os.path.join(toy, 'octmorph.log')))
        manifest = load_manifest(toy)
        self.assertEqual(manifest.domains, ('normal', 'bump', 'hole'))
        self.assertEqual(len(manifest.records), 9)

    def test_pipeline(self):
        toy = self.path('toy')
        self.assertEqual(self.run_cli('toy', '--out', toy, '--domains', '2',
                                      '--train', '3', '--test', '2',
                                      '--resolution', '16', '--seed', '7'), 0)
        with open(os.path.join(toy, 'effective_config.env')) as f:
            self.assertIn('seed=7', f.read())
        self.assertEqual(self.run_cli('prepare', '--data', toy, '--out',
                                      self.path('split'), '--train', '3',
                                      '--test', '1'), 0)
        with open(self.path('cfg.txt'), 'w') as f:
            f.write(small_config().to_env_text())
        self.assertEqual(self.run_cli('pretrain-style', '--data', toy, '--out',
                                      self.path('style'), '--config',
                                      self.path('cfg.txt')), 0)
        self.assertTrue(os.path.exists(self.path('style', 'cluster.txt')))
        self.assertEqual(self.run_cli('train', '--data', toy, '--encoder',
                                      self.path('style', 'style_encoder.pt'),
                                      '--out', self.path('train'), '--config',
                                      self.path('cfg.txt'), '--override',
                                      'epochs=2'), 0)
        effective = TrainConfig.from_file(self.path('train',
                                                    'effective_config.env'))
        self.assertEqual(effective.epochs, 2)
        self.assertEqual(self.run_cli('evaluate', '--checkpoint',
                                      self.path('train'), '--data', toy,
                                      '--out', self.path('eval'), '--k', '2',
                                      '--features', 'pixels'), 0)
        generated = sum(len(os.listdir(self.path('eval', 'generated', d)))
                        for d in ('bump', 'hole'))
        self.assertEqual(generated, 2 * 2 * 2)
        with open(self.path('eval', 'metrics.csv'), encoding='utf-8') as f:
            header = next(csv.reader(f))
        self.assertEqual(header, ['model', 'toy FID↓', 'toy diversity↑'])
        self.assertEqual(self.run_cli('grid', '--checkpoint',
                                      self.path('train'), '--data', toy,
                                      '--domain', 'bump', '--out',
                                      self.path('grid'), '--sources', '2',
                                      '--references', '2'), 0)
        self.assertTrue(os.path.exists(self.path('grid', 'grid_bump.png')))
        self.assertEqual(self.run_cli('generate', '--checkpoint',
                                      self.path('train'), '--input',
                                      os.path.join(toy, 'normal'),
                                      '--reference',
                                      os.path.join(toy, 'hole',
                                                   'hole_00000.png'),
                                      '--out', self.path('gen')), 0)
        self.assertEqual(len(os.listdir(self.path('gen', 'reference'))), 5)


@unittest.skipUnless(SLOW, 'set OCTMORPH_SLOW_TESTS=1 for the toy experiments')
class ToyExperimentCase(OctMorphCase):
    def setUp(self):
        super(ToyExperimentCase, self).setUp()
        self.manifest = generate_toy(ToySpec(), self.path('toy'))
        self.cfg = TrainConfig(resolution=64, style_epochs=10, seed=0,
                               device='cpu', max_steps=3000,
                               checkpoint_interval=1000)

    def test_toy_signatures_are_separable(self):
        _, accuracy = train_feature_extractor(self.manifest, 64, epochs=5)
        self.assertGreaterEqual(accuracy, 0.95)

    def test_style_clustering(self):
        _, report = pretrain_style_encoder(self.manifest, self.cfg, 'cpu')
        self.assertGreaterEqual(report['final']['accuracy'], 0.90)
        self.assertGreater(report['final']['gap'], report['initial']['gap'])

    def test_end_to_end_translation(self):
        from app.evaluation import evaluate
        encoder, _ = pretrain_style_encoder(self.manifest, self.cfg, 'cpu',
                                            self.path('style.pt'))
        result = run_training(self.manifest, self.path('style.pt'), self.cfg,
                              self.path('run'))
        with open(result.losses) as f:
            rows = list(csv.DictReader(f))
        quarter = len(rows) // 4
        totals = [float(r['total']) for r in rows]
        self.assertLess(np.mean(totals[-quarter:]), np.mean(totals[:quarter]))
        self.assertLess(np.mean([float(r['cyc']) for r in rows[-100:]]), 0.15)
        report = evaluate(self.path('run'), self.manifest, 10,
                          self.path('eval'))
        normals = len(self.manifest.select('test', 0))
        self.assertEqual(report.generated, normals * 3 * 10)
        for domain in report.domains:
            self.assertLess(domain.fid, domain.baseline_fid)


if __name__ == '__main__':
    unittest.main(verbosity=2)
