"""Reference-guided synthesis: every normal image translated with the styles of
k references per target domain, plus the source/reference montage."""
import logging
import os
import re
from typing import NamedTuple
import torch
from torchvision.utils import save_image
from app.data.augment import child_rng
from app.errors import DataError
from app.networks.generator import generate
from app.style.encoder import encode

logger = logging.getLogger(__name__)


class Sample(NamedTuple):
    id: str
    image: torch.Tensor


class DomainOutputs(NamedTuple):
    domain: str
    outputs: torch.Tensor
    assignments: list
    paths: list


def sample_id(path):
    name = os.path.splitext(os.path.basename(path.split('#')[0]))[0]
    suffix = path.split('#')[1] if '#' in path else ''
    return re.sub(r'[^A-Za-z0-9_.-]', '-', name + ('-' + suffix if suffix
                                                   else ''))


def samples(records, store):
    return [Sample(sample_id(r.path), store.load(r)) for r in records]


def denorm(x):
    return ((x + 1) / 2).clamp(0, 1)


def choose_references(rng, pool_size, k, domain):
    if pool_size == 0:
        raise DataError('no reference images for domain {!r}'.format(domain))
    if pool_size >= k:
        return [int(i) for i in rng.choice(pool_size, k, replace=False)]
    return [int(i) for i in rng.integers(0, pool_size, k)]


def _unique_names(ids):
    seen, names = {}, []
    for ref in ids:
        j = seen.get(ref, 0)
        seen[ref] = j + 1
        names.append(ref if j == 0 else '{}-{}'.format(ref, j))
    return names


def reference_synthesis(generator, encoder, normals, references, k, out_dir,
                        seed=0, device='cpu'):
    """Translates every normal with k sampled references of every domain.

    ``references`` maps domain name to a list of samples. Outputs are written
    to ``out_dir/<domain>/<source_id>_<ref_id>.png``; the reference choice for
    (normal i, domain d) depends only on (seed, i, d).
    """
    if k < 1:
        raise DataError('k must be at least 1')
    results = {}
    for d, (domain, pool) in enumerate(sorted(references.items())):
        if len(pool) < k:
            logger.warning('domain %s has %d references for k=%d; sampling '
                           'with replacement', domain, len(pool), k)
        directory = os.path.join(out_dir, domain)
        if not os.path.isdir(directory):
            os.makedirs(directory)
        codes = encode(encoder, torch.stack([s.image for s in pool])
                       .to(device))
        outputs, assignments, paths = [], [], []
        for i, normal in enumerate(normals):
            rng = child_rng(seed, i, d)
            chosen = choose_references(rng, len(pool), k, domain)
            x = normal.image.unsqueeze(0).to(device).expand(k, -1, -1, -1)
            fake = generate(generator, x, codes[chosen]).cpu()
            ids = [pool[j].id for j in chosen]
            for image, name in zip(fake, _unique_names(ids)):
                path = os.path.join(directory,
                                    '{}_{}.png'.format(normal.id, name))
                save_image(denorm(image), path)
                paths.append(path)
            outputs.append(fake)
            assignments.append(ids)
        results[domain] = DomainOutputs(
            domain, torch.stack(outputs) if outputs else torch.empty(0),
            assignments, paths)
        logger.info('generated %d images for %s', len(paths), domain)
    return results


def build_grid_cells(generator, encoder, sources, refs, device='cpu'):
    """(m + 1) x (r + 1) cells, row-major: a blank corner, the references along
    the first row and each source followed by its translations."""
    source_batch = torch.stack([s.image for s in sources]).to(device)
    ref_batch = torch.stack([s.image for s in refs]).to(device)
    codes = encode(encoder, ref_batch)
    r = len(refs)
    blank = torch.full_like(source_batch[0], -1.0)
    cells = [blank] + list(ref_batch)
    for source in source_batch:
        cells.append(source)
        cells.extend(generate(generator, source.unsqueeze(0).expand(
            r, -1, -1, -1), codes))
    return torch.stack(cells).cpu(), r + 1


def reference_grid(generator, encoder, sources, refs, path, device='cpu'):
    if not sources or not refs:
        raise DataError('a grid needs at least one source and one reference')
    cells, ncol = build_grid_cells(generator, encoder, sources, refs, device)
    directory = os.path.dirname(path)
    if directory and not os.path.isdir(directory):
        os.makedirs(directory)
    save_image(denorm(cells), path, nrow=ncol, padding=2)
    return path
