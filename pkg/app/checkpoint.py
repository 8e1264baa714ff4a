import hashlib
import logging
import os
import torch
from app.errors import DataError

logger = logging.getLogger(__name__)


def save_checkpoint(path, state, meta):
    """One file: named state dicts plus a metadata block carrying ``stage``."""
    if 'stage' not in meta:
        raise ValueError('checkpoint metadata needs a stage tag')
    directory = os.path.dirname(path)
    if directory and not os.path.isdir(directory):
        os.makedirs(directory)
    tmp = path + '.tmp'
    torch.save({'meta': meta, 'state': state}, tmp)
    os.replace(tmp, path)
    logger.info('saved %s checkpoint to %s', meta['stage'], path)
    return path


def load_checkpoint(path, stage):
    if not os.path.exists(path):
        raise DataError('checkpoint {} does not exist'.format(path))
    try:
        payload = torch.load(path, map_location='cpu')
    except Exception as e:
        raise DataError('cannot read checkpoint {}: {}'.format(path, e))
    found = payload.get('meta', {}).get('stage')
    if found != stage:
        raise DataError('{} holds a {!r} checkpoint, expected {!r}'.format(
            path, found, stage))
    return payload['meta'], payload['state']


def parameter_hash(module):
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode('utf-8'))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
