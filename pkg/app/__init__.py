import logging
from logging.handlers import RotatingFileHandler
import os
from flask import Flask, current_app, has_app_context
import torch
from config import Config

LOG_FORMAT = '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'
RUN_LOG = 'octmorph.log'


def create_app(config_class=Config):
    app = Flask(__name__)
    app.config.from_object(config_class)

    if not app.debug and not app.testing:
        if app.config['LOG_TO_STDOUT']:
            stream_handler = logging.StreamHandler()
            stream_handler.setFormatter(logging.Formatter(LOG_FORMAT))
            stream_handler.setLevel(logging.INFO)
            app.logger.addHandler(stream_handler)

        app.logger.setLevel(app.config['LOG_LEVEL'])
        app.logger.info('octmorph startup')

    return app


def attach_run_log(app, out_dir):
    """Sends the application log of one command to ``out_dir/octmorph.log``.

    The log is a plain file, not a directory: the only directories of a
    dataset root written by ``toy`` are its domains.
    """
    if app.testing:
        return None
    file_handler = RotatingFileHandler(
        os.path.join(out_dir, RUN_LOG),
        maxBytes=app.config['LOG_MAX_BYTES'],
        backupCount=app.config['LOG_BACKUP_COUNT'])
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    file_handler.setLevel(logging.INFO)
    app.logger.addHandler(file_handler)
    return file_handler


def resolve_device(hint=None):
    env_hint = current_app.config.get('OCTMORPH_DEVICE') \
        if has_app_context() else None
    hint = env_hint or hint or 'auto'
    if hint == 'auto':
        hint = 'cuda' if torch.cuda.is_available() else 'cpu'
    return torch.device(hint)
