import os
from dotenv import load_dotenv

basedir = os.path.abspath(os.path.dirname(__file__))
load_dotenv(os.path.join(basedir, '.env'))


class Config(object):
    # device hint for every subcommand; overrides the run config's `device`
    OCTMORPH_DEVICE = os.environ.get('OCTMORPH_DEVICE')

    LOG_TO_STDOUT = os.environ.get('LOG_TO_STDOUT')
    LOG_LEVEL = os.environ.get('LOG_LEVEL') or 'INFO'
    LOG_MAX_BYTES = int(os.environ.get('LOG_MAX_BYTES') or 1024 * 1024)
    LOG_BACKUP_COUNT = int(os.environ.get('LOG_BACKUP_COUNT') or 10)

    NUM_WORKERS = int(os.environ.get('NUM_WORKERS') or 0)
    SOURCE_DOMAIN = os.environ.get('SOURCE_DOMAIN') or 'normal'
    FEATURE_EXTRACTOR_WEIGHTS = os.environ.get('FEATURE_EXTRACTOR_WEIGHTS')
