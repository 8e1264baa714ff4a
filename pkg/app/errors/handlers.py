import functools
import json
import logging
import sys
import click
from app.errors import DataError, OctMorphError

logger = logging.getLogger(__name__)

USAGE_EXIT_CODE = 2


def error_response(exit_code, message=None, category=None):
    """Single-line, machine-parseable failure record written to stderr."""
    payload = 'error category={} code={}'.format(category or 'internal',
                                                 exit_code)
    if message:
        payload += ' message=' + json.dumps(str(message))
    click.echo(payload, err=True)
    return exit_code


def usage_error(error):
    error.show()
    return error_response(USAGE_EXIT_CODE, error.format_message(), 'usage')


def handle_errors(f):
    """Turns octmorph exceptions raised by a command into exit codes; stray
    filesystem errors count as data failures."""
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            try:
                return f(*args, **kwargs)
            except OSError as e:
                raise DataError(str(e)) from e
        except OctMorphError as e:
            logger.error('%s failed: %s', f.__name__, e.message,
                         exc_info=sys.exc_info())
            code = error_response(e.exit_code, e.message, e.category)
            raise click.exceptions.Exit(code)
    return wrapper
