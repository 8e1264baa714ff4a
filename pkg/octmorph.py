import sys
import click
from flask.cli import ScriptInfo
from app import create_app, cli
from app.errors.handlers import usage_error

app = create_app()
cli.register(app)


def main(argv=None, application=None):
    """Runs one subcommand and returns the process exit code."""
    application = application or app
    try:
        rv = application.cli.main(args=argv, prog_name='octmorph',
                                  standalone_mode=False,
                                  obj=ScriptInfo(create_app=lambda: application))
    except click.UsageError as e:
        return usage_error(e)
    except click.Abort:
        click.echo('Aborted!', err=True)
        return 1
    # without standalone mode click returns the code of an Exit
    return rv if isinstance(rv, int) else 0


if __name__ == '__main__':
    sys.exit(main())
