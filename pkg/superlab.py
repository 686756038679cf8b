# /superlab/superlab.py

import os
import sys
import importlib

import click

import config
from utils.command_helpers import EXIT_ERROR


# --- CLI GROUP ---
@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def cli(verbose: bool):
    """Superprocess density and regularity experiments."""
    config.set_verbose(verbose)


def load_commands(group: click.Group) -> None:
    """Import every module in commands/ and let it register its subcommand."""
    if getattr(group, "_commands_loaded", False):
        return
    for filename in sorted(os.listdir(config.COMMANDS_DIR)):
        if not filename.endswith('.py') or filename.startswith('_'):
            continue
        try:
            module = importlib.import_module(f'commands.{filename[:-3]}')
            module.setup(group)
            config.logger.debug(f"Loaded command module: {filename}")
        except Exception as e:
            config.logger.error(f"Failed to load command module {filename}: {e}", exc_info=True)
    group._commands_loaded = True


def main(argv=None) -> int:
    load_commands(cli)
    try:
        result = cli.main(args=argv, prog_name=config.TOOL_NAME, standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return EXIT_ERROR
    except click.ClickException as e:
        e.show()
        return EXIT_ERROR
    except click.Abort:
        click.echo("Aborted.", err=True)
        return EXIT_ERROR
    return result if isinstance(result, int) else 0


# --- MAIN SCRIPT EXECUTION ---
if __name__ == "__main__":
    sys.exit(main())
