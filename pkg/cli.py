"""Command-line entrypoint.

This file exists only to make running the commands unambiguous.

Usage:
  python cli.py --help
  python cli.py solve-mdp --config configs/default.ini
"""

from conservation_rl.app import create_app

cli = create_app()

if __name__ == "__main__":
    cli()
