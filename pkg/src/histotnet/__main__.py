"""
Module entrypoint so the CLI can be run without installing the console script.

Examples:
  python -m histotnet --help
  python -m histotnet demo --out runs/demo
"""

from __future__ import annotations

from histotnet.cli import main

if __name__ == "__main__":
    main()
