#!/usr/bin/env python3
"""Reproduce the fleet-size experiment (success rate vs N).

Runs the sweep defined in configs/n_sweep.cfg; any extra command-line
flags are forwarded, so e.g. `--t 20000 --reps 3` gives a quick pass and
`--outdir /tmp/n_sweep` redirects the artifacts.
"""

import sys
from pathlib import Path

from edgemon.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "n_sweep.cfg"

if __name__ == "__main__":
    sys.exit(main(["sweep", str(CONFIG), *sys.argv[1:]]))
