#!/usr/bin/env python3
"""Reproduce the budget experiment (success rate vs M).

Runs the sweep defined in configs/m_sweep.cfg; any extra command-line
flags are forwarded, so e.g. `--t 20000 --reps 3` gives a quick pass and
`--outdir /tmp/m_sweep` redirects the artifacts.
"""

import sys
from pathlib import Path

from edgemon.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "m_sweep.cfg"

if __name__ == "__main__":
    sys.exit(main(["sweep", str(CONFIG), *sys.argv[1:]]))
