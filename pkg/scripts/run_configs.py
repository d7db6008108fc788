"""Run every experiment config under scripts/configs (or the ones named).

    python3 scripts/run_configs.py                 # all of them
    python3 scripts/run_configs.py gap_sweep_1d    # by stem

Outputs land under each config's output_dir (relative to the working
directory) unless OUTPUT_DIR is set.  Exits with the worst status seen.
"""

import sys
import time
from pathlib import Path

from cuspwalk.cli import main

HERE = Path(__file__).resolve().parent / "configs"


def main_script(names):
    paths = sorted(HERE.glob("*.toml"))
    if names:
        paths = [p for p in paths if p.stem in names]
        missing = set(names) - {p.stem for p in paths}
        if missing:
            sys.exit(f"unknown configs: {sorted(missing)}")
    worst = 0
    for p in paths:
        t0 = time.perf_counter()
        print(f"== {p.stem}", flush=True)
        rc = main(["run", str(p)])
        print(f"== {p.stem}: exit {rc} ({time.perf_counter() - t0:.1f}s)", flush=True)
        worst = max(worst, rc)
    return worst


if __name__ == "__main__":
    sys.exit(main_script(sys.argv[1:]))
