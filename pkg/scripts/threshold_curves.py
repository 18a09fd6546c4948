"""Regenerate selection-threshold curve CSVs.

Emits one CSV per varied effect (a sibling A|B+ and a cousin B|A+) for the
baseline penalty setting and one adaptive-weight variant, using the CLI's
threshold-curve subcommand.

Usage: python scripts/threshold_curves.py [out_dir]
"""

import sys
from pathlib import Path

from cmeselect.cli import main

OUT = Path(sys.argv[1] if len(sys.argv) > 1 else "curves_out")
OUT.mkdir(parents=True, exist_ok=True)

BASE = ["--lambda-s", "1.0", "--lambda-c", "0.5", "--gamma", "3.0",
        "--tau", "0.25", "--n-points", "161", "--beta-max", "4.0"]

runs = {
    "baseline_vary_sibling.csv": ["--vary", "sibling"],
    "baseline_vary_cousin.csv": ["--vary", "cousin"],
    # group + individual weighted variant (cf. the weighted operator panels)
    "weighted_vary_sibling.csv": ["--vary", "sibling", "--omega-sib", "0.667",
                                  "--omega", "1.5", "--included-beta", "0.5"],
    "weighted_vary_cousin.csv": ["--vary", "cousin", "--omega-sib", "0.667",
                                 "--omega", "1.5", "--included-beta", "0.5"],
}

for name, extra in runs.items():
    code = main(["threshold-curve", *BASE, *extra, "--out", str(OUT / name)])
    if code != 0:
        sys.exit(code)
print(f"curves written to {OUT}/")
