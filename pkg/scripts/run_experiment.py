"""Run a shipped comparison config and print the headline numbers.

    python scripts/run_experiment.py configs/homotopy_bimodal.json --out runs/homotopy
"""

import argparse
import json
import sys
from pathlib import Path

from dsmlangevin.harness import cli


def main():
    p = argparse.ArgumentParser()
    p.add_argument("config")
    p.add_argument("--out", default=None)
    args = p.parse_args()
    out = Path(args.out or Path("runs") / Path(args.config).stem)
    code = cli.main(["compare", args.config, "--out", str(out)])
    if code != 0:
        sys.exit(code)
    report = json.loads((out / "comparison.json").read_text())
    for arm in report["arms"]:
        print(f"{arm['name']:>20}  median final W2 {arm['median_w2']:.4f}  wins {report['tally'][arm['name']]:g}")
    if "spearman" in report:
        print(f"spearman rho (attribute vs final W2): {report['spearman']['rho']:.3f}")


if __name__ == "__main__":
    main()
