"""Ordered-array 1/C against the Gaussian overlap prediction as the array grows."""
import argparse
from pathlib import Path

from arrayqi import cli

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/fig4b")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cli.cmd_size_sweep(cli.load_config(preset="fig4b"), out, args.workers)
    print((out / "size_sweep.csv").read_text())
