"""Reflectance maps of ten stacked layers at a_z = 1 and a_z = 0.5."""
import argparse
from pathlib import Path

from arrayqi import cli

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    for name in ("fig8a", "fig8b"):
        out = Path(args.out) / name
        out.mkdir(parents=True, exist_ok=True)
        cli.cmd_layers_map(cli.load_config(preset=name), out, args.workers)
        print(name)
        print((out / "layers_peaks.csv").read_text())
