"""Store, hold and retrieve a photon in the checkerboard subradiant mode (slow: about ten minutes)."""
import argparse
import json
from pathlib import Path

from arrayqi import cli

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/subradiant")
    ap.add_argument("--rate-fraction", type=float, help="pulse rate in units of Gamma_0")
    args = ap.parse_args()
    cfg = cli.load_config(preset="subradiant")
    if args.rate_fraction:
        cfg.memory.rate_fraction = args.rate_fraction
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cli.cmd_memory(cfg, out)
    print(json.dumps(json.loads((out / "memory_summary.json").read_text()), indent=1))
