"""Mean 1/C versus position disorder for a 30 x 30 array, with the log-log slope."""
import argparse
import json
from pathlib import Path

from arrayqi import cli

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/fig4a")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--realizations", type=int, help="override the number of disorder draws")
    args = ap.parse_args()
    cfg = cli.load_config(preset="fig4a")
    if args.realizations:
        cfg.disorder.realizations = args.realizations
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cli.cmd_disorder_sweep(cfg, out, args.workers)
    print(json.dumps(json.loads((out / "disorder_sweep.json").read_text()), indent=1))
    print((out / "disorder_sweep.csv").read_text())
