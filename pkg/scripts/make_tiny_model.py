"""Regenerate the bundled tiny test model and its manifest."""

import argparse
from pathlib import Path

from froq.synthetic import write_tiny_model

DEFAULT_DIR = Path(__file__).resolve().parents[1] / "src" / "froq" / "data"

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", type=Path, default=DEFAULT_DIR)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    path = write_tiny_model(args.out_dir, args.seed)
    print(f"wrote {path} ({path.stat().st_size} bytes)")
