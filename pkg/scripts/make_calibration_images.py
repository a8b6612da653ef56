"""Write the 30-image synthetic calibration set (10 clean, 10 blurred, 10 noisy)."""

import argparse
from pathlib import Path

from froq.synthetic import write_calibration_set

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--identities", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    paths, pairs = write_calibration_set(args.out_dir, args.identities, seed=args.seed)
    print(f"wrote {len(paths)} images and {pairs}")
