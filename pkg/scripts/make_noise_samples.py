"""Regenerate the bundled noise-sample CSV used to estimate the noise variance."""
import argparse
from pathlib import Path

import numpy as np

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "drsisdp" / "configs" / "noise_samples_two_state.csv"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=2)
    ap.add_argument("--n", type=int, default=30)
    ap.add_argument("--channels", type=int, default=1)
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args()
    w = np.random.default_rng(args.seed).standard_normal((args.n, args.channels))
    header = ",".join(f"w{j + 1}" for j in range(args.channels))
    np.savetxt(args.out, w, delimiter=",", header=header, comments="", fmt="%.17g")
    second = np.mean(w * w, axis=0)
    print(f"wrote {args.n} samples to {args.out}; second moment per channel: {second}")


if __name__ == "__main__":
    main()
