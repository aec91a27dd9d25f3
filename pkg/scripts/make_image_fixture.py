"""Write small random files in the 3073-byte image record layout.

Useful for exercising the image loader end to end without the real dataset:

    python3 scripts/make_image_fixture.py --out data/fake --train 500 --test 200
"""

import argparse
from pathlib import Path

import numpy as np

from l2ood.datasets import PIXELS, write_image_binary


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/fake")
    ap.add_argument("--train", type=int, default=500)
    ap.add_argument("--test", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # class-dependent brightness so a model has something to learn
    for name, n in (("train.bin", args.train), ("test.bin", args.test)):
        labels = rng.integers(0, 10, n)
        base = (labels[:, None] * 20 + 30).astype(float)
        pixels = np.clip(base + rng.normal(0, 40, (n, PIXELS)), 0, 255).astype(np.uint8)
        write_image_binary(out / name, labels, pixels)
        print(f"wrote {out / name} ({n} records)")


if __name__ == "__main__":
    main()
