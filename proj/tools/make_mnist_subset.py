#!/usr/bin/env python3
"""Build the 10k-digit MNIST subset as IDX files.

The digits come from the `mnist` npm package, which bundles 10,000 real MNIST
samples as JSON (784 floats in [0,1] per digit, rounded to 3 decimals). Pixels
are mapped back to bytes with round(v * 255) and written in the standard IDX
layout, shuffled with a fixed seed so class order carries no signal.

    python3 tools/make_mnist_subset.py --out data/mnist10k
    python3 tools/make_mnist_subset.py --package /path/to/mnist-1.1.0.tgz --out ...
"""
import argparse
import json
import random
import struct
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path


def fetch_package(workdir: Path) -> Path:
    out = subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir,
                         check=True, capture_output=True, text=True)
    return workdir / out.stdout.strip().splitlines()[-1]


def load_digits(tgz: Path):
    samples = []
    with tarfile.open(tgz) as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            flat = json.load(member)["data"]
            if len(flat) % 784:
                sys.exit(f"digit {digit}: payload not a multiple of 784")
            for k in range(0, len(flat), 784):
                pixels = bytes(min(255, max(0, round(v * 255))) for v in flat[k:k + 784])
                samples.append((pixels, digit))
    return samples


def write_idx(out: Path, prefix: str, samples):
    with open(out / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with open(out / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, type=Path)
    ap.add_argument("--package", type=Path, help="pre-downloaded mnist-1.1.0.tgz")
    ap.add_argument("--seed", type=int, default=20210101)
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        tgz = args.package or fetch_package(Path(tmp))
        samples = load_digits(tgz)
    random.Random(args.seed).shuffle(samples)
    write_idx(args.out, "train", samples)
    counts = [0] * 10
    for _, label in samples:
        counts[label] += 1
    print(f"wrote {len(samples)} samples to {args.out} (per-class {counts})")


if __name__ == "__main__":
    main()
