#!/usr/bin/env python3
"""Writes the 5,000-digit MNIST sample shipped with mlxtend as IDX files.

    python3 tools/fetch_digits.py [--wheel mlxtend-0.24.0-py3-none-any.whl] [--out data]

Without --wheel the wheel is fetched with `pip download`. Rows are shuffled
with numpy's RandomState(0) so the acceptance split sees all ten classes.
"""

import argparse
import gzip
import io
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(dest):
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "mlxtend==0.24.0", "-d", dest],
                   check=True)
    return next(pathlib.Path(dest).glob("mlxtend-*.whl"))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel", type=pathlib.Path)
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path(__file__).resolve().parent.parent / "data")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        with zipfile.ZipFile(wheel) as zf:
            raw = gzip.decompress(zf.read(MEMBER))

    a = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    a = a[np.random.RandomState(0).permutation(len(a))]
    X = a[:, :-1].astype(np.uint8)  # the label is the last column
    y = a[:, -1].astype(np.uint8)

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "mnist5k-images.idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(X), 28, 28))
        f.write(X.tobytes())
    with open(args.out / "mnist5k-labels.idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(y)))
        f.write(y.tobytes())
    print(f"wrote {len(X)} digits to {args.out}")


if __name__ == "__main__":
    main()
