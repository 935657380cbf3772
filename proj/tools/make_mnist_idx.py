#!/usr/bin/env python3
"""Write gzipped MNIST IDX files into data/mnist.

Takes the standard four IDX files (for example from the `mnist-data` npm
package), keeps the first --train images of the training set and all of
the test set, and writes deterministic gzip streams.

    npm pack mnist-data && tar xzf mnist-data-*.tgz
    python3 tools/make_mnist_idx.py package/data data/mnist
"""
import argparse
import gzip
import pathlib
import struct


def read_idx(path):
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    magic, count = struct.unpack(">II", raw[:8])
    ndim = magic & 0xFF
    dims = struct.unpack(">" + "I" * (ndim - 1), raw[8:4 + 4 * ndim])
    return magic, count, dims, raw[4 + 4 * ndim:]


def write_idx(path, magic, count, dims, payload):
    header = struct.pack(">II", magic, count) + struct.pack(">" + "I" * len(dims), *dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + payload)


def find(src, stem):
    for name in (stem, stem + ".gz"):
        if (src / name).exists():
            return src / name
    raise SystemExit(f"missing {stem} in {src}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("src", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--train", type=int, default=10000)
    args = ap.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)

    for split, keep in (("train", args.train), ("t10k", None)):
        for kind in ("images-idx3-ubyte", "labels-idx1-ubyte"):
            magic, count, dims, payload = read_idx(find(args.src, f"{split}-{kind}"))
            n = count if keep is None else min(keep, count)
            item = 1
            for d in dims:
                item *= d
            write_idx(args.out_dir / f"{split}-{kind}.gz", magic, n, dims, payload[: n * item])
            print(f"{split}-{kind}: {n} items")


if __name__ == "__main__":
    main()
