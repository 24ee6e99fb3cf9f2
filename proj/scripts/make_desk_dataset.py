#!/usr/bin/env python3
"""Build a small MNIST-format (IDX) dataset from the digit JSON files shipped
in the `mnist` npm package (10,000 MNIST digits, pixels in [0, 1] rounded to
three decimals).

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_desk_dataset.py package/src/digits data/desk

Writes gzip-compressed IDX files using the standard MNIST file names. The
test split holds the first `--test-per-class` digits of each class; the
rest form the training split. Both splits are interleaved by class so that
file order carries no label information.
"""

import argparse
import gzip
import json
import os
import struct


def write_idx(path, payload, dims):
    magic = struct.pack(">BBBB", 0, 0, 0x08, len(dims))
    header = magic + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header)
        f.write(bytes(payload))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--test-per-class", type=int, default=100)
    args = ap.parse_args()

    per_class = []
    for label in range(10):
        with open(os.path.join(args.digits_dir, f"{label}.json")) as f:
            raw = json.load(f)["data"]
        n = len(raw) // 784
        images = []
        for i in range(n):
            px = raw[i * 784:(i + 1) * 784]
            images.append([min(255, max(0, int(round(v * 255)))) for v in px])
        per_class.append(images)

    def interleave(lists):
        out = []
        longest = max(len(l) for l in lists)
        for i in range(longest):
            for label, l in enumerate(lists):
                if i < len(l):
                    out.append((label, l[i]))
        return out

    k = args.test_per_class
    test = interleave([imgs[:k] for imgs in per_class])
    train = interleave([imgs[k:] for imgs in per_class])

    os.makedirs(args.out_dir, exist_ok=True)
    for prefix, split in (("train", train), ("t10k", test)):
        pixels = bytearray()
        labels = bytearray()
        for label, img in split:
            pixels.extend(img)
            labels.append(label)
        write_idx(os.path.join(args.out_dir, f"{prefix}-images-idx3-ubyte.gz"),
                  pixels, [len(split), 28, 28])
        write_idx(os.path.join(args.out_dir, f"{prefix}-labels-idx1-ubyte.gz"),
                  labels, [len(split)])
        print(f"{prefix}: {len(split)} samples")


if __name__ == "__main__":
    main()
