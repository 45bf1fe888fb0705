#!/usr/bin/env python3
"""Build Fashion-MNIST IDX files from the `fashion-mnist` npm package.

The npm package ships the 70,000 images as per-class JSON arrays of 0-255
pixel values. This script converts them to the standard IDX containers:

    <out>/fashion-images-idx3-ubyte
    <out>/fashion-labels-idx1-ubyte

Images are written grouped by class in file order (class 0 first).

Usage:
    npm pack fashion-mnist && tar xzf fashion-mnist-*.tgz
    python3 scripts/fetch_fashion_mnist.py package/src/clothes $POSTVAR_DATA_DIR
"""
import json
import os
import struct
import sys


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    src, out = sys.argv[1], sys.argv[2]
    os.makedirs(out, exist_ok=True)
    images, labels = [], []
    for cls in range(10):
        with open(os.path.join(src, f"{cls}.json")) as fh:
            data = json.load(fh)["data"]
        for img in data:
            if not img:
                print(f"class {cls}: skipping empty entry", file=sys.stderr)
                continue
            if len(img) != 784:
                sys.exit(f"class {cls}: image with {len(img)} pixels")
            images.append(bytes(img))
            labels.append(cls)
    with open(os.path.join(out, "fashion-images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            fh.write(img)
    with open(os.path.join(out, "fashion-labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(labels)))
        fh.write(bytes(labels))
    print(f"wrote {len(images)} images to {out}")


if __name__ == "__main__":
    main()
