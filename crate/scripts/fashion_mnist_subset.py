#!/usr/bin/env python3
"""Write a small label-plus-784-pixel Fashion-MNIST CSV.

The source is the `fashion-mnist` npm package, which ships the raw 0-255
pixels grouped per class under package/src/clothes/<class>.json:

    npm pack fashion-mnist && tar xzf fashion-mnist-*.tgz
    python3 scripts/fashion_mnist_subset.py package data/fashion-mnist-1200.csv
"""
import csv
import json
import random
import sys
from pathlib import Path

PER_CLASS = 120


def main() -> None:
    package, out = Path(sys.argv[1]), Path(sys.argv[2])
    rows = []
    for label in range(10):
        data = json.loads((package / "src" / "clothes" / f"{label}.json").read_text())["data"]
        rows.extend([label, *pixels] for pixels in data[:PER_CLASS])
    random.Random(0).shuffle(rows)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        csv.writer(fh).writerows(rows)


if __name__ == "__main__":
    main()
