#!/usr/bin/env python3
"""Plot value at b0 against wall-clock time from one or more iterations.csv logs.

    python scripts/plot.py decpi-out/iterations.csv other/iterations.csv -o value.png
"""
import argparse
import csv
import os

import matplotlib.pyplot as plt


def read_log(path):
    with open(path) as f:
        rows = list(csv.DictReader(line for line in f if not line.startswith("#")))
    xs = [float(r.get("seconds", 0.0)) for r in rows]
    ys = [float(r["value_b0"]) for r in rows]
    return xs, ys


def main():
    p = argparse.ArgumentParser()
    p.add_argument("logs", nargs="+")
    p.add_argument("-o", "--output", default="value.png")
    args = p.parse_args()
    for path in args.logs:
        xs, ys = read_log(path)
        plt.plot(xs, ys, marker="o", label=os.path.basename(os.path.dirname(path)) or path)
    plt.xlabel("seconds")
    plt.ylabel("value at b0")
    plt.legend()
    plt.savefig(args.output, dpi=150)


if __name__ == "__main__":
    main()
