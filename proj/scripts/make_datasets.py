#!/usr/bin/env python3
"""Regenerate the benchmark CSVs under data/.

Wine and Iris come from scikit-learn's bundled copies of the UCI data.
Balance-scale is synthesized exactly: the UCI file is the full factorial
design over LW,LD,RW,RD in {1..5} labeled by sign(LW*LD - RW*RD).
Ionosphere cannot be synthesized; if data/ionosphere.csv is missing this
script expects a raw UCI-format file (34 features + g/b label, no header)
passed via --ionosphere-raw.

The generated files are committed, so running this is only needed to
rebuild them from scratch.
"""

import argparse
import csv
import os


def fmt(x):
    # repr keeps doubles round-trippable without noise like 5.099999999999999e-01
    return repr(float(x))


def write_csv(path, header, rows):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path} ({len(rows)} rows)")


def make_wine(outdir):
    from sklearn.datasets import load_wine

    ds = load_wine()
    names = [n.replace("/", "_") for n in ds.feature_names]
    rows = [[fmt(v) for v in x] + [str(y + 1)] for x, y in zip(ds.data, ds.target)]
    write_csv(os.path.join(outdir, "wine.csv"), names + ["label"], rows)


def make_iris(outdir):
    from sklearn.datasets import load_iris

    ds = load_iris()
    names = [n.replace(" (cm)", "").replace(" ", "_") for n in ds.feature_names]
    species = ["setosa", "versicolor", "virginica"]
    rows = [[fmt(v) for v in x] + [species[y]] for x, y in zip(ds.data, ds.target)]
    write_csv(os.path.join(outdir, "iris.csv"), names + ["label"], rows)


def make_balance(outdir):
    rows = []
    for lw in range(1, 6):
        for ld in range(1, 6):
            for rw in range(1, 6):
                for rd in range(1, 6):
                    left, right = lw * ld, rw * rd
                    label = "L" if left > right else ("R" if right > left else "B")
                    rows.append([str(lw), str(ld), str(rw), str(rd), label])
    write_csv(
        os.path.join(outdir, "balance.csv"),
        ["left_weight", "left_distance", "right_weight", "right_distance", "label"],
        rows,
    )


def make_ionosphere(outdir, raw_path):
    if raw_path is None:
        print("skipping ionosphere (no --ionosphere-raw given)")
        return
    rows = []
    with open(raw_path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            assert len(parts) == 35, f"bad row width {len(parts)}"
            assert parts[-1] in ("g", "b")
            rows.append(parts)
    assert len(rows) == 351, f"expected 351 rows, got {len(rows)}"
    header = [f"pulse{i:02d}" for i in range(34)] + ["label"]
    write_csv(os.path.join(outdir, "ionosphere.csv"), header, rows)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--outdir", default=os.path.join(os.path.dirname(__file__), "..", "data"))
    ap.add_argument("--ionosphere-raw", default=None, help="path to raw UCI ionosphere.data")
    args = ap.parse_args()
    outdir = os.path.abspath(args.outdir)
    make_wine(outdir)
    make_iris(outdir)
    make_balance(outdir)
    make_ionosphere(outdir, args.ionosphere_raw)


if __name__ == "__main__":
    main()
