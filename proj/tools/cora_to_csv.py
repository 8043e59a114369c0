#!/usr/bin/env python3
"""Convert the LINQS Cora release (cora.content, cora.cites) to the loader's formats.

Writes features.csv ("N,D" header, then one row per paper), labels.csv
("index,class") and edges.txt ("i j", 0-based) into the output directory.
Papers are indexed in file order; classes are numbered by sorted name.
"""

import argparse
import csv
import pathlib


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("src", type=pathlib.Path, help="directory holding cora.content and cora.cites")
    ap.add_argument("out", type=pathlib.Path, help="output directory")
    args = ap.parse_args()

    rows = [line.split() for line in (args.src / "cora.content").read_text().splitlines() if line.strip()]
    index = {r[0]: i for i, r in enumerate(rows)}
    classes = {name: c for c, name in enumerate(sorted({r[-1] for r in rows}))}

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "features.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([len(rows), len(rows[0]) - 2])
        for r in rows:
            w.writerow(r[1:-1])
    with open(args.out / "labels.csv", "w", newline="") as f:
        w = csv.writer(f)
        for i, r in enumerate(rows):
            w.writerow([i, classes[r[-1]]])

    edges = set()
    for line in (args.src / "cora.cites").read_text().splitlines():
        parts = line.split()
        if len(parts) != 2 or parts[0] not in index or parts[1] not in index:
            continue
        i, j = index[parts[0]], index[parts[1]]
        if i != j:
            edges.add((min(i, j), max(i, j)))
    with open(args.out / "edges.txt", "w") as f:
        for i, j in sorted(edges):
            f.write(f"{i} {j}\n")
    print(f"{len(rows)} papers, {len(rows[0]) - 2} features, {len(classes)} classes, {len(edges)} edges")


if __name__ == "__main__":
    main()
