#!/usr/bin/env python3
"""Convert a Planetoid citation dataset into the gamlp dataset layout.

Reads ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index} from SRC and writes
edges.tsv, features.bin, labels.tsv and splits/{train,val,test}.txt to DST.
Uses the standard public split: the first len(y) nodes train, the next 500
validate, and the nodes listed in test.index test.

    python3 scripts/planetoid_to_gamlp.py cora raw/ data/cora
"""

import argparse
import pickle
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

NAMES = ("x", "y", "tx", "ty", "allx", "ally", "graph")


def load(src: Path, name: str):
    parts = {}
    for part in NAMES:
        with open(src / f"ind.{name}.{part}", "rb") as f:
            parts[part] = pickle.load(f, encoding="latin1")
    test_index = [int(line) for line in (src / f"ind.{name}.test.index").read_text().split()]
    return parts, test_index


def dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m)


def convert(name: str, src: Path, dst: Path, val_size: int = 500) -> None:
    p, test_index = load(src, name)
    test_range = np.sort(test_index)
    tx, ty = dense(p["tx"]), dense(p["ty"])
    if name == "citeseer":
        # Some test ids have no features; pad the test block with zero rows.
        full = np.arange(test_range.min(), test_range.max() + 1)
        tx_ext = np.zeros((len(full), tx.shape[1]))
        tx_ext[test_range - test_range.min()] = tx
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[test_range - test_range.min()] = ty
        tx, ty = tx_ext, ty_ext
        test_range = full

    features = np.vstack([dense(p["allx"]), tx]).astype(np.float32)
    onehot = np.vstack([dense(p["ally"]), ty])
    features[test_index] = features[test_range]
    onehot[test_index] = onehot[test_range]
    n, f = features.shape

    dst.mkdir(parents=True, exist_ok=True)
    (dst / "splits").mkdir(exist_ok=True)
    with open(dst / "features.bin", "wb") as out:
        out.write(b"GMFX")
        out.write(struct.pack("<QQ", n, f))
        out.write(features.astype("<f4").tobytes())

    with open(dst / "labels.tsv", "w") as out:
        for i in range(n):
            if onehot[i].sum() > 0:
                out.write(f"{i}\t{int(onehot[i].argmax())}\n")

    edges = set()
    for u, nbrs in p["graph"].items():
        for v in nbrs:
            if u != v and u < n and v < n:
                edges.add((min(u, v), max(u, v)))
    with open(dst / "edges.tsv", "w") as out:
        for u, v in sorted(edges):
            out.write(f"{u}\t{v}\n")

    train = range(len(dense(p["y"])))
    val = range(len(train), len(train) + val_size)
    labeled = {i for i in range(n) if onehot[i].sum() > 0}
    splits = {
        "train": list(train),
        "val": list(val),
        "test": [i for i in sorted(test_index) if i in labeled],
    }
    for split, ids in splits.items():
        (dst / "splits" / f"{split}.txt").write_text("".join(f"{i}\n" for i in ids))
    print(f"{name}: {n} nodes, {f} features, {len(edges)} edges, "
          f"{onehot.shape[1]} classes, splits {[len(s) for s in splits.values()]}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("name", choices=["cora", "citeseer", "pubmed"])
    ap.add_argument("src", type=Path, help="directory holding the ind.<name>.* files")
    ap.add_argument("dst", type=Path, help="output dataset directory")
    ap.add_argument("--val-size", type=int, default=500)
    args = ap.parse_args()
    convert(args.name, args.src, args.dst, args.val_size)


if __name__ == "__main__":
    main()
