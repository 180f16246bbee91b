#!/usr/bin/env python3
"""Convert the Planetoid distribution of Cora/CiteSeer/PubMed to the
canonical dataset directory read by the `attack` CLI.

Usage:
    python3 scripts/planetoid_to_canonical.py <raw_dir> <name> <out_dir>

`raw_dir` holds the `ind.<name>.{x,tx,allx,y,ty,ally,graph,test.index}`
files. Only the largest connected component is kept, and edges are
symmetrized with self-loops and duplicates removed.
"""

import json
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


def load(raw: Path, name: str, part: str):
    with open(raw / f"ind.{name}.{part}", "rb") as f:
        return pickle.load(f, encoding="latin1")


def main() -> None:
    if len(sys.argv) != 4:
        sys.exit(__doc__)
    raw, name, out = Path(sys.argv[1]), sys.argv[2], Path(sys.argv[3])
    x, tx, allx = (load(raw, name, p) for p in ("x", "tx", "allx"))
    y, ty, ally = (load(raw, name, p) for p in ("y", "ty", "ally"))
    graph = load(raw, name, "graph")
    test_index = [int(l) for l in (raw / f"ind.{name}.test.index").read_text().split()]
    test_sorted = np.sort(test_index)

    if name == "citeseer":
        # Some test ids have no features; pad them with zero rows.
        full = range(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = sp.lil_matrix((len(full), x.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        tx = tx_ext
        ty_ext = np.zeros((len(full), y.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        ty = ty_ext

    features = sp.vstack((allx, tx)).tolil()
    features[test_index, :] = features[test_sorted, :]
    labels = np.vstack((ally, ty))
    labels[test_index, :] = labels[test_sorted, :]
    n = features.shape[0]

    rows, cols = [], []
    for i, nbrs in graph.items():
        for j in nbrs:
            if i != j and i < n and j < n:
                rows.append(i)
                cols.append(j)
    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    adj = ((adj + adj.T) > 0).astype(np.int8)

    _, comp = connected_components(adj, directed=False)
    keep = np.flatnonzero(comp == np.bincount(comp).argmax())
    adj = adj[keep][:, keep].tocoo()
    features = features.tocsr()[keep].toarray()
    # Nodes with an all-zero label row get class 0.
    classes = labels[keep].argmax(axis=1)

    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "num_nodes": int(len(keep)),
        "feature_dim": int(features.shape[1]),
        "num_classes": int(labels.shape[1]),
        "name": name,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    pairs = sorted({(min(i, j), max(i, j)) for i, j in zip(adj.row.tolist(), adj.col.tolist())})
    with open(out / "edges.csv", "w") as f:
        f.writelines(f"{i},{j}\n" for i, j in pairs)
    with open(out / "features.csv", "w") as f:
        for row in features:
            f.write(",".join(f"{v:g}" for v in row) + "\n")
    with open(out / "labels.csv", "w") as f:
        f.writelines(f"{c}\n" for c in classes)
    print(f"{name}: {meta['num_nodes']} nodes, {len(pairs)} edges, {meta['num_classes']} classes")


if __name__ == "__main__":
    main()
