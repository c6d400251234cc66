"""Undirected sparse graphs, dataset I/O, and the mask algebra used by all
dropping strategies.

A :class:`Graph` stores each undirected edge once as a canonical pair
``(u, v)`` with ``u < v`` and exposes a CSR view containing both directed
entries, so neighbor queries and edge-mask bookkeeping stay O(1)-indexable.
Graphs are immutable after construction; masking operations return new
graphs with dropped nodes left in place as isolated vertices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DatasetError",
    "Graph",
    "LabelsAndSplits",
    "NormalizedAdjacency",
    "EdgeSplits",
    "load_dataset",
    "save_dataset",
    "normalize_adjacency",
    "apply_node_mask",
    "apply_edge_mask",
    "split_edges_for_linkpred",
    "sample_absent_pairs",
]


class DatasetError(ValueError):
    """Raised when an on-disk dataset is malformed; message names file and line."""


def _canonical_pairs(pairs: np.ndarray) -> np.ndarray:
    """Sort pair endpoints so u < v, then sort pairs lexicographically."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    lo = pairs.min(axis=1)
    hi = pairs.max(axis=1)
    out = np.stack([lo, hi], axis=1)
    order = np.lexsort((out[:, 1], out[:, 0]))
    return out[order]


class Graph:
    """Immutable undirected graph without self loops.

    Parameters
    ----------
    num_nodes : int
        Number of vertices; indices run from 0 to ``num_nodes - 1``.
    pairs : array of shape (m, 2)
        Undirected edges, one row per edge. Rows are canonicalized to
        ``u < v`` and sorted; duplicates and self loops are rejected.
    masked : bool
        Marks graphs produced by a masking operation. Metadata only; it is
        ignored by equality and lets downstream consumers assert that
        evaluation never runs on a dropped topology.
    """

    __slots__ = (
        "num_nodes",
        "pairs",
        "indptr",
        "indices",
        "degrees",
        "entry_pair",
        "pair_entries",
        "masked",
    )

    def __init__(self, num_nodes: int, pairs: np.ndarray, *, masked: bool = False):
        num_nodes = int(num_nodes)
        if num_nodes < 0:
            raise ValueError(f"num_nodes must be >= 0, got {num_nodes}")
        pairs = _canonical_pairs(pairs) if len(pairs) else np.empty((0, 2), dtype=np.int64)
        if len(pairs):
            if pairs.min() < 0 or pairs.max() >= num_nodes:
                raise ValueError(
                    f"edge endpoint out of range [0, {num_nodes}): "
                    f"min={pairs.min()}, max={pairs.max()}"
                )
            if np.any(pairs[:, 0] == pairs[:, 1]):
                bad = pairs[pairs[:, 0] == pairs[:, 1]][0]
                raise ValueError(f"self loop ({bad[0]}, {bad[1]}) not allowed")
            dup = np.all(pairs[1:] == pairs[:-1], axis=1)
            if np.any(dup):
                bad = pairs[1:][dup][0]
                raise ValueError(f"duplicate edge ({bad[0]}, {bad[1]})")

        self.num_nodes = num_nodes
        self.pairs = pairs
        self.masked = bool(masked)

        # CSR over both directions. Entry order: targets ascending per source.
        m = len(pairs)
        src = np.concatenate([pairs[:, 0], pairs[:, 1]])
        dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
        pair_of = np.concatenate([np.arange(m), np.arange(m)])
        order = np.lexsort((dst, src))
        src, dst, pair_of = src[order], dst[order], pair_of[order]
        self.degrees = np.bincount(src, minlength=num_nodes).astype(np.int64)
        self.indptr = np.concatenate([[0], np.cumsum(self.degrees)]).astype(np.int64)
        self.indices = dst
        self.entry_pair = pair_of
        # Entry indices of the two directions of each pair (stable sort keeps
        # first-occurrence order within each pair).
        self.pair_entries = (
            np.argsort(pair_of, kind="stable").reshape(m, 2)
            if m
            else np.empty((0, 2), dtype=np.int64)
        )
        for arr in (self.pairs, self.indptr, self.indices, self.degrees,
                    self.entry_pair, self.pair_entries):
            arr.setflags(write=False)

    @property
    def num_edges(self) -> int:
        """Number of undirected edges (stored directed entries are twice this)."""
        return len(self.pairs)

    @property
    def num_entries(self) -> int:
        return 2 * len(self.pairs)

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        return bool(np.any(self.neighbors(u) == v))

    def pair_keys(self) -> np.ndarray:
        """Canonical integer key u * num_nodes + v per pair, for set membership."""
        return self.pairs[:, 0] * np.int64(self.num_nodes) + self.pairs[:, 1]

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        if len(self.pairs):
            a[self.pairs[:, 0], self.pairs[:, 1]] = 1.0
            a[self.pairs[:, 1], self.pairs[:, 0]] = 1.0
        return a

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.pairs.shape == other.pairs.shape
            and bool(np.all(self.pairs == other.pairs))
        )

    def __hash__(self):
        return hash((self.num_nodes, self.pairs.tobytes()))

    def __repr__(self):
        return f"Graph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


@dataclass(frozen=True)
class LabelsAndSplits:
    """Per-node class ids plus disjoint boolean train/val/test masks."""

    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        for name in ("train_mask", "val_mask", "test_mask"):
            mask = getattr(self, name)
            if mask.shape != (n,):
                raise ValueError(f"{name} has shape {mask.shape}, expected ({n},)")
        overlap = (
            (self.train_mask & self.val_mask)
            | (self.train_mask & self.test_mask)
            | (self.val_mask & self.test_mask)
        )
        if overlap.any():
            raise ValueError(f"splits overlap at nodes {np.flatnonzero(overlap)[:5]}")
        train_classes = set(np.unique(self.labels[self.train_mask]).tolist())
        all_classes = set(np.unique(self.labels).tolist())
        if self.train_mask.any() and train_classes != all_classes:
            missing = sorted(all_classes - train_classes)
            raise ValueError(f"classes {missing} absent from train split")

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    @staticmethod
    def from_index_lists(labels, train, val, test) -> "LabelsAndSplits":
        labels = np.asarray(labels, dtype=np.int64)
        n = len(labels)
        masks = []
        for name, idx in (("train", train), ("val", val), ("test", test)):
            idx = np.asarray(idx, dtype=np.int64)
            if len(idx) and (idx.min() < 0 or idx.max() >= n):
                raise ValueError(f"{name} split index out of range [0, {n})")
            mask = np.zeros(n, dtype=bool)
            mask[idx] = True
            masks.append(mask)
        return LabelsAndSplits(labels, *masks)


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Symmetric degree-normalized adjacency with self loops,
    weights ((deg_u + 1)(deg_v + 1))^{-1/2}.

    ``masked`` is inherited from the source graph so evaluation code can
    refuse a dropped topology.
    """

    matrix: sp.csr_matrix
    masked: bool = False

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]


def normalize_adjacency(g: Graph) -> NormalizedAdjacency:
    """Build the self-loop-augmented, symmetrically normalized adjacency."""
    dinv = 1.0 / np.sqrt(g.degrees + 1.0)
    rows = np.concatenate([g.pairs[:, 0], g.pairs[:, 1], np.arange(g.num_nodes)])
    cols = np.concatenate([g.pairs[:, 1], g.pairs[:, 0], np.arange(g.num_nodes)])
    data = dinv[rows] * dinv[cols]
    mat = sp.csr_matrix(
        (data, (rows, cols)), shape=(g.num_nodes, g.num_nodes), dtype=np.float64
    )
    mat.sort_indices()
    return NormalizedAdjacency(matrix=mat, masked=g.masked)


def apply_node_mask(g: Graph, keep: np.ndarray) -> Graph:
    """Drop every edge incident to a masked-off node (keep[v] = False).

    Dropped nodes stay in place as isolated vertices so node indices and
    feature rows remain aligned.
    """
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (g.num_nodes,):
        raise ValueError(f"node mask has shape {keep.shape}, expected ({g.num_nodes},)")
    survive = keep[g.pairs[:, 0]] & keep[g.pairs[:, 1]]
    return Graph(g.num_nodes, g.pairs[survive], masked=True)


def apply_edge_mask(g: Graph, keep_entries: np.ndarray) -> Graph:
    """Drop the masked-off edges (keep_entries[e] = False, per directed entry).

    The mask must be symmetric: both directions of a pair carry equal flags.
    """
    keep_entries = np.asarray(keep_entries, dtype=bool)
    if keep_entries.shape != (g.num_entries,):
        raise ValueError(
            f"edge mask has shape {keep_entries.shape}, expected ({g.num_entries},)"
        )
    fwd = keep_entries[g.pair_entries[:, 0]]
    bwd = keep_entries[g.pair_entries[:, 1]]
    if np.any(fwd != bwd):
        bad = g.pairs[fwd != bwd][0]
        raise ValueError(f"edge mask is asymmetric at edge ({bad[0]}, {bad[1]})")
    return Graph(g.num_nodes, g.pairs[fwd], masked=True)


def entry_mask_from_pair_keep(g: Graph, pair_keep: np.ndarray) -> np.ndarray:
    """Expand a per-pair keep vector to a symmetric per-entry mask."""
    pair_keep = np.asarray(pair_keep, dtype=bool)
    if pair_keep.shape != (g.num_edges,):
        raise ValueError(f"pair mask has shape {pair_keep.shape}, expected ({g.num_edges},)")
    return pair_keep[g.entry_pair]


# ---------------------------------------------------------------------------
# Dataset I/O: edges.tsv / features.csv / labels.csv / splits.json
# ---------------------------------------------------------------------------


def _read_edges(path: Path, num_nodes: int) -> np.ndarray:
    pairs = []
    seen = set()
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DatasetError(f"{path}:{lineno}: expected 'u<TAB>v', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-integer endpoint in {line!r}")
            if u == v:
                raise DatasetError(f"{path}:{lineno}: self loop ({u}, {v})")
            if not (0 <= u < v < num_nodes):
                raise DatasetError(
                    f"{path}:{lineno}: edge ({u}, {v}) violates 0 <= u < v < {num_nodes}"
                )
            if (u, v) in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate edge ({u}, {v})")
            seen.add((u, v))
            pairs.append((u, v))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def _read_features(path: Path) -> np.ndarray:
    rows = []
    width = None
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(tok) for tok in line.split(",")]
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-numeric feature value")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DatasetError(
                    f"{path}:{lineno}: expected {width} columns, got {len(row)}"
                )
            if not all(math.isfinite(x) for x in row):
                raise DatasetError(f"{path}:{lineno}: non-finite feature value")
            rows.append(row)
    if not rows:
        raise DatasetError(f"{path}: no feature rows")
    return np.asarray(rows, dtype=np.float64)


def _read_labels(path: Path, num_nodes: int) -> np.ndarray:
    labels = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-integer label {line!r}")
            if labels[-1] < 0:
                raise DatasetError(f"{path}:{lineno}: negative label {labels[-1]}")
    if len(labels) != num_nodes:
        raise DatasetError(f"{path}: {len(labels)} labels for {num_nodes} nodes")
    return np.asarray(labels, dtype=np.int64)


def load_dataset(directory) -> tuple[Graph, np.ndarray, LabelsAndSplits]:
    """Load a dataset directory (edges.tsv, features.csv, labels.csv, splits.json)."""
    directory = Path(directory)
    for fname in ("edges.tsv", "features.csv", "labels.csv", "splits.json"):
        if not (directory / fname).exists():
            raise DatasetError(f"{directory / fname}: missing file")
    features = _read_features(directory / "features.csv")
    num_nodes = len(features)
    pairs = _read_edges(directory / "edges.tsv", num_nodes)
    labels = _read_labels(directory / "labels.csv", num_nodes)
    try:
        with (directory / "splits.json").open() as fh:
            splits = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{directory / 'splits.json'}: invalid JSON ({exc})")
    for key in ("train", "val", "test"):
        if key not in splits:
            raise DatasetError(f"{directory / 'splits.json'}: missing key {key!r}")
    try:
        ls = LabelsAndSplits.from_index_lists(
            labels, splits["train"], splits["val"], splits["test"]
        )
    except ValueError as exc:
        raise DatasetError(f"{directory / 'splits.json'}: {exc}")
    return Graph(num_nodes, pairs), features, ls


def save_dataset(directory, g: Graph, features: np.ndarray, ls: LabelsAndSplits) -> None:
    """Write the dataset directory format read back by :func:`load_dataset`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "edges.tsv").open("w") as fh:
        for u, v in g.pairs:
            fh.write(f"{u}\t{v}\n")
    with (directory / "features.csv").open("w") as fh:
        for row in features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    with (directory / "labels.csv").open("w") as fh:
        for y in ls.labels:
            fh.write(f"{y}\n")
    with (directory / "splits.json").open("w") as fh:
        json.dump(
            {
                "train": np.flatnonzero(ls.train_mask).tolist(),
                "val": np.flatnonzero(ls.val_mask).tolist(),
                "test": np.flatnonzero(ls.test_mask).tolist(),
            },
            fh,
        )
        fh.write("\n")


# ---------------------------------------------------------------------------
# Edge splits for link prediction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EdgeSplits:
    """Positive/negative undirected pairs per split.

    Negatives are absent from the graph and pairwise disjoint across splits.
    The training message-passing graph must be built from ``train_pos`` only.
    """

    num_nodes: int
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    train_neg: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray

    def train_graph(self) -> Graph:
        return Graph(self.num_nodes, self.train_pos)


def sample_absent_pairs(num_nodes: int, count: int, forbidden: set, rng) -> np.ndarray:
    """Sample ``count`` distinct node pairs absent from ``forbidden`` (canonical
    u*n+v keys), uniformly at random. Aborts after a bounded number of rounds
    when the graph is too dense to supply that many negatives.
    """
    if count == 0:
        return np.empty((0, 2), dtype=np.int64)
    total = num_nodes * (num_nodes - 1) // 2
    if count > total - len(forbidden):
        raise ValueError(
            f"cannot sample {count} absent pairs: only {total - len(forbidden)} exist"
        )
    chosen: list[tuple[int, int]] = []
    taken = set(forbidden)
    rounds = 0
    while len(chosen) < count:
        rounds += 1
        if rounds > 200:
            raise ValueError(
                f"negative sampling did not converge after {rounds} rounds "
                f"({len(chosen)}/{count} found); graph too dense"
            )
        need = count - len(chosen)
        u = rng.integers(0, num_nodes, size=2 * need + 8)
        v = rng.integers(0, num_nodes, size=2 * need + 8)
        for a, b in zip(u, v):
            if a == b:
                continue
            lo, hi = (int(a), int(b)) if a < b else (int(b), int(a))
            key = lo * num_nodes + hi
            if key in taken:
                continue
            taken.add(key)
            chosen.append((lo, hi))
            if len(chosen) == count:
                break
    return np.asarray(chosen, dtype=np.int64)


def split_edges_for_linkpred(
    g: Graph,
    val_frac: float,
    test_frac: float,
    neg_ratio: float = 1.0,
    seed: int = 0,
) -> EdgeSplits:
    """Partition undirected edges into train/val/test positives and sample
    matching negatives (``neg_ratio`` per positive, disjoint from all
    positives and from each other).
    """
    if val_frac < 0 or test_frac < 0 or val_frac + test_frac >= 1:
        raise ValueError(f"need val_frac + test_frac < 1, got {val_frac} + {test_frac}")
    rng = np.random.default_rng(seed)
    m = g.num_edges
    perm = rng.permutation(m)
    n_val = int(math.floor(val_frac * m))
    n_test = int(math.floor(test_frac * m))
    val_pos = _canonical_pairs(g.pairs[perm[:n_val]]) if n_val else np.empty((0, 2), dtype=np.int64)
    test_pos = _canonical_pairs(g.pairs[perm[n_val:n_val + n_test]]) if n_test else np.empty((0, 2), dtype=np.int64)
    train_pos = _canonical_pairs(g.pairs[perm[n_val + n_test:]])

    forbidden = set((g.pairs[:, 0] * np.int64(g.num_nodes) + g.pairs[:, 1]).tolist())
    negs = []
    for pos in (train_pos, val_pos, test_pos):
        want = int(math.floor(neg_ratio * len(pos)))
        neg = sample_absent_pairs(g.num_nodes, want, forbidden, rng)
        forbidden.update((neg[:, 0] * np.int64(g.num_nodes) + neg[:, 1]).tolist())
        negs.append(neg)
    return EdgeSplits(
        num_nodes=g.num_nodes,
        train_pos=train_pos,
        val_pos=val_pos,
        test_pos=test_pos,
        train_neg=negs[0],
        val_neg=negs[1],
        test_neg=negs[2],
    )
