"""Dataset ingestion, validation, synthesis, and split handling.

On-disk layout of a dataset directory (all text, UTF-8, LF endings):

* ``ids.txt``        one protein id per line
* ``ppi.tsv``        N x N nonnegative interaction matrix
* ``attributes.tsv`` N x A binary attribute bag-of-words
* ``seq_embed.tsv``  N x E raw sequence-embedding matrix
* ``labels.tsv``     N x M binary label matrix
* ``terms.txt``      one term id per line
* ``splits.tsv``     id <TAB> tag, tag in {train, valid, test, pretrain-only}

Matrix files start with a ``#rows<TAB>cols`` header and hold row-major
values; floats are serialized with 17 significant digits so round-trips are
byte-stable.  Ingestion symmetrizes the interaction matrix as (X + X^T)/2
and min-max normalizes each embedding dimension into [0, 1], keeping the
normalization constants with the dataset.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

SPLIT_TAGS = ("train", "valid", "test", "pretrain-only")

MATRIX_FILES = {
    "ppi": "ppi.tsv",
    "attributes": "attributes.tsv",
    "seq_embed": "seq_embed.tsv",
    "labels": "labels.tsv",
}


class DatasetError(ValueError):
    """Structured ingestion failure; ``kind`` names the violated contract."""

    def __init__(self, kind, message):
        self.kind = kind
        super().__init__(f"{kind}: {message}")


def format_float(v):
    return np.format_float_scientific(v, precision=16, unique=False, trim="k")


def write_matrix(path, matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#{matrix.shape[0]}\t{matrix.shape[1]}\n")
        for row in matrix:
            fh.write("\t".join(format_float(v) for v in row) + "\n")


def read_matrix(path):
    if not os.path.exists(path):
        raise DatasetError("missing-file", path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise DatasetError("bad-header", f"{path}: expected '#rows<TAB>cols'")
        rows, cols = (int(v) for v in header[1:].split("\t"))
        data = np.loadtxt(fh, delimiter="\t", ndmin=2, dtype=np.float64)
    if data.size == 0:
        data = data.reshape(0, cols)
    if data.shape != (rows, cols):
        raise DatasetError("shape-mismatch",
                           f"{path}: header says {(rows, cols)}, body is {data.shape}")
    if np.isnan(data).any():
        raise DatasetError("nan-values", path)
    return data


def _read_lines(path):
    if not os.path.exists(path):
        raise DatasetError("missing-file", path)
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


@dataclass
class ProteinDataset:
    ids: list
    ppi: np.ndarray
    attributes: np.ndarray
    seq_embed: np.ndarray          # raw, as stored on disk
    labels: np.ndarray
    term_ids: list
    split: dict                    # id -> tag
    embed_min: np.ndarray = None   # per-dimension normalization constants
    embed_max: np.ndarray = None

    def __post_init__(self):
        if self.embed_min is None:
            self.embed_min = self.seq_embed.min(axis=0) if len(self.ids) else np.zeros(0)
            self.embed_max = self.seq_embed.max(axis=0) if len(self.ids) else np.zeros(0)

    @property
    def n(self):
        return len(self.ids)

    def normalized_embeddings(self):
        """Min-max normalized sequence embeddings in [0, 1]."""
        span = np.where(self.embed_max > self.embed_min,
                        self.embed_max - self.embed_min, 1.0)
        return np.clip((self.seq_embed - self.embed_min) / span, 0.0, 1.0)

    def indices(self, tag):
        return np.array([i for i, pid in enumerate(self.ids)
                         if self.split.get(pid) == tag], dtype=int)

    def features(self, idx=None):
        """Model inputs (x1, x2, x3) for the given row indices (default all):
        interaction rows, attributes, normalized embeddings."""
        if idx is None:
            idx = np.arange(self.n)
        return (self.ppi[idx], self.attributes[idx],
                self.normalized_embeddings()[idx])


def validate_dataset(ds):
    n = ds.n
    if len(set(ds.ids)) != n:
        raise DatasetError("duplicate-ids", "protein ids must be unique")
    for name in ("ppi", "attributes", "seq_embed", "labels"):
        m = getattr(ds, name)
        if m.shape[0] != n:
            raise DatasetError("row-mismatch", f"{name} has {m.shape[0]} rows for {n} ids")
    if ds.ppi.shape[1] != n:
        raise DatasetError("shape-mismatch", f"ppi must be square, got {ds.ppi.shape}")
    if np.abs(ds.ppi - ds.ppi.T).max() > 1e-9:
        raise DatasetError("asymmetric-ppi", "ppi not symmetric after ingestion")
    if (ds.ppi < 0).any():
        raise DatasetError("negative-ppi", "ppi entries must be nonnegative")
    if not np.isin(ds.labels, (0.0, 1.0)).all():
        raise DatasetError("non-binary-labels", "labels must be 0/1")
    if ds.labels.shape[1] != len(ds.term_ids):
        raise DatasetError("shape-mismatch",
                           f"labels has {ds.labels.shape[1]} columns for "
                           f"{len(ds.term_ids)} terms")
    for pid, tag in ds.split.items():
        if tag not in SPLIT_TAGS:
            raise DatasetError("bad-split-tag", f"{pid}: {tag}")
        if pid not in ds.ids:
            raise DatasetError("unknown-id", f"splits.tsv names unknown protein {pid}")
    for pid in ds.ids:
        if pid not in ds.split:
            raise DatasetError("missing-split", f"protein {pid} has no split tag")
    labeled = {pid for pid, tag in ds.split.items() if tag in ("train", "valid", "test")}
    for i, pid in enumerate(ds.ids):
        if pid in labeled and np.isnan(ds.labels[i]).any():
            raise DatasetError("missing-labels", f"protein {pid} lacks a label row")
    return ds


def load_dataset(directory):
    """Load, align, and validate a dataset directory."""
    ids = _read_lines(os.path.join(directory, "ids.txt"))
    terms = _read_lines(os.path.join(directory, "terms.txt"))
    matrices = {k: read_matrix(os.path.join(directory, fn))
                for k, fn in MATRIX_FILES.items()}
    split = {}
    for line in _read_lines(os.path.join(directory, "splits.tsv")):
        pid, tag = line.split("\t")
        split[pid] = tag
    ppi = (matrices["ppi"] + matrices["ppi"].T) / 2.0
    ds = ProteinDataset(ids=ids, ppi=ppi, attributes=matrices["attributes"],
                        seq_embed=matrices["seq_embed"], labels=matrices["labels"],
                        term_ids=terms, split=split)
    return validate_dataset(ds)


def save_dataset(ds, directory, force=False):
    os.makedirs(directory, exist_ok=True)
    existing = [f for f in os.listdir(directory) if not f.startswith(".")]
    if existing and not force:
        raise DatasetError("output-exists",
                           f"{directory} is not empty (pass force to overwrite)")
    def write_lines(name, lines):
        with open(os.path.join(directory, name), "w", encoding="utf-8",
                  newline="\n") as fh:
            for line in lines:
                fh.write(line + "\n")
    write_lines("ids.txt", ds.ids)
    write_lines("terms.txt", ds.term_ids)
    write_lines("splits.tsv", [f"{pid}\t{ds.split[pid]}" for pid in ds.ids])
    for key, fn in MATRIX_FILES.items():
        write_matrix(os.path.join(directory, fn), getattr(ds, key))


@dataclass
class SynthSpec:
    n_proteins: int = 64
    n_terms: int = 8
    n_clusters: int = 8
    n_attributes: int = 24
    embed_width: int = 32
    noise: float = 0.3
    seed: int = 0

    def validate(self):
        if self.n_clusters > self.n_proteins:
            raise DatasetError("bad-spec", "n_clusters must be <= n_proteins")
        if not 0.0 <= self.noise < 1.0:
            raise DatasetError("bad-spec", f"noise must be in [0, 1), got {self.noise}")
        return self


def synth_dataset(spec: SynthSpec):
    """Deterministic synthetic dataset with cluster-structured features.

    Proteins in a cluster share a label set, a dense interaction block,
    a common attribute pattern, and nearby embeddings; the noise level
    perturbs each of these.  At noise 0, within-cluster rows are identical.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, eps = spec.n_proteins, spec.noise
    assign = np.arange(n) % spec.n_clusters
    ids = [f"P{i:04d}" for i in range(n)]
    terms = [f"GO:{m:07d}" for m in range(spec.n_terms)]

    # distinct nonempty label sets per cluster; every term positive somewhere
    label_sets = np.zeros((spec.n_clusters, spec.n_terms))
    used = set()
    for g in range(spec.n_clusters):
        while True:
            row = (rng.random(spec.n_terms) < 0.4).astype(float)
            if g < spec.n_terms:
                row[g % spec.n_terms] = 1.0
            if row.sum() and tuple(row) not in used:
                used.add(tuple(row))
                break
        label_sets[g] = row
    labels = label_sets[assign]

    same = (assign[:, None] == assign[None, :]).astype(float)
    sym_noise = rng.random((n, n))
    sym_noise = (sym_noise + sym_noise.T) / 2.0
    ppi = np.clip(same * (1.0 - eps) + eps * sym_noise, 0.0, 1.0)
    ppi = (ppi + ppi.T) / 2.0

    patterns = (rng.random((spec.n_clusters, spec.n_attributes)) < 0.3).astype(float)
    attributes = patterns[assign]
    flips = rng.random(attributes.shape) < eps * 0.3
    attributes = np.abs(attributes - flips.astype(float))

    # wide center separation keeps normalized values near 0/1, so the
    # soft-target reconstruction objective has room below its entropy floor
    centers = 3.0 * rng.standard_normal((spec.n_clusters, spec.embed_width))
    seq_embed = centers[assign] + eps * rng.standard_normal((n, spec.embed_width))

    split = {pid: "train" for pid in ids}
    ds = ProteinDataset(ids=ids, ppi=ppi, attributes=attributes,
                        seq_embed=seq_embed, labels=labels, term_ids=terms,
                        split=split)
    return validate_dataset(ds)


def split_dataset(ds, fractions=(0.8, 0.1, 0.1), seed=0):
    """Assign train/valid/test tags by seeded shuffle.

    Counts are floor(fraction * N) for train and valid with the remainder
    going to test.  Terms with no positive train protein are reported.
    Returns (dataset, train_absent_terms).
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DatasetError("bad-fractions", f"fractions must sum to 1, got {fractions}")
    n = ds.n
    n_train = int(np.floor(fractions[0] * n))
    n_valid = int(np.floor(fractions[1] * n))
    n_test = n - n_train - n_valid
    for name, frac, count in (("train", fractions[0], n_train),
                              ("valid", fractions[1], n_valid),
                              ("test", fractions[2], n_test)):
        if frac > 0 and count == 0:
            raise DatasetError("empty-split", f"{name} split is empty")
    order = np.random.default_rng(seed).permutation(n)
    tags = ["train"] * n_train + ["valid"] * n_valid + ["test"] * n_test
    for pos, idx in enumerate(order):
        ds.split[ds.ids[idx]] = tags[pos]
    train_idx = ds.indices("train")
    absent = [ds.term_ids[m] for m in range(len(ds.term_ids))
              if ds.labels[train_idx, m].sum() == 0]
    return ds, absent
