"""Dataset model and feature-file I/O for generalized category discovery.

A dataset is a bag of embedded instances carrying a split tag
(labeled / unlabeled / test) and a ground-truth category id. Category ids
observed in the labeled split are the *known* categories; everything else
is *novel*. Ground-truth labels are stored for every instance so that
pseudo-label accuracy and novel-category accuracy can be evaluated, but
training code must only read them for the labeled split (the evaluation
module is the other permitted reader).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

FILE_MAGIC = "#gcd-features"


class Split(Enum):
    LABELED = "labeled"
    UNLABELED = "unlabeled"
    TEST = "test"


class FeatureFileError(ValueError):
    """A feature file violated the format contract.

    `line_no` is the 1-based line of the offending record when known.
    """

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


@dataclass(frozen=True)
class Instance:
    id: str
    embedding: np.ndarray
    split: Split
    gt_label: int

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1:
            raise ValueError(f"instance {self.id}: embedding must be a vector")
        if not np.all(np.isfinite(emb)):
            raise ValueError(f"instance {self.id}: non-finite embedding component")
        if self.gt_label < 0:
            raise ValueError(f"instance {self.id}: negative gt_label")
        object.__setattr__(self, "embedding", emb)

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            self.id == other.id
            and self.split == other.split
            and self.gt_label == other.gt_label
            and self.embedding.shape == other.embedding.shape
            and bool(np.all(self.embedding == other.embedding))
        )


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of instances with derived category spaces.

    known_categories is always recomputed from the labeled split;
    all_categories is the union of every gt_label present.
    """

    dim: int
    instances: tuple[Instance, ...]
    known_categories: frozenset[int] = field(init=False)
    all_categories: frozenset[int] = field(init=False)

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        insts = tuple(self.instances)
        for inst in insts:
            if inst.embedding.shape[0] != self.dim:
                raise ValueError(
                    f"instance {inst.id}: embedding length {inst.embedding.shape[0]} != dim {self.dim}"
                )
        known = frozenset(i.gt_label for i in insts if i.split is Split.LABELED)
        allcats = frozenset(i.gt_label for i in insts) | known
        object.__setattr__(self, "instances", insts)
        object.__setattr__(self, "known_categories", known)
        object.__setattr__(self, "all_categories", allcats)

    @property
    def n_known(self) -> int:
        return len(self.known_categories)

    @property
    def n_categories(self) -> int:
        return len(self.all_categories)

    def embedding_matrix(self) -> np.ndarray:
        """All embeddings stacked as an (n, dim) float64 array."""
        if not self.instances:
            return np.zeros((0, self.dim))
        return np.stack([i.embedding for i in self.instances])

    def split_indices(self, split: Split) -> np.ndarray:
        return np.array(
            [k for k, i in enumerate(self.instances) if i.split is split], dtype=int
        )

    def labels(self) -> np.ndarray:
        return np.array([i.gt_label for i in self.instances], dtype=int)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.dim == other.dim and self.instances == other.instances


@dataclass(frozen=True)
class SplitSummary:
    n_labeled: int
    n_unlabeled: int
    n_test: int
    n_total: int
    n_known: int
    n_categories: int
    n_novel: int
    labeled_ratio: float
    flags: tuple[str, ...]


def split_summary(ds: Dataset) -> SplitSummary:
    """Per-split counts plus the category-space sizes M and K.

    labeled_ratio is labeled / (labeled + unlabeled), i.e. the labeled share
    of the training pool; the test split is excluded from the denominator.
    """
    n_l = len(ds.split_indices(Split.LABELED))
    n_u = len(ds.split_indices(Split.UNLABELED))
    n_t = len(ds.split_indices(Split.TEST))
    pool = n_l + n_u
    flags = []
    if ds.n_known == 0:
        flags.append("no_labeled_instances")
    return SplitSummary(
        n_labeled=n_l,
        n_unlabeled=n_u,
        n_test=n_t,
        n_total=len(ds.instances),
        n_known=ds.n_known,
        n_categories=ds.n_categories,
        n_novel=ds.n_categories - ds.n_known,
        labeled_ratio=(n_l / pool) if pool else math.nan,
        flags=tuple(flags),
    )


_SPLIT_BY_TAG = {s.value: s for s in Split}

# 17 significant digits round-trips IEEE doubles exactly, comfortably above
# the >= 9 significant digits the format requires.
_FLOAT_FMT = "%.17e"


def load_feature_file(path: str | Path) -> Dataset:
    """Parse a TSV feature file into a Dataset.

    Format: line 1 is `#gcd-features<TAB>dim=<D>`; every following
    non-blank, non-comment line is
    `<id>\\t<split>\\t<gt_label>\\t<f_1>...\\t<f_D>`.
    Violations raise FeatureFileError with the offending line number.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or not lines[0].strip():
        raise FeatureFileError("missing header", line_no=1)
    header = lines[0].rstrip("\r")
    parts = header.split("\t")
    if len(parts) != 2 or parts[0] != FILE_MAGIC or not parts[1].startswith("dim="):
        raise FeatureFileError(
            f"malformed header {header!r}, expected '{FILE_MAGIC}\\tdim=<D>'", line_no=1
        )
    try:
        dim = int(parts[1][4:])
    except ValueError:
        raise FeatureFileError(f"malformed dimension in header {header!r}", line_no=1)
    if dim <= 0:
        raise FeatureFileError("dimension must be positive", line_no=1)

    instances = []
    for line_no, raw in enumerate(lines[1:], start=2):
        line = raw.rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != dim + 3:
            raise FeatureFileError(
                f"expected {dim + 3} fields (id, split, label, {dim} floats), got {len(fields)}",
                line_no=line_no,
            )
        ident, split_tag, label_s = fields[0], fields[1], fields[2]
        if split_tag not in _SPLIT_BY_TAG:
            raise FeatureFileError(f"unknown split tag {split_tag!r}", line_no=line_no)
        try:
            label = int(label_s)
        except ValueError:
            raise FeatureFileError(f"bad label {label_s!r}", line_no=line_no)
        if label < 0:
            raise FeatureFileError(f"negative label {label}", line_no=line_no)
        try:
            emb = np.array([float(v) for v in fields[3:]], dtype=np.float64)
        except ValueError:
            raise FeatureFileError("unparseable float", line_no=line_no)
        if not np.all(np.isfinite(emb)):
            raise FeatureFileError("non-finite embedding component", line_no=line_no)
        instances.append(
            Instance(id=ident, embedding=emb, split=_SPLIT_BY_TAG[split_tag], gt_label=label)
        )
    return Dataset(dim=dim, instances=tuple(instances))


def save_feature_file(ds: Dataset, path: str | Path) -> None:
    """Write `ds` so that load_feature_file reads back an equal Dataset."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{FILE_MAGIC}\tdim={ds.dim}\n")
        for inst in ds.instances:
            floats = "\t".join(_FLOAT_FMT % v for v in inst.embedding)
            fh.write(f"{inst.id}\t{inst.split.value}\t{inst.gt_label}\t{floats}\n")
