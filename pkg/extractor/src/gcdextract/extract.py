"""Corpus-to-feature-file extraction with known/novel split sampling.

Reads a labeled text corpus (one `<text>\\t<label>` pair per line), encodes
each text with a sentence encoder, samples the category and instance splits,
and writes the result in the feature-file format consumed by the category
discovery pipeline:

    #gcd-features<TAB>dim=<D>
    <id><TAB><labeled|unlabeled|test><TAB><gt_label><TAB><f_1>...<f_D>

Split protocol: a seeded choice of round-half-up(novel_fraction * K)
categories becomes novel (never labeled); among the remaining known-category
instances a global sample of round(labeled_fraction * count) rows is marked
labeled, adjusted so every known category keeps at least one labeled row.
Rows are emitted in corpus order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import make_encoder

FILE_MAGIC = "#gcd-features"
_FLOAT_FMT = "%.17e"


class CorpusError(ValueError):
    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


@dataclass(frozen=True)
class ExtractionConfig:
    corpus: str | Path
    out: str | Path
    encoder: str = "hash"
    novel_fraction: float = 0.25
    labeled_fraction: float = 0.10
    test_fraction: float = 0.0
    seed: int = 0
    pooling: str = "mean"

    def __post_init__(self):
        if not 0.0 <= self.novel_fraction <= 1.0:
            raise ValueError("novel_fraction must be in [0, 1]")
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ValueError("labeled_fraction must be in (0, 1]")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in [0, 1)")


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def read_corpus(path: str | Path) -> tuple[list[str], list[str]]:
    """Parse `<text>\\t<label>` lines; blank lines and '#' comments skipped."""
    texts, labels = [], []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusError(
                    f"expected '<text>\\t<label>', got {len(parts)} fields", line_no
                )
            text, label = parts
            if not text.strip() or not label.strip():
                raise CorpusError("empty text or label", line_no)
            texts.append(text)
            labels.append(label.strip())
    if not texts:
        raise CorpusError("corpus has no usable rows")
    return texts, labels


def plan_splits(
    labels: list[str], cfg: ExtractionConfig, rng: np.random.Generator
) -> tuple[list[str], dict[str, int], list[str]]:
    """Assign each row a split tag; returns (tags, label->id map, novel labels)."""
    categories = sorted(set(labels))
    if len(categories) < 2:
        raise CorpusError("need at least two categories")
    label_ids = {lab: i for i, lab in enumerate(categories)}

    n_novel = round_half_up(cfg.novel_fraction * len(categories))
    if n_novel >= len(categories):
        raise CorpusError("novel_fraction leaves no known categories")
    novel = set(rng.choice(categories, size=n_novel, replace=False).tolist())

    tags = ["unlabeled"] * len(labels)
    by_cat: dict[str, list[int]] = {c: [] for c in categories}
    for i, lab in enumerate(labels):
        by_cat[lab].append(i)

    # per-category held-out test rows (novel categories included)
    if cfg.test_fraction > 0:
        for cat, rows in by_cat.items():
            n_test = round_half_up(cfg.test_fraction * len(rows))
            for i in rng.choice(rows, size=min(n_test, len(rows) - 1), replace=False):
                tags[i] = "test"

    # one global labeled sample over known-category training rows, so the
    # realized labeled count stays within rounding of the requested fraction
    known_pool = [
        i for i, lab in enumerate(labels) if lab not in novel and tags[i] == "unlabeled"
    ]
    n_labeled = round_half_up(cfg.labeled_fraction * len(known_pool))
    n_known_cats = len(categories) - n_novel
    if n_labeled < n_known_cats:
        raise CorpusError(
            f"labeled budget {n_labeled} cannot cover {n_known_cats} known categories"
        )
    chosen = set(rng.choice(known_pool, size=n_labeled, replace=False).tolist())

    # ensure every known category keeps at least one labeled row
    labeled_per_cat = {c: 0 for c in categories if c not in novel}
    for i in chosen:
        labeled_per_cat[labels[i]] += 1
    for cat, count in sorted(labeled_per_cat.items()):
        if count:
            continue
        candidates = [i for i in by_cat[cat] if tags[i] == "unlabeled"]
        if not candidates:
            raise CorpusError(f"category {cat!r} has no available training rows")
        donor = max(labeled_per_cat, key=lambda c: (labeled_per_cat[c], c))
        give_back = max(i for i in chosen if labels[i] == donor)
        chosen.remove(give_back)
        chosen.add(candidates[0])
        labeled_per_cat[donor] -= 1
        labeled_per_cat[cat] += 1
    for i in chosen:
        tags[i] = "labeled"
    return tags, label_ids, sorted(novel)


def extract(cfg: ExtractionConfig) -> Path:
    """Encode the corpus and write the feature file; returns the output path."""
    texts, labels = read_corpus(cfg.corpus)
    rng = np.random.default_rng(cfg.seed)
    tags, label_ids, novel = plan_splits(labels, cfg, rng)
    encoder = make_encoder(cfg.encoder, pooling=cfg.pooling)
    embeddings = encoder.encode(texts)
    if not np.all(np.isfinite(embeddings)):
        raise CorpusError("encoder produced non-finite embeddings")

    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as fh:
        fh.write(f"{FILE_MAGIC}\tdim={embeddings.shape[1]}\n")
        for i, (text, lab, tag) in enumerate(zip(texts, labels, tags)):
            floats = "\t".join(_FLOAT_FMT % v for v in embeddings[i])
            fh.write(f"r{i}\t{tag}\t{label_ids[lab]}\t{floats}\n")
    return out
