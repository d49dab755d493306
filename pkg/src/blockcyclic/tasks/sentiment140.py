"""Sentiment140 CSV ingestion and the canonical dataset dump.

Input rows are six quoted fields: polarity, id, date, query, user, text.
Polarity 0 is negative and 4 positive.  The component is the 4-hour block of
the clock time in the date field, taken as written (no time-zone conversion),
so 00:00-03:59 is component 1 and 12:00-15:59 is component 4.
"""

from __future__ import annotations

import csv
import json
import re
from collections import Counter
from pathlib import Path

import numpy as np

from ..core import make_rng
from ..errors import IngestionError
from .text import LogisticTask, SkewSpec, presence_matrix, split_days

_TOKEN = re.compile(r"[a-z0-9]+")
_CLOCK = re.compile(r"\b(\d{1,2}):(\d{2}):(\d{2})\b")
MAX_SKIP_RATE = 0.01


def tokenize(text: str) -> list[str]:
    """Lowercase, split on anything that is not a letter or digit."""
    return _TOKEN.findall(text.lower())


def component_of_date(date: str, m: int = 6) -> int | None:
    """1-based time-of-day block for a date string, or None if no clock time parses."""
    match = _CLOCK.search(date)
    if match is None:
        return None
    hour, minute, second = (int(g) for g in match.groups())
    if hour > 23 or minute > 59 or second > 60:
        return None
    return hour * m // 24 + 1


def read_sentiment140(path, m: int = 6):
    """Parse the CSV into ``(labels, components, texts, skipped)``."""
    labels, comps, texts = [], [], []
    skipped = total = 0
    try:
        handle = open(path, newline="", encoding="latin-1")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc}") from exc
    with handle:
        for row in csv.reader(handle):
            total += 1
            if len(row) != 6 or row[0].strip() not in ("0", "4"):
                skipped += 1
                continue
            comp = component_of_date(row[2], m)
            if comp is None:
                skipped += 1
                continue
            labels.append(1 if row[0].strip() == "4" else 0)
            comps.append(comp)
            texts.append(row[5])
    if total == 0:
        raise IngestionError(f"{path}: no rows")
    if skipped / total > MAX_SKIP_RATE:
        raise IngestionError(f"{path}: skipped {skipped} of {total} rows "
                             f"({skipped / total:.2%} > {MAX_SKIP_RATE:.0%})")
    return np.array(labels, dtype=np.int8), np.array(comps, dtype=np.int64), texts, skipped


def build_vocabulary(token_lists, size: int) -> list[str]:
    """Most frequent ``size`` tokens; ties broken alphabetically."""
    counts = Counter()
    for toks in token_lists:
        counts.update(toks)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [tok for tok, _ in ranked[:size]]


def reskew(labels: np.ndarray, comps: np.ndarray, spec: SkewSpec, rng: np.random.Generator) -> np.ndarray:
    """Indices kept after dropping examples so component ``i`` has positive rate ``spec.rates[i-1]``.

    Only the over-represented label is dropped, keeping as many rows as possible.
    """
    keep = []
    for i in range(1, spec.m + 1):
        rows = np.flatnonzero(comps == i)
        pos = rows[labels[rows] == 1]
        neg = rows[labels[rows] == 0]
        r = spec.rates[i - 1]
        if len(pos) == 0 or len(neg) == 0:
            raise IngestionError(f"component {i} lacks one of the labels; cannot re-skew")
        if len(pos) / (len(pos) + len(neg)) > r:
            pos = rng.choice(pos, size=int(round(len(neg) * r / (1 - r))), replace=False)
        else:
            neg = rng.choice(neg, size=int(round(len(pos) * (1 - r) / r)), replace=False)
        keep.append(pos)
        keep.append(neg)
    return np.sort(np.concatenate(keep))


def ingest_sentiment140(path, spec: SkewSpec | None = None, split_seed: int = 0, K: int = 10,
                        vocab_size: int = 1024, minibatch_size: int = 128, m: int = 6,
                        test_fraction: float = 0.1) -> LogisticTask:
    """Shuffle, split 90/10, build the top-``vocab_size`` vocabulary on train, re-skew, split train into days."""
    labels, comps, texts, skipped = read_sentiment140(path, m)
    if spec is not None and spec.m != m:
        raise IngestionError(f"skew spec has {spec.m} components, expected {m}")
    rng = make_rng(split_seed, 3)
    order = rng.permutation(len(labels))
    n_test = int(round(len(order) * test_fraction))
    test_idx, train_idx = np.sort(order[:n_test]), order[n_test:]
    tokens = [tokenize(t) for t in texts]
    vocab = build_vocabulary((tokens[i] for i in train_idx), vocab_size)
    index = {tok: j for j, tok in enumerate(vocab)}

    def encode(rows):
        return presence_matrix([np.array([index[t] for t in tokens[r] if t in index], dtype=np.int64)
                                for r in rows], len(vocab))

    if spec is not None:
        train_idx = train_idx[reskew(labels[train_idx], comps[train_idx], spec, rng)]
        test_idx = test_idx[reskew(labels[test_idx], comps[test_idx], spec, rng)]
    days = split_days(comps[train_idx], K, m)
    info = {"source": str(path), "skipped": skipped, "split_seed": split_seed,
            "rates": None if spec is None else list(spec.rates)}
    return LogisticTask(encode(train_idx), labels[train_idx], comps[train_idx], days,
                        encode(test_idx), labels[test_idx], comps[test_idx], vocab, K, m,
                        minibatch_size, info=info)


def _dump_rows(path: Path, X, y, comp):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        bias = X.shape[1] - 1
        for r in range(X.shape[0]):
            cols = X.indices[X.indptr[r]:X.indptr[r + 1]]
            cols = np.sort(cols[cols != bias])
            fh.write(f"{comp[r]},{y[r]},{' '.join(map(str, cols))}\n")


def _load_rows(path: Path, vocab_size: int):
    docs, ys, comps = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(",")
            if len(parts) != 3:
                raise IngestionError(f"{path}:{lineno}: expected 3 comma-separated fields")
            try:
                cols = np.array([int(c) for c in parts[2].split()], dtype=np.int64)
                comps.append(int(parts[0]))
                ys.append(int(parts[1]))
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: {exc}") from exc
            if cols.size and (cols.min() < 0 or cols.max() >= vocab_size):
                raise IngestionError(f"{path}:{lineno}: feature index outside vocabulary")
            docs.append(cols)
    return presence_matrix(docs, vocab_size), np.array(ys, dtype=np.int8), np.array(comps, dtype=np.int64)


def dump_task(task: LogisticTask, directory) -> Path:
    """Write ``vocab.txt``, ``train.txt``, ``test.txt`` (one ``component,label,indices`` line per example) and ``meta.json``.

    Training rows are written day by day so :func:`load_dump` can recover the
    day split from the order.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / "vocab.txt").write_text("".join(f"{w}\n" for w in task.vocabulary), encoding="utf-8")
    order = np.lexsort((np.arange(len(task.day_train)), task.day_train))
    _dump_rows(out / "train.txt", task.X_train[order], task.y_train[order], task.comp_train[order])
    _dump_rows(out / "test.txt", task.X_test, task.y_test, task.comp_test)
    meta = {"K": task.K, "m": task.m, "minibatch_size": task.minibatch_size,
            "days": np.bincount(task.day_train[order], minlength=task.K + 1)[1:].tolist()}
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    return out


def load_dump(directory) -> LogisticTask:
    src = Path(directory)
    try:
        vocab = (src / "vocab.txt").read_text(encoding="utf-8").splitlines()
        meta = json.loads((src / "meta.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"cannot read dump in {src}: {exc}") from exc
    X, y, comp = _load_rows(src / "train.txt", len(vocab))
    X_test, y_test, c_test = _load_rows(src / "test.txt", len(vocab))
    if sum(meta["days"]) != len(y):
        raise IngestionError(f"{src}: day sizes do not add up to the training rows")
    days = np.repeat(np.arange(1, meta["K"] + 1), meta["days"])
    return LogisticTask(X, y, comp, days, X_test, y_test, c_test, vocab, meta["K"], meta["m"],
                        meta["minibatch_size"], info={"source": str(src)})
