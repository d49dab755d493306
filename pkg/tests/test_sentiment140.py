import csv

import numpy as np
import pytest

from blockcyclic.errors import IngestionError
from blockcyclic.tasks.sentiment140 import (build_vocabulary, component_of_date, dump_task, ingest_sentiment140,
                                            load_dump, read_sentiment140, tokenize)
from blockcyclic.tasks.text import SkewSpec

WORDS = ["good", "bad", "happy", "sad", "love", "hate", "work", "lunch", "sleep", "coffee", "rain", "sun"]


def write_fixture(path, rows=2400, seed=0, bad_rows=0):
    rng = np.random.default_rng(seed)
    with open(path, "w", newline="", encoding="latin-1") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_ALL)
        for r in range(rows):
            label = int(rng.integers(0, 2))
            hour = int(rng.integers(0, 24))
            date = f"Mon Apr 06 {hour:02d}:{int(rng.integers(0, 60)):02d}:07 PDT 2009"
            lead = "good love happy" if label else "bad hate sad"
            words = " ".join(rng.choice(WORDS, size=5))
            text = f"@user {lead.split()[r % 3]}! {words} caf\xe9"
            writer.writerow([4 * label, 1000 + r, date, "NO_QUERY", f"user{r}", text])
        for _ in range(bad_rows):
            writer.writerow(["2", 1, "Mon Apr 06 10:00:00 PDT 2009", "NO_QUERY", "x", "neutral"])
    return path


def test_tokenizer():
    assert tokenize("I LOVE it!!  @bob #2day") == ["i", "love", "it", "bob", "2day"]
    assert tokenize("") == []


def test_component_from_clock_time():
    assert component_of_date("Mon Apr 06 13:05:00 PDT 2009") == 4
    assert component_of_date("Mon Apr 06 00:00:00 PDT 2009") == 1
    assert component_of_date("Mon Apr 06 03:59:59 PDT 2009") == 1
    assert component_of_date("Mon Apr 06 23:59:59 PDT 2009") == 6
    assert component_of_date("yesterday") is None
    assert component_of_date("Mon Apr 06 25:00:00 PDT 2009") is None


def test_vocabulary_ties_break_alphabetically():
    assert build_vocabulary([["b", "a", "c"], ["c"]], 2) == ["c", "a"]


def test_read_labels(tmp_path):
    path = write_fixture(tmp_path / "s.csv", rows=50)
    labels, comps, texts, skipped = read_sentiment140(path)
    assert skipped == 0 and len(labels) == 50
    raw = list(csv.reader(open(path, encoding="latin-1")))
    assert [1 if r[0] == "4" else 0 for r in raw] == labels.tolist()
    assert all(1 <= c <= 6 for c in comps)
    assert "caf\xe9" in texts[0]


def test_skip_rate_limit(tmp_path):
    ok = write_fixture(tmp_path / "ok.csv", rows=1000, bad_rows=5)
    assert read_sentiment140(ok)[3] == 5
    bad = write_fixture(tmp_path / "bad.csv", rows=1000, bad_rows=20)
    with pytest.raises(IngestionError):
        read_sentiment140(bad)
    with pytest.raises(IngestionError):
        read_sentiment140(tmp_path / "missing.csv")


def test_ingest_split_and_determinism(tmp_path):
    path = write_fixture(tmp_path / "s.csv")
    a = ingest_sentiment140(path, split_seed=3, K=4, vocab_size=10, minibatch_size=8)
    b = ingest_sentiment140(path, split_seed=3, K=4, vocab_size=10, minibatch_size=8)
    assert a.X_train.shape[0] == 2160 and a.X_test.shape[0] == 240
    assert np.array_equal(a.y_train, b.y_train) and (a.X_train != b.X_train).nnz == 0
    assert a.vocabulary == b.vocabulary and len(a.vocabulary) == 10
    assert a.X_train.indices.max() == 10  # the bias column
    assert set(np.unique(a.day_train)) == {1, 2, 3, 4}
    c = ingest_sentiment140(path, split_seed=4, K=4, vocab_size=10, minibatch_size=8)
    assert (c.X_test != a.X_test).nnz > 0 or not np.array_equal(c.y_test, a.y_test)
    sched = a.schedule()
    assert sched.K == 4 and sched.m == 6 and sched.n >= 1


def test_reskew_moves_rates_towards_spec(tmp_path):
    path = write_fixture(tmp_path / "s.csv", rows=6000)
    spec = SkewSpec.diurnal()
    task = ingest_sentiment140(path, spec, split_seed=0, K=2, vocab_size=20, minibatch_size=8)
    np.testing.assert_allclose(task.positive_rates("train"), spec.rates, atol=0.01)
    np.testing.assert_allclose(task.positive_rates("test"), spec.rates, atol=0.03)


def test_dump_round_trip(tmp_path):
    path = write_fixture(tmp_path / "s.csv", rows=600)
    task = ingest_sentiment140(path, split_seed=1, K=3, vocab_size=12, minibatch_size=4)
    out = dump_task(task, tmp_path / "dump")
    line = (out / "train.txt").read_text().splitlines()[0]
    comp, label, idx = line.split(",")
    assert 1 <= int(comp) <= 6 and label in ("0", "1")
    assert [int(x) for x in idx.split()] == sorted(int(x) for x in idx.split())
    back = load_dump(out)
    assert back.vocabulary == task.vocabulary
    order = np.lexsort((np.arange(len(task.day_train)), task.day_train))
    assert (back.X_train != task.X_train[order]).nnz == 0
    assert np.array_equal(back.day_train, task.day_train[order])
    assert np.array_equal(back.y_test, task.y_test)
    (out / "train.txt").write_text("1,1,999\n")
    with pytest.raises(IngestionError):
        load_dump(out)
