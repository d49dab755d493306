"""Bag-of-words logistic regression tasks grouped by time of day.

A :class:`LogisticTask` holds sparse presence features (plus a trailing bias
column), labels in {0, 1}, a component (time-of-day block) per example and,
for training rows, the cycle (day) the row belongs to.  One SGD step consumes
one minibatch, so the schedule counts minibatches.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..core import Sample, ScheduleConfig, StochasticProblem, make_rng
from ..errors import ConfigError
from .finite import ball_loss_scale, logistic_loss_and_gradient


@dataclass(frozen=True)
class SkewSpec:
    """Positive-label rate per component."""

    rates: tuple[float, ...]

    def __post_init__(self):
        if not self.rates or any(not 0 < r < 1 for r in self.rates):
            raise ValueError("rates must lie strictly between 0 and 1")

    @classmethod
    def diurnal(cls, m: int = 6, high: float = 2 / 3, low: float = 1 / 3) -> "SkewSpec":
        """``high`` at component 1 (midnight), ``low`` at component ``m/2 + 1`` (noon).

        Linear in the cyclic distance from component 1, so for ``m = 6`` the
        rates are 2/3, 5/9, 4/9, 1/3, 4/9, 5/9.
        """
        half = m / 2
        rates = []
        for i in range(m):
            dist = min(i, m - i)
            rates.append(high - (high - low) * dist / half)
        return cls(tuple(rates))

    @property
    def m(self) -> int:
        return len(self.rates)


@dataclass
class LogisticTask(StochasticProblem):
    X_train: sp.csr_matrix
    y_train: np.ndarray
    comp_train: np.ndarray
    day_train: np.ndarray
    X_test: sp.csr_matrix
    y_test: np.ndarray
    comp_test: np.ndarray
    vocabulary: list[str]
    K: int
    m: int
    minibatch_size: int = 128
    scale: float = 1.0
    X_valid: sp.csr_matrix | None = None
    y_valid: np.ndarray | None = None
    comp_valid: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.X_train.shape[1] != len(self.vocabulary) + 1:
            raise ValueError("feature columns must be the vocabulary plus one bias column")
        for comp in (self.comp_train, self.comp_test):
            if comp.size and (comp.min() < 1 or comp.max() > self.m):
                raise ValueError(f"component indices must lie in 1..{self.m}")
        self._train_rows = {i: np.flatnonzero(self.comp_train == i) for i in range(1, self.m + 1)}

    @property
    def dim(self) -> int:
        return self.X_train.shape[1]

    @property
    def num_components(self) -> int:
        return self.m

    @property
    def vocabulary_size(self) -> int:
        return len(self.vocabulary)

    # -- stochastic-problem interface ------------------------------------------------------

    def sample(self, i, rng):
        rows = self._train_rows[i]
        return Sample(rng.choice(rows, size=self.minibatch_size, replace=False), i)

    def loss_and_subgradient(self, w, z):
        rows = z.payload
        return logistic_loss_and_gradient(w, self.X_train[rows], self.y_train[rows], self.scale)

    def loss(self, w, z):
        return self.loss_and_subgradient(w, z)[0]

    def subgradient(self, w, z):
        return self.loss_and_subgradient(w, z)[1]

    def component_risk(self, w, i, budget=1000, rng=None):
        rows = self._train_rows[i]
        return logistic_loss_and_gradient(w, self.X_train[rows], self.y_train[rows], self.scale)[0]

    # -- streams ----------------------------------------------------------------------------

    def schedule(self) -> ScheduleConfig:
        """Largest uniform schedule the day/component populations support."""
        counts = [np.count_nonzero((self.day_train == k) & (self.comp_train == i))
                  for k in range(1, self.K + 1) for i in range(1, self.m + 1)]
        n = min(counts) // self.minibatch_size
        if n < 1:
            raise ConfigError("some (day, component) block holds fewer rows than one minibatch")
        return ScheduleConfig(self.K, self.m, n)

    def block_cyclic_stream(self, rng: np.random.Generator) -> list[Sample]:
        """Day ``k``, block ``i`` consumes ``n`` disjoint minibatches of that day's component-``i`` rows."""
        sched = self.schedule()
        mb = self.minibatch_size
        stream = []
        for k, i in sched.iter_blocks():
            rows = np.flatnonzero((self.day_train == k) & (self.comp_train == i))
            rows = rng.permutation(rows)[: sched.n * mb]
            stream.extend(Sample(rows[j * mb:(j + 1) * mb], i) for j in range(sched.n))
        return stream

    def iid_stream(self, cyclic: list[Sample], rng: np.random.Generator) -> list[Sample]:
        """The rows of ``cyclic`` reshuffled across blocks and re-batched.

        Sample components record the block position each minibatch occupies,
        which is how the baseline is evaluated.
        """
        sched = self.schedule()
        rows = rng.permutation(np.concatenate([z.payload for z in cyclic]))
        mb = self.minibatch_size
        return [Sample(rows[t * mb:(t + 1) * mb], (t // sched.n) % sched.m + 1) for t in range(sched.T)]

    # -- evaluation -------------------------------------------------------------------------

    def _split(self, split: str):
        if split == "test":
            return self.X_test, self.y_test, self.comp_test
        if split == "valid":
            if self.X_valid is None:
                raise ConfigError("task has no validation split")
            return self.X_valid, self.y_valid, self.comp_valid
        if split == "train":
            return self.X_train, self.y_train, self.comp_train
        raise ValueError(f"unknown split {split!r}")

    def accuracy_matrix(self, models: np.ndarray, split: str = "test") -> np.ndarray:
        """``A[r, j]``: accuracy of ``models[r]`` on component ``j+1`` of ``split``."""
        X, y, comp = self._split(split)
        correct = ((X @ np.asarray(models).T) > 0) == (y[:, None] == 1)
        out = np.empty((len(models), self.m))
        for j in range(1, self.m + 1):
            mask = comp == j
            out[:, j - 1] = correct[mask].mean(axis=0) if mask.any() else np.nan
        return out

    def normalized(self, B: float) -> "LogisticTask":
        """Copy whose loss lies in ``[0, B]`` on the ``B`` ball (and is 1-Lipschitz there)."""
        radius = float(np.sqrt(self.X_train.multiply(self.X_train).sum(axis=1).max()))
        return dataclasses.replace(self, scale=ball_loss_scale(B, radius))

    def positive_rates(self, split: str = "train") -> np.ndarray:
        _, y, comp = self._split(split)
        return np.array([y[comp == i].mean() for i in range(1, self.m + 1)])


def rows_digest(stream: list[Sample]) -> str:
    """Hash of the multiset of training rows a stream consumes."""
    rows = np.sort(np.concatenate([np.asarray(z.payload) for z in stream]))
    return hashlib.sha256(rows.astype(np.int64).tobytes()).hexdigest()


def presence_matrix(docs: list[np.ndarray], vocab_size: int, with_bias: bool = True) -> sp.csr_matrix:
    """Binary CSR matrix from per-document token-id arrays (duplicates collapse)."""
    indptr = [0]
    indices = []
    for doc in docs:
        cols = np.unique(doc)
        if with_bias:
            cols = np.append(cols, vocab_size)
        indices.append(cols)
        indptr.append(indptr[-1] + len(cols))
    indices = np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64)
    data = np.ones(len(indices))
    return sp.csr_matrix((data, indices, np.array(indptr)), shape=(len(docs), vocab_size + with_bias))


def split_days(comp: np.ndarray, K: int, m: int) -> np.ndarray:
    """Assign each component's rows, in order, to ``K`` nearly equal consecutive chunks."""
    day = np.zeros(len(comp), dtype=np.int64)
    for i in range(1, m + 1):
        rows = np.flatnonzero(comp == i)
        for k, chunk in enumerate(np.array_split(rows, K), start=1):
            day[chunk] = k
    return day


@dataclass(frozen=True)
class DiurnalSizes:
    vocab_size: int = 1024
    minibatch_size: int = 128
    batches_per_block: int = 4
    K: int = 10
    test_per_component: int = 2000
    valid_per_component: int = 1000
    words_per_example: int = 12

    @classmethod
    def preset(cls, scale: str) -> "DiurnalSizes":
        if scale == "desk":
            return cls()
        if scale == "full":
            # 24,000 rows per block per day, 160,000 test rows over six components
            return cls(batches_per_block=24_000 // 128,
                       test_per_component=160_000 // 6, valid_per_component=5_000)
        raise ConfigError(f"unknown scale {scale!r}")


def synthesize_diurnal_dataset(spec: SkewSpec, sizes: DiurnalSizes = DiurnalSizes(), seed=0,
                               global_share: float = 0.4, local_share: float = 0.15,
                               polarity: float = 0.75, sentiment_fraction: float = 0.5,
                               local_fraction: float = 0.125) -> LogisticTask:
    """Synthetic tweets whose label balance follows ``spec`` across the day.

    Each token comes from one of three pools: globally label-correlated words
    (``global_share``), a pool whose words lean positive in some components
    and negative in others (``local_share``), and neutral filler.  Within the
    two informative pools a token agrees with the label with probability
    ``polarity``.  Every (day, component) block gets exactly
    ``batches_per_block * minibatch_size`` training rows.
    """
    m = spec.m
    V = sizes.vocab_size
    if not (0 < global_share and 0 < local_share and global_share + local_share < 1):
        raise ConfigError("pool shares must be positive and sum below 1")
    rng = make_rng(seed, 7)
    n_sent = int(V * sentiment_fraction / 2)   # positive words, then as many negative words
    n_local = int(V * local_fraction)
    if n_sent < 1 or n_local < 2 or 2 * n_sent + n_local >= V:
        raise ConfigError("word-pool fractions leave an empty pool")
    pos_ids = np.arange(n_sent)
    neg_ids = np.arange(n_sent, 2 * n_sent)
    local_ids = np.arange(2 * n_sent, 2 * n_sent + n_local)
    neutral_ids = np.arange(2 * n_sent + n_local, V)
    local_sign = rng.choice([-1.0, 1.0], size=(m, n_local))
    vocab = ([f"pos{j:04d}" for j in range(n_sent)] + [f"neg{j:04d}" for j in range(n_sent)]
             + [f"amb{j:04d}" for j in range(n_local)] + [f"w{j:04d}" for j in range(len(neutral_ids))])

    def zipf(size):
        p = 1.0 / np.arange(1, size + 1)
        return p / p.sum()

    sent_p, local_p, neutral_p = zipf(n_sent), zipf(n_local), zipf(len(neutral_ids))

    def draw(component: int, labels: np.ndarray) -> list[np.ndarray]:
        L = sizes.words_per_example
        N = len(labels)
        source = rng.choice(3, size=(N, L), p=[global_share, local_share, 1 - global_share - local_share])
        agree = rng.random((N, L)) < polarity
        lab = (labels[:, None] == 1)
        positive_word = agree == lab
        sent_rank = rng.choice(n_sent, size=(N, L), p=sent_p)
        sent_tok = np.where(positive_word, pos_ids[sent_rank], neg_ids[sent_rank])
        signs = local_sign[component - 1]
        # split the local pool by its sign in this component, then pick within the side
        plus = local_ids[signs > 0]
        minus = local_ids[signs < 0]
        lp_plus = local_p[signs > 0] / local_p[signs > 0].sum()
        lp_minus = local_p[signs < 0] / local_p[signs < 0].sum()
        tok_plus = plus[rng.choice(len(plus), size=(N, L), p=lp_plus)]
        tok_minus = minus[rng.choice(len(minus), size=(N, L), p=lp_minus)]
        local_tok = np.where(positive_word, tok_plus, tok_minus)
        neutral_tok = neutral_ids[rng.choice(len(neutral_ids), size=(N, L), p=neutral_p)]
        tokens = np.where(source == 0, sent_tok, np.where(source == 1, local_tok, neutral_tok))
        return list(tokens)

    def make_split(per_component: int):
        docs, ys, comps = [], [], []
        for i in range(1, m + 1):
            labels = (rng.random(per_component) < spec.rates[i - 1]).astype(np.int8)
            docs.extend(draw(i, labels))
            ys.append(labels)
            comps.append(np.full(per_component, i))
        return presence_matrix(docs, V), np.concatenate(ys), np.concatenate(comps)

    per_block = sizes.batches_per_block * sizes.minibatch_size
    docs, ys, comps, days = [], [], [], []
    for k in range(1, sizes.K + 1):
        for i in range(1, m + 1):
            labels = (rng.random(per_block) < spec.rates[i - 1]).astype(np.int8)
            docs.extend(draw(i, labels))
            ys.append(labels)
            comps.append(np.full(per_block, i))
            days.append(np.full(per_block, k))
    X_train = presence_matrix(docs, V)
    X_test, y_test, c_test = make_split(sizes.test_per_component)
    X_valid, y_valid, c_valid = make_split(sizes.valid_per_component)
    return LogisticTask(X_train, np.concatenate(ys), np.concatenate(comps), np.concatenate(days),
                        X_test, y_test, c_test, vocab, sizes.K, m, sizes.minibatch_size,
                        X_valid=X_valid, y_valid=y_valid, comp_valid=c_valid,
                        info={"source": "synthetic", "rates": list(spec.rates), "seed": seed})
