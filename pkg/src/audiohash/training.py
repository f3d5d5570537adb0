"""Labeled sets, data splits, pair construction and the training loop."""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .codec import VALID_BITS, balanced_sign_array
from .encoder import AdamState, EncoderParams, adam_step, forward, init_params, save_checkpoint, encode_batch
from .index import build_index
from .loss import LOSS_MODES, DegenerateBalanceError, LossConfig, PairBatch, pair_weight, total_loss
from .metrics import evaluate_codes

log = logging.getLogger(__name__)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# config

@dataclass
class TrainConfig:
    bits: int = 64
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    alpha: float = 1.0
    lam: float = 0.7
    beta: float = 0.3
    margin: float = 1.0
    seed: int = 0
    loss_mode: str = "wcl"
    multi_window: bool = True
    protocol: str = "standard"
    train_fraction: float = 0.75
    query_fraction: float = 0.2
    unseen_fraction: float = 0.3

    def __post_init__(self):
        if self.bits not in VALID_BITS:
            raise ConfigError(f"bits must be one of {VALID_BITS}, got {self.bits}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}")
        if self.protocol not in ("standard", "zero-shot"):
            raise ConfigError("protocol must be 'standard' or 'zero-shot'")
        for name in ("train_fraction", "query_fraction", "unseen_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        try:
            self.loss_config()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def loss_config(self) -> LossConfig:
        return LossConfig(alpha=self.alpha, margin=self.margin, lam=self.lam, beta=self.beta, mode=self.loss_mode)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def replace(self, **overrides) -> "TrainConfig":
        d = self.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        return TrainConfig.from_dict(d)


def load_config(path) -> TrainConfig:
    """Read a TOML key-value file (``bits = 64``, ``lambda = 0.7``, ...)."""
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
    return TrainConfig.from_dict(data)


# --------------------------------------------------------------------------
# labels, similarity and pairs

@dataclass
class LabeledSet:
    items: list  # FeatureTensor
    label_names: list

    def __post_init__(self):
        for t in self.items:
            if not 0 <= t.label < len(self.label_names):
                raise ValueError(f"item {t.clip_id} has label {t.label} outside [0, {len(self.label_names)})")

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.items], dtype=np.int64)

    @property
    def one_hot(self) -> np.ndarray:
        out = np.zeros((len(self.items), len(self.label_names)), dtype=np.int8)
        out[np.arange(len(self.items)), self.labels] = 1
        return out

    def subset(self, rows) -> "LabeledSet":
        return LabeledSet([self.items[int(r)] for r in rows], self.label_names)


class SimilarityOracle:
    """``s_ij = 1`` iff items i and j share a class (``S = L L^T`` for one-hot L)."""

    def __init__(self, one_hot):
        one_hot = np.asarray(one_hot)
        if one_hot.ndim != 2 or not np.all((one_hot == 0) | (one_hot == 1)) or not np.all(one_hot.sum(axis=1) == 1):
            raise ValueError("similarity needs one-hot label rows")
        self.labels = one_hot.argmax(axis=1)

    @classmethod
    def from_labels(cls, labels, n_classes=None):
        labels = np.asarray(labels, dtype=np.int64)
        d = int(labels.max()) + 1 if n_classes is None else n_classes
        oh = np.zeros((labels.size, d), dtype=np.int8)
        oh[np.arange(labels.size), labels] = 1
        return cls(oh)

    def __call__(self, i, j):
        return (self.labels[i] == self.labels[j]).astype(np.int8) if np.ndim(i) else int(self.labels[i] == self.labels[j])

    def matrix(self) -> np.ndarray:
        if self.labels.size > 10_000:
            raise MemoryError("refusing to materialize an N x N similarity matrix for N > 10^4")
        return (self.labels[:, None] == self.labels[None, :]).astype(np.int8)


def build_similarity(one_hot) -> SimilarityOracle:
    return SimilarityOracle(one_hot)


def count_pair_balance(labels):
    """``(N_similar, N_dissimilar)`` over all unordered pairs i < j."""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if n < 2:
        raise ValueError("need at least two items to count pairs")
    counts = np.bincount(labels)
    n_sim = int(np.sum(counts * (counts - 1) // 2))
    return n_sim, n * (n - 1) // 2 - n_sim


def sample_pairs(batch_rows, oracle: SimilarityOracle, n_similar: int | None = None, n_dissimilar: int | None = None) -> PairBatch:
    """All ``B(B-1)/2`` unordered pairs of one batch, in local (row-of-batch) indices.

    Weights come from the dataset-level pair counts; with no counts every weight is 1.
    """
    rows = np.asarray(batch_rows, dtype=np.int64)
    b = rows.size
    if b < 2:
        raise ValueError("a batch needs at least two items to form pairs")
    i, j = np.triu_indices(b, k=1)
    s = oracle(rows[i], rows[j])
    if n_similar is None:
        w = np.ones(i.size)
    else:
        w = pair_weight(s, n_similar, n_dissimilar)
    return PairBatch(i.astype(np.int64), j.astype(np.int64), s.astype(np.int8), np.asarray(w, dtype=np.float64))


def stratified_order(labels, rng) -> np.ndarray:
    """Epoch permutation that spreads each class evenly across the sequence."""
    labels = np.asarray(labels)
    key = np.empty(labels.size)
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        perm = rng.permutation(rows.size)
        key[rows[perm]] = (np.arange(rows.size) + rng.random(rows.size)) / rows.size
    return np.argsort(key, kind="stable")


def make_batches(order, batch_size: int):
    batches = [order[s:s + batch_size] for s in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


# --------------------------------------------------------------------------
# splits

@dataclass
class Split:
    train: np.ndarray
    database: np.ndarray
    queries: np.ndarray
    validation: np.ndarray
    seen_classes: list = field(default_factory=list)
    unseen_classes: list = field(default_factory=list)


def _per_class_take(n: int, fraction: float) -> int:
    return max(1, int(round(fraction * n)))


def split_standard(labels, train_fraction: float, seed: int, query_fraction: float = 0.2) -> Split:
    """Stratified split; queries and database share every class.

    Per class: ``round(query_fraction * n)`` queries (at least one), the rest
    is database; ``round(train_fraction * n)`` database items are used for
    training and the rest (at least one when possible) form the validation slice.
    """
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng([seed, 1])
    train, db, q, val = [], [], [], []
    classes = np.unique(labels)
    for c in classes:
        rows = np.flatnonzero(labels == c)
        rows = rows[rng.permutation(rows.size)]
        if rows.size < 2:
            raise ValueError(f"class {c} needs at least 2 items for a query/database split")
        n_q = min(_per_class_take(rows.size, query_fraction), rows.size - 1)
        q.append(rows[:n_q])
        rest = rows[n_q:]
        db.append(rest)
        n_t = min(_per_class_take(rows.size, train_fraction), max(rest.size - 1, 1))
        train.append(rest[:n_t])
        val.append(rest[n_t:])
    cat = lambda xs: np.sort(np.concatenate(xs)).astype(np.int64)  # noqa: E731
    seen = [int(c) for c in classes]
    return Split(cat(train), cat(db), cat(q), cat(val), seen, [])


def split_zero_shot(labels, unseen_fraction: float, seed: int, query_fraction: float = 0.2, train_fraction: float = 0.75) -> Split:
    """Class-level split: the model trains on seen classes only.

    Queries are drawn from the unseen classes; the database holds every seen
    item plus the unseen items that are not queries.
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if classes.size < 3:
        raise ValueError("zero-shot protocol needs at least 3 classes")
    rng = np.random.default_rng([seed, 2])
    n_unseen = min(max(1, int(round(unseen_fraction * classes.size))), classes.size - 2)
    perm = classes[rng.permutation(classes.size)]
    unseen = sorted(int(c) for c in perm[:n_unseen])
    seen = sorted(int(c) for c in perm[n_unseen:])
    train, db, q, val = [], [], [], []
    for c in classes:
        rows = np.flatnonzero(labels == c)
        rows = rows[rng.permutation(rows.size)]
        if int(c) in unseen:
            n_q = min(_per_class_take(rows.size, query_fraction), rows.size - 1)
            q.append(rows[:n_q])
            db.append(rows[n_q:])
        else:
            db.append(rows)
            n_t = min(_per_class_take(rows.size, train_fraction), max(rows.size - 1, 1))
            train.append(rows[:n_t])
            val.append(rows[n_t:])
    cat = lambda xs: np.sort(np.concatenate(xs)).astype(np.int64)  # noqa: E731
    return Split(cat(train), cat(db), cat(q), cat(val), seen, unseen)


def make_split(labels, cfg: TrainConfig) -> Split:
    if cfg.protocol == "zero-shot":
        return split_zero_shot(labels, cfg.unseen_fraction, cfg.seed, cfg.query_fraction, cfg.train_fraction)
    return split_standard(labels, cfg.train_fraction, cfg.seed, cfg.query_fraction)


# --------------------------------------------------------------------------
# training loop

@dataclass
class EpochLog:
    epoch: int
    loss: float
    map100: float


@dataclass
class TrainResult:
    params: EncoderParams
    history: list
    best_epoch: int
    pair_counts: tuple


def channel_stats(xs):
    """Per-channel mean/std over a list of ``(C, T, F)`` arrays."""
    c = xs[0].shape[0]
    flat = [np.concatenate([x[ch].ravel() for x in xs]).astype(np.float64) for ch in range(c)]
    mean = np.array([f.mean() for f in flat], dtype=np.float32)
    std = np.array([f.std() for f in flat], dtype=np.float32)
    return mean, np.where(std > 1e-8, std, 1.0).astype(np.float32)


def _batch_forward(params, xs, rows):
    groups = {}
    for pos, r in enumerate(rows):
        groups.setdefault(xs[r].shape, []).append(pos)
    if len(groups) == 1:
        return forward(params, np.stack([xs[r] for r in rows])), np.arange(len(rows))
    outs, order = [], []
    for positions in groups.values():
        outs.append(forward(params, np.stack([xs[rows[p]] for p in positions])))
        order.extend(positions)
    return ad.concat(outs), np.asarray(order)


def validation_map(params, train_set: LabeledSet, val_set: LabeledSet, k: int = 100) -> float:
    if len(val_set.items) == 0 or len(train_set.items) == 0:
        return float("nan")
    db_codes = balanced_sign_array(encode_batch(params, [t.channels for t in train_set.items]))
    q_codes = balanced_sign_array(encode_batch(params, [t.channels for t in val_set.items]))
    index = build_index(db_codes, [t.clip_id for t in train_set.items], train_set.labels, n_bits=params.hash_bits)
    report = evaluate_codes(index, q_codes, val_set.labels, [t.clip_id for t in val_set.items], (k,))
    return report.value("map", k)


def train(train_set: LabeledSet, cfg: TrainConfig, val_set: LabeledSet | None = None, checkpoint_path=None, log_path=None, progress=None) -> TrainResult:
    """Train an encoder; returns the checkpoint with the best validation mAP@100.

    The best-so-far checkpoint is rewritten after every epoch when
    ``checkpoint_path`` is given; the CSV log has columns ``epoch,loss,map100``.
    """
    labels = train_set.labels
    if np.unique(labels).size < 2:
        raise DegenerateBalanceError("training needs at least two classes")
    xs = [t.channels for t in train_set.items]
    loss_cfg = cfg.loss_config()
    n_sim, n_dis = count_pair_balance(labels)
    if cfg.loss_mode == "wcl":
        pair_weight(1, n_sim, n_dis)  # raises on degenerate balance

    params = init_params(cfg.bits, seed=cfg.seed)
    params.norm_mean, params.norm_std = channel_stats(xs)
    params.config = cfg.to_dict()
    val_set = val_set if val_set is not None else LabeledSet([], train_set.label_names)

    state = AdamState.zeros_like(params.arrays)
    oracle = SimilarityOracle.from_labels(labels, len(train_set.label_names))
    rng = np.random.default_rng([cfg.seed, 3])
    history = []
    best = params.copy()
    best_map, best_epoch = -math.inf, 0

    log_fh = open(log_path, "w", newline="") if log_path else None
    writer = csv.writer(log_fh) if log_fh else None
    if writer:
        writer.writerow(["epoch", "loss", "map100"])
    try:
        if checkpoint_path:
            save_checkpoint(best, checkpoint_path)
        for epoch in range(1, cfg.epochs + 1):
            losses = []
            for rows in make_batches(stratified_order(labels, rng), cfg.batch_size):
                if cfg.loss_mode == "wcl":
                    pairs = sample_pairs(rows, oracle, n_sim, n_dis)
                else:
                    pairs = sample_pairs(rows, oracle)
                params.zero_grad()
                v, order = _batch_forward(params, xs, rows)
                # rows of v follow `order`; remap pair endpoints accordingly
                inv = np.empty_like(order)
                inv[order] = np.arange(order.size)
                pairs = PairBatch(inv[pairs.i], inv[pairs.j], pairs.s, pairs.w)
                value, grad_v, _ = total_loss(v.data, pairs, loss_cfg)
                if not math.isfinite(value):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}")
                root = ad.custom([v], value, lambda g, grad_v=grad_v: [g * grad_v])
                root.backward()
                adam_step(params.arrays, params.grads(), state, lr=cfg.lr)
                losses.append(value)
            mean_loss = float(np.mean(losses))
            m100 = validation_map(params, train_set, val_set)
            history.append(EpochLog(epoch, mean_loss, m100))
            improved = math.isnan(m100) or m100 > best_map
            if improved:
                best = params.copy()
                best_map = -math.inf if math.isnan(m100) else m100
                best_epoch = epoch
            if writer:
                writer.writerow([epoch, f"{mean_loss:.8f}", "" if math.isnan(m100) else f"{m100:.6f}"])
                log_fh.flush()
            if checkpoint_path:
                save_checkpoint(best, checkpoint_path)
            log.info("epoch %d loss %.6f map100 %.4f", epoch, mean_loss, m100)
            if progress:
                progress(epoch, mean_loss, m100)
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(best, history, best_epoch, (n_sim, n_dis))
