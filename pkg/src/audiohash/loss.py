"""Imbalance-weighted pairwise likelihood loss and weighted contrastive loss.

For a pair ``(i, j)`` with similarity ``s`` and weight ``w``:

    l_p   = w * (softplus(alpha * z) - alpha * s * z),  z = <c_i, c_j>
    D_tot = ||v_i - v_j||^2 + l_p
    C     = 0.5 * s * D_tot + 0.5 * (1 - s) * max(0, p - D_tot)

and the batch objective is ``mean(lambda * C + beta * l_p)``. ``z`` is the
exact integer inner product of the binary codes in the forward pass; the
backward pass differentiates the relaxed product
``sum(Htan(u_i) * Htan(u_j))`` of the mean-centred activations ``u``.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .codec import balanced_sign_array, center, hard_tanh, ste_gate

LOSS_MODES = ("wcl", "tcl")


class DegenerateBalanceError(ValueError):
    """Pair weights are undefined because one of the pair counts is zero."""


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    margin: float = 1.0
    lam: float = 0.7
    beta: float = 0.3
    mode: str = "wcl"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.margin > 0:
            raise ValueError(f"margin must be > 0, got {self.margin}")
        if self.lam < 0 or self.beta < 0:
            raise ValueError("lambda and beta must be non-negative")
        if self.mode not in LOSS_MODES:
            raise ValueError(f"loss mode must be one of {LOSS_MODES}, got {self.mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PairBatch:
    """Pairs over the rows of one mini-batch. Arrays share length P."""

    i: np.ndarray
    j: np.ndarray
    s: np.ndarray
    w: np.ndarray

    def __len__(self):
        return int(self.i.shape[0])


@dataclass
class PairTerms:
    d_euc: np.ndarray
    z: np.ndarray
    l_p: np.ndarray
    c_loss: np.ndarray


def pair_weight(s, n_similar: int, n_dissimilar: int):
    """``ln((N_s + N_d) / (s * N_s + (1 - s) * N_d))``; vectorizes over ``s``."""
    if n_similar <= 0 or n_dissimilar <= 0:
        raise DegenerateBalanceError(
            f"pair weights need both similar and dissimilar pairs (got {n_similar}, {n_dissimilar})"
        )
    s = np.asarray(s, dtype=np.float64)
    w = np.log((n_similar + n_dissimilar) / (s * n_similar + (1.0 - s) * n_dissimilar))
    return float(w) if w.ndim == 0 else w


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def pairwise_term(z, s, w, alpha: float = 1.0):
    """``w * (softplus(alpha*z) - alpha*s*z)``.

    For binary ``s`` this equals ``w * softplus((1 - 2s) * alpha * z)``, which
    avoids cancellation when ``s = 1`` and ``z`` is large.
    """
    x = alpha * np.asarray(z, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    binary = (s == 0) | (s == 1)
    out = np.asarray(w, dtype=np.float64) * np.where(binary, softplus((1.0 - 2.0 * s) * x), softplus(x) - s * x)
    return float(out) if out.ndim == 0 else out


def euclidean_sq(v_i, v_j) -> float:
    a = np.asarray(v_i, dtype=np.float64)
    b = np.asarray(v_j, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2))


def contrastive_term(d_euc, l_p, s, margin: float = 1.0):
    d_tot = np.asarray(d_euc, dtype=np.float64) + np.asarray(l_p, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    out = 0.5 * s * d_tot + 0.5 * (1.0 - s) * np.maximum(0.0, margin - d_tot)
    return float(out) if out.ndim == 0 else out


def total_loss(v: np.ndarray, pairs: PairBatch, cfg: LossConfig, codes: np.ndarray | None = None, straight_through: bool = True):
    """Batch loss and its gradient with respect to the activations ``v``.

    Returns ``(loss, grad_v, terms)`` where ``grad_v`` has the shape of ``v``.
    ``codes`` defaults to the balanced sign of ``v``. With
    ``straight_through=False`` the codes are treated as constants and only the
    Euclidean path carries gradient.
    """
    if len(pairs) == 0:
        raise ValueError("empty pair batch")
    v = np.asarray(v, dtype=np.float64)
    n_pairs = len(pairs)
    i, j = pairs.i, pairs.j
    s = pairs.s.astype(np.float64)
    diff = v[i] - v[j]
    d_euc = np.einsum("pk,pk->p", diff, diff)
    grad = np.zeros_like(v)

    if cfg.mode == "tcl":
        active = (s == 0) & (cfg.margin - d_euc > 0)
        c_loss = contrastive_term(d_euc, 0.0, s, cfg.margin)
        loss = float(np.sum(c_loss) / n_pairs)
        g_d = (0.5 * s - 0.5 * active) / n_pairs
        g_pair = 2.0 * g_d[:, None] * diff
        np.add.at(grad, i, g_pair)
        np.add.at(grad, j, -g_pair)
        terms = PairTerms(d_euc, np.zeros(n_pairs), np.zeros(n_pairs), np.atleast_1d(c_loss))
        return loss, grad, terms

    if codes is None:
        codes = balanced_sign_array(v)
    codes = np.asarray(codes, dtype=np.float64)
    z = np.einsum("pk,pk->p", codes[i], codes[j])
    w = pairs.w.astype(np.float64)
    l_p = pairwise_term(z, s, w, cfg.alpha)
    d_tot = d_euc + l_p
    c_loss = contrastive_term(d_euc, l_p, s, cfg.margin)
    loss = float(np.sum(cfg.lam * c_loss + cfg.beta * l_p) / n_pairs)

    active = (s == 0) & (cfg.margin - d_tot > 0)
    g_dtot = cfg.lam * (0.5 * s - 0.5 * active) / n_pairs
    g_lp = g_dtot + cfg.beta / n_pairs
    g_z = g_lp * w * cfg.alpha * (sigmoid(cfg.alpha * z) - s)

    g_pair = 2.0 * g_dtot[:, None] * diff
    np.add.at(grad, i, g_pair)
    np.add.at(grad, j, -g_pair)
    terms = PairTerms(d_euc, z, np.atleast_1d(l_p), np.atleast_1d(c_loss))
    if not straight_through:
        return loss, grad, terms

    u = center(v)
    h = hard_tanh(u)
    grad_c = np.zeros_like(v)
    np.add.at(grad_c, i, g_z[:, None] * h[j])
    np.add.at(grad_c, j, g_z[:, None] * h[i])
    grad_u = ste_gate(grad_c, u)
    grad += grad_u - grad_u.mean(axis=-1, keepdims=True)
    return loss, grad, terms

