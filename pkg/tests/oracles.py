"""Slow, loop-based reference implementations used to check the package.

Nothing here imports from audiohash; every formula is written out again from
its definition with plain floats and Python lists.
"""

import math

import mpmath
import numpy as np

mpmath.mp.dps = 50


# --------------------------------------------------------------------------
# loss


def weight(s, n_s, n_d):
    return math.log((n_s + n_d) / (n_s if s == 1 else n_d))


def pair_lp(z, s, w, alpha):
    # working precision grows with |x| (x log10 e digits), so neither the
    # 1 + e^x sum nor the s = 1 subtraction loses anything
    with mpmath.workdps(50 + int(abs(alpha * z))):
        x = mpmath.mpf(alpha) * z
        return float(mpmath.mpf(w) * (mpmath.log(1 + mpmath.exp(x)) - s * x))


def sq_dist(a, b):
    return math.fsum((float(x) - float(y)) ** 2 for x, y in zip(a, b))


def contrastive(d_tot, s, p):
    if s == 1:
        return 0.5 * d_tot
    return 0.5 * max(0.0, p - d_tot)


def sign_row(v):
    m = math.fsum(v) / len(v)
    m = min(max(m, min(v)), max(v))
    return [1.0 if x >= m else -1.0 for x in v]


def batch_loss(v, pairs, alpha=1.0, margin=1.0, lam=0.7, beta=0.3, mode="wcl"):
    """Mean over pairs. ``pairs`` is a list of ``(i, j, s, w)``."""
    v = [list(map(float, row)) for row in v]
    codes = [sign_row(row) for row in v]
    total = []
    for i, j, s, w in pairs:
        d = sq_dist(v[i], v[j])
        if mode == "tcl":
            total.append(contrastive(d, s, margin))
            continue
        z = sum(a * b for a, b in zip(codes[i], codes[j]))
        lp = pair_lp(z, s, w, alpha)
        total.append(lam * contrastive(d + lp, s, margin) + beta * lp)
    return math.fsum(total) / len(pairs)


def ste_grad(v, pairs, alpha=1.0, margin=1.0, lam=0.7, beta=0.3):
    """Gradient of the straight-through path alone (pairwise term through z).

    Relaxed inner product ``sum_k htan(u_ik) htan(u_jk)`` on centred rows,
    gated to ``|u| <= 1``, then pushed back through the centring.
    """
    v = [list(map(float, row)) for row in v]
    n, k = len(v), len(v[0])
    codes = [sign_row(row) for row in v]
    u = []
    for row in v:
        m = math.fsum(row) / k
        u.append([x - m for x in row])
    htan = [[max(-1.0, min(1.0, x)) for x in row] for row in u]
    gc = [[0.0] * k for _ in range(n)]
    for i, j, s, w in pairs:
        d = sq_dist(v[i], v[j])
        z = sum(a * b for a, b in zip(codes[i], codes[j]))
        lp = pair_lp(z, s, w, alpha)
        if s == 1:
            dl_ddtot = 0.5 * lam
        else:
            dl_ddtot = -0.5 * lam if margin - (d + lp) > 0 else 0.0
        dl_dlp = dl_ddtot + beta
        sig = 1.0 / (1.0 + math.exp(-alpha * z))
        dl_dz = dl_dlp * w * alpha * (sig - s) / len(pairs)
        for c in range(k):
            gc[i][c] += dl_dz * htan[j][c]
            gc[j][c] += dl_dz * htan[i][c]
    out = []
    for r in range(n):
        gu = [g if abs(x) <= 1.0 else 0.0 for g, x in zip(gc[r], u[r])]
        m = math.fsum(gu) / k
        out.append([g - m for g in gu])
    return np.array(out)


# --------------------------------------------------------------------------
# ranking and metrics


def mismatches(a, b):
    return sum(1 for x, y in zip(a, b) if x != y)


def rank(db_signs, q_signs, skip=()):
    """Rows ordered by (hamming distance, row), minus ``skip``."""
    d = [mismatches(row, q_signs) for row in db_signs]
    rows = [r for r in range(len(db_signs)) if r not in skip]
    rows.sort(key=lambda r: (d[r], r))
    return rows, d


def precision(flags, k):
    top = flags[:k]
    return sum(top) / len(top) if top else 0.0


def ap(flags, total_relevant, k):
    denom = min(total_relevant, k)
    if denom == 0:
        return 0.0
    hits, acc = 0, 0.0
    for i, f in enumerate(flags[:k], start=1):
        if f:
            hits += 1
            acc += hits / i
    return acc / denom


def radius_precision(db_signs, db_labels, q_signs, q_label, r, skip=()):
    inside = [row for row in range(len(db_signs)) if row not in skip and mismatches(db_signs[row], q_signs) <= r]
    if not inside:
        return 0.0
    return sum(1 for row in inside if db_labels[row] == q_label) / len(inside)


def random_map(relevant_counts, n):
    """Exact expected AP of a uniform random full ranking, by linearity.

    The relevant item at sorted position m sits at rank t with probability
    C(t-1, m-1) C(N-t, R-m) / C(N, R); its precision there is m / t.
    """
    vals = []
    for r in relevant_counts:
        if r == 0:
            vals.append(0.0)
            continue
        total = math.comb(n, r)
        e = 0.0
        for m in range(1, r + 1):
            for t in range(m, n - r + m + 1):
                e += math.comb(t - 1, m - 1) * math.comb(n - t, r - m) / total * m / t
        vals.append(e / r)
    return sum(vals) / len(vals)
