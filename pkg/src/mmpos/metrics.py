"""Set distances between point clouds and Monte-Carlo sweep summaries."""

from __future__ import annotations

import csv
import io
from collections import OrderedDict

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

CSV_HEADER = ("param", "mean_hausdorff", "std_hausdorff", "mean_directed", "std_directed")


class MetricsError(ValueError):
    pass


def _as_set(P) -> NDArray[np.float64]:
    P = np.asarray(P, dtype=float)
    if P.size == 0:
        raise MetricsError("point set is empty")
    return P.reshape(-1, P.shape[-1])


def _dist(a, B):
    return np.sqrt(np.sum((B - a) ** 2, axis=-1))


def directed_hausdorff_brute(A, B) -> float:
    """max over a of min over b of |a - b|, by full pair enumeration."""
    A, B = _as_set(A), _as_set(B)
    return float(max(np.min(_dist(a, B)) for a in A))


def directed_hausdorff(A, B) -> float:
    """h(A, B) = max_a min_b |a - b|.

    A k-d tree proposes the nearest neighbour; every point of B that ties with
    it (within a relative 1e-9) is then re-scored with the same arithmetic as
    the brute-force version, so the two agree bit for bit.
    """
    A, B = _as_set(A), _as_set(B)
    tree = cKDTree(B)
    d_tree, _ = tree.query(A, k=1)
    best = 0.0
    # process outer points from the farthest down; stop once no candidate can win
    for i in np.argsort(-d_tree, kind="stable"):
        if d_tree[i] * (1 + 1e-9) + 1e-300 < best:
            break
        cand = tree.query_ball_point(A[i], d_tree[i] * (1 + 1e-9) + 1e-300)
        d = float(np.min(_dist(A[i], B[cand])))
        best = max(best, d)
    return best


def hausdorff(A, B) -> float:
    """Symmetric Hausdorff distance max(h(A, B), h(B, A))."""
    return max(directed_hausdorff(A, B), directed_hausdorff(B, A))


def sweep_stats(runs) -> list[tuple]:
    """Per-parameter mean and sample std of (hausdorff, directed) over seeds.

    ``runs`` is an iterable of ``(param, hausdorff, directed)``.  Groups keep
    first-seen order.  A single run has std 0.
    """
    groups: OrderedDict = OrderedDict()
    for p, h, d in runs:
        groups.setdefault(p, []).append((float(h), float(d)))
    rows = []
    for p, vals in groups.items():
        v = np.array(vals)
        ddof = 1 if len(v) > 1 else 0
        rows.append((p, v[:, 0].mean(), v[:, 0].std(ddof=ddof), v[:, 1].mean(), v[:, 1].std(ddof=ddof)))
    return rows


def stats_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for p, mh, sh, md, sd in rows:
        w.writerow([p, f"{mh:.9g}", f"{sh:.9g}", f"{md:.9g}", f"{sd:.9g}"])
    return buf.getvalue()
