"""Downstream tasks on a learned embedding and the evaluation metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .numerics import SIGMOID_EPS, sigmoid_value

UNALIGNED = -1

REPORT_KEYS = (
    "user_precision", "user_recall", "user_f1",
    "claim_precision", "claim_recall", "claim_f1",
    "purity", "kendall_overall", "kendall_group_0", "kendall_group_1",
    "cosine_similarity",
)


class MetricError(ValueError):
    pass


@dataclass
class AxisSelection:
    axes: tuple
    mass: np.ndarray


@dataclass
class MetricsReport:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def to_json(self) -> str:
        ordered = {k: self.values[k] for k in REPORT_KEYS if k in self.values}
        return json.dumps(ordered, indent=2) + "\n"

    def to_text(self) -> str:
        return "".join(f"{k}={self.values[k]:.6f}\n" for k in REPORT_KEYS if k in self.values)


def select_axes(z, k: int = 2) -> AxisSelection:
    """The k columns with the largest sums; ties go to the lower index."""
    z = np.asarray(z, dtype=np.float64)
    if not 1 <= k <= z.shape[1]:
        raise ValueError(f"k must be in [1, {z.shape[1]}]")
    mass = z.sum(axis=0)
    order = sorted(range(len(mass)), key=lambda i: (-mass[i], i))
    return AxisSelection(axes=tuple(order[:k]), mass=mass)


def classify(z, selection: AxisSelection) -> np.ndarray:
    """Position (within ``selection.axes``) of each row's largest coordinate.

    Rows whose selected coordinates are all exactly zero get UNALIGNED.
    """
    sub = np.asarray(z, dtype=np.float64)[:, list(selection.axes)]
    pred = np.argmax(sub, axis=1)  # first maximum wins ties
    pred[np.all(sub == 0.0, axis=1)] = UNALIGNED
    return pred


def stance_score(z_user, z_claim) -> float:
    """Decoder probability for one pair; bitwise equal to decode_all's entry."""
    u = np.asarray(z_user, dtype=np.float64).reshape(-1)
    c = np.asarray(z_claim, dtype=np.float64).reshape(-1)
    if u.shape != c.shape:
        raise ValueError("user and claim vectors differ in length")
    x = 0.0
    for a, b in zip(u, c):
        x += a * b
    p = sigmoid_value(x)
    return float(np.clip(p, SIGMOID_EPS, 1.0 - SIGMOID_EPS))


def rank_axis(z, axis: int, nodes=None) -> list:
    """Node indices sorted by descending coordinate on ``axis``, stable on index."""
    z = np.asarray(z, dtype=np.float64)
    if not 0 <= axis < z.shape[1]:
        raise ValueError(f"axis {axis} out of range")
    idx = np.arange(z.shape[0]) if nodes is None else np.asarray(list(nodes), dtype=np.int64)
    return sorted(idx.tolist(), key=lambda i: (-z[i, axis], i))


def _prf(pred, truth, positive):
    tp = np.sum((pred == positive) & (truth == positive))
    fp = np.sum((pred == positive) & (truth != positive))
    fn = np.sum((pred != positive) & (truth == positive))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return float(precision), float(recall), float(f1)


def best_mapping(pred, truth, n_classes=2, positive=1):
    """Cluster→class mapping maximizing positive-class F1 (first wins ties).

    Returns (mapping, (precision, recall, f1)); UNALIGNED never maps to a class.
    """
    from itertools import permutations

    pred = np.asarray(pred)
    truth = np.asarray(truth)
    best = None
    for perm in permutations(range(n_classes)):
        mapped = np.array([perm[p] if p != UNALIGNED else UNALIGNED for p in pred])
        scores = _prf(mapped, truth, positive)
        if best is None or scores[2] > best[1][2]:
            best = (perm, scores)
    return best


def prf1(pred, truth, n_classes=2, positive=1):
    """Precision, recall and F1 of the positive class under the best mapping.

    ``pred`` and ``truth`` are aligned arrays over labelled nodes only.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if len(truth) == 0:
        raise MetricError("no labelled nodes")
    return best_mapping(pred, truth, n_classes, positive)[1]


def purity(pred, truth) -> float:
    """(1/N) Σ_clusters max_class |cluster ∩ class|; UNALIGNED nodes score zero."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if len(pred) == 0 or len(pred) != len(truth):
        raise MetricError("purity needs equal-length, non-empty inputs")
    total = 0
    for cluster in np.unique(pred):
        if cluster == UNALIGNED:
            continue
        members = truth[pred == cluster]
        total += np.bincount(members).max()
    return total / len(pred)


def kendall(x, y) -> float:
    """Kendall tau-b."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y) or len(x) < 2:
        raise MetricError("kendall needs two equal-length sequences of length >= 2")
    iu = np.triu_indices(len(x), k=1)
    dx = np.sign(x[:, None] - x[None, :])[iu]
    dy = np.sign(y[:, None] - y[None, :])[iu]
    s = np.sum(dx * dy)
    n_x = np.sum(dx != 0)
    n_y = np.sum(dy != 0)
    if n_x == 0 or n_y == 0:
        return float("nan")
    return float(s / np.sqrt(float(n_x) * float(n_y)))


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(np.dot(a, b) / denom)


def signed_polarity(z, selection: AxisSelection, positive_axis: int = 1) -> np.ndarray:
    """z[:, a+] - z[:, a-] where a+ is ``selection.axes[positive_axis]``."""
    if len(selection.axes) != 2:
        raise ValueError("signed polarity needs exactly two selected axes")
    z = np.asarray(z, dtype=np.float64)
    a_pos = selection.axes[positive_axis]
    a_neg = selection.axes[1 - positive_axis]
    return z[:, a_pos] - z[:, a_neg]


def evaluate(z, bhin, labels: dict, k_axes=2, ideology=None) -> tuple:
    """Full metric suite over labelled nodes.

    ``labels`` maps node index -> class (0/1). ``ideology`` optionally maps
    user node index -> ground-truth value. Returns (MetricsReport, details).
    """
    z = np.asarray(z, dtype=np.float64)
    selection = select_axes(z, k_axes)
    pred = classify(z, selection)
    n_classes = max(labels.values()) + 1 if labels else 0
    values = {}
    mappings = {}
    for kind, lo, hi in (("user", 0, bhin.n_users), ("claim", bhin.n_users, bhin.n_nodes)):
        idx = [i for i in range(lo, hi) if i in labels]
        if not idx:
            continue
        mapping, (p, r, f) = best_mapping(pred[idx], np.array([labels[i] for i in idx]),
                                          max(n_classes, len(selection.axes)))
        mappings[kind] = mapping
        values[f"{kind}_precision"], values[f"{kind}_recall"], values[f"{kind}_f1"] = p, r, f
    if not mappings:
        raise MetricError("no labelled nodes")
    idx = sorted(labels)
    values["purity"] = float(purity(pred[idx], np.array([labels[i] for i in idx])))

    if ideology and len(selection.axes) == 2:
        mapping = mappings.get("user", next(iter(mappings.values())))
        # the axis mapped to class 1 carries the positive sign
        positive_axis = mapping.index(1) if 1 in mapping else 1
        pol = signed_polarity(z, selection, positive_axis)
        members = [i for i in sorted(ideology) if i < len(pol)]
        vals = np.array([ideology[i] for i in members])
        pvals = pol[members]
        values["kendall_overall"] = kendall(pvals, vals)
        for g in (0, 1):
            sel = [j for j, i in enumerate(members) if labels.get(i) == g]
            if len(sel) >= 2:
                values[f"kendall_group_{g}"] = kendall(pvals[sel], vals[sel])
        values["cosine_similarity"] = cosine_similarity(pvals, vals)
    details = {"selection": selection, "pred": pred, "mappings": mappings}
    return MetricsReport(values), details
