"""Classification (OA/AA/Kappa) and clustering (ACC/Kappa/NMI/Purity/ARI/F) scores."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment


def _masked(pred, truth, mask):
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ in size")
    if mask is None:
        mask = truth > 0
    mask = np.asarray(mask, dtype=bool).ravel()
    return pred[mask].astype(np.int64), truth[mask].astype(np.int64)


def confusion_matrix(truth, pred, classes) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class.

    Predictions outside ``classes`` (e.g. 0 = unclassified) are dropped from
    the columns but still count towards their true row's total via
    :func:`classification_metrics`.
    """
    classes = np.asarray(classes)
    index = {int(c): i for i, c in enumerate(classes)}
    k = classes.size
    t = np.array([index.get(int(v), -1) for v in truth])
    p = np.array([index.get(int(v), -1) for v in pred])
    ok = (t >= 0) & (p >= 0)
    return np.bincount(t[ok] * k + p[ok], minlength=k * k).reshape(k, k)


def cohen_kappa(cm: np.ndarray, total=None) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    n = cm.sum() if total is None else float(total)
    if n == 0:
        return 0.0
    po = np.trace(cm) / n
    pe = float(cm.sum(axis=1) @ cm.sum(axis=0)) / n**2
    if pe == 1.0:
        return 1.0 if po == 1.0 else 0.0
    return float((po - pe) / (1.0 - pe))


def classification_metrics(pred, truth, mask=None, n_classes=None) -> dict:
    """OA, AA (mean per-class recall) and Cohen's kappa over ``mask`` pixels.

    Truth ids are 1..c with 0 meaning unlabeled; the default mask keeps every
    labeled pixel. Classes with no pixels under the mask get accuracy 0 and
    are listed in ``empty_classes``.
    """
    p, t = _masked(pred, truth, mask)
    c = int(n_classes or max(t.max(initial=0), p.max(initial=0)))
    classes = np.arange(1, c + 1)
    cm = confusion_matrix(t, p, classes)
    support = np.bincount(t, minlength=c + 1)[1:]
    correct = np.diag(cm)
    per_class = np.divide(correct, support, out=np.zeros(c), where=support > 0)
    total = int(support.sum())
    # kappa on the full table, with unclassified predictions in an extra column
    full = np.zeros((c, c + 1))
    full[:, :c] = cm
    full[:, c] = support - cm.sum(axis=1)
    full = np.vstack([full, np.zeros(c + 1)])
    return {
        "per_class": per_class.tolist(),
        "empty_classes": (np.flatnonzero(support == 0) + 1).tolist(),
        "OA": float(correct.sum() / total) if total else 0.0,
        "AA": float(per_class[support > 0].mean()) if np.any(support > 0) else 0.0,
        "Kappa": cohen_kappa(full),
        "n_evaluated": total,
        "confusion": cm.tolist(),
    }


def contingency(truth, clusters):
    t_ids, t = np.unique(truth, return_inverse=True)
    c_ids, k = np.unique(clusters, return_inverse=True)
    table = np.zeros((t_ids.size, c_ids.size), dtype=np.int64)
    np.add.at(table, (t.ravel(), k.ravel()), 1)
    return table, t_ids, c_ids


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def _first_occurrence_order(clusters):
    """Cluster ids sorted by where each first appears (independent of id values)."""
    ids, first = np.unique(np.asarray(clusters).ravel(), return_index=True)
    return ids[np.argsort(first)]


def match_clusters(truth, clusters) -> dict:
    """Best one-to-one cluster -> class map by maximum overlap (Hungarian).

    Clusters are ordered by first occurrence before solving, so ties between
    equally good matchings resolve the same way under any relabeling.
    """
    table, t_ids, c_ids = contingency(truth, clusters)
    order = np.searchsorted(c_ids, _first_occurrence_order(clusters))
    table, c_ids = table[:, order], c_ids[order]
    size = max(table.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[: table.shape[0], : table.shape[1]] = table
    rows, cols = linear_sum_assignment(padded, maximize=True)
    return {
        int(c_ids[j]): int(t_ids[i])
        for i, j in zip(rows, cols)
        if i < t_ids.size and j < c_ids.size
    }


def clustering_metrics(pred_clusters, truth, mask=None) -> dict:
    """ACC, Kappa, NMI, Purity, ARI and pairwise F-score for a partition.

    ACC and Kappa use the optimal one-to-one matching of clusters to classes;
    clusters left unmatched count as errors. NMI is normalised by the
    arithmetic mean of the two entropies.
    """
    p, t = _masked(pred_clusters, truth, mask)
    n = t.size
    if n == 0:
        raise ValueError("no pixels to evaluate")
    table, t_ids, _ = contingency(t, p)
    mapping = match_clusters(t, p)
    sentinel = int(min(t_ids.min(), 0)) - 1
    mapped = np.array([mapping.get(int(v), sentinel) for v in p])
    acc = float(np.mean(mapped == t))
    labels = np.concatenate([t_ids, [sentinel]])
    cm = confusion_matrix(t, mapped, labels)
    kappa = cohen_kappa(cm)

    a = table.sum(axis=1)  # class sizes
    b = table.sum(axis=0)  # cluster sizes
    nz = table > 0
    mi = float(np.sum(table[nz] / n * np.log(n * table[nz] / np.outer(a, b)[nz])))
    h_t, h_c = _entropy(a), _entropy(b)
    denom = 0.5 * (h_t + h_c)
    nmi = mi / denom if denom > 0 else 1.0
    purity = float(table.max(axis=0).sum() / n)

    sum_ij = _comb2(table).sum()
    sum_a = _comb2(a).sum()
    sum_b = _comb2(b).sum()
    total_pairs = _comb2(n)
    expected = sum_a * sum_b / total_pairs if total_pairs else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    ari = 1.0 if max_index == expected else float((sum_ij - expected) / (max_index - expected))
    precision = sum_ij / sum_b if sum_b else 0.0
    recall = sum_ij / sum_a if sum_a else 0.0
    fscore = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "ACC": acc,
        "Kappa": kappa,
        "NMI": float(nmi),
        "Purity": purity,
        "ARI": ari,
        "F-score": float(fscore),
        "n_evaluated": int(n),
        "mapping": {str(k): v for k, v in mapping.items()},
    }


def format_table(metrics: dict, title: str = "") -> str:
    """Aligned two-column text table (per-class rows first, then summaries)."""
    lines = [title] if title else []
    rows = []
    for i, acc in enumerate(metrics.get("per_class", []), start=1):
        rows.append((str(i), acc))
    for key in ("AA", "OA", "Kappa", "ACC", "NMI", "Purity", "ARI", "F-score"):
        if key in metrics:
            rows.append((key, metrics[key]))
    width = max((len(r[0]) for r in rows), default=5)
    lines.append(f"{'class'.ljust(width)}  value")
    lines.extend(f"{name.ljust(width)}  {val:.4f}" for name, val in rows)
    return "\n".join(lines) + "\n"
