"""Downstream evaluation: link prediction and node classification.

Link prediction removes a fraction of each dimension's edges, trains on
the remainder, scores the held-out pairs (pooled over dimensions)
against an equal number of sampled non-edges, and reports AUC-ROC and
average precision. Hyperbolic embeddings are scored with the
Fermi-Dirac decoder; euclidean ones with the sigmoid of the dot
product. Node classification maps embeddings to tangent coordinates and
fits an in-repo multinomial logistic regression (one-vs-rest for
multi-label graphs).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import manifold as mf
from .autodiff import constant, sigmoid, val
from .graph import MultiplexGraph, edges_from_csr, _edges_to_csr


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# edge splitting


@dataclass
class EdgeSplit:
    train_graph: MultiplexGraph
    test_pos: list  # (dim, i, j) true edges removed from training
    test_neg: list  # (dim, i, j) verified non-edges of that dimension
    ratios: tuple
    seed: int


def split_edges(graph: MultiplexGraph, ratios=(0.85, 0.15), seed=0) -> EdgeSplit:
    """Uniform per-dimension removal of test edges plus negative sampling.

    Every dimension must keep at least one training edge; negatives are
    distinct node pairs verified absent from that dimension's adjacency
    (they may exist in other dimensions, as in the standard protocol).
    """
    if abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise EvalError(f"ratios must be nonnegative and sum to 1, got {ratios}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), 31]))
    n = graph.n_nodes
    test_pos, test_neg, train_dims = [], [], []
    for d, a in enumerate(graph.dims):
        edges = edges_from_csr(a)
        n_test = int(round(len(edges) * ratios[1]))
        if len(edges) == 0 or (n_test > 0 and len(edges) - n_test < 1):
            raise EvalError(
                f"dimension {d} has {len(edges)} edges; cannot hold out {n_test} "
                f"and keep at least one for training")
        pick = set(rng.choice(len(edges), size=n_test, replace=False).tolist()) \
            if n_test else set()
        kept = [e for k, e in enumerate(edges) if k not in pick]
        held = [e for k, e in enumerate(edges) if k in pick]
        test_pos.extend((d, i, j) for i, j in held)
        train_dims.append(_edges_to_csr(n, kept))

        edge_set = set(edges)
        negatives = set()
        guard = 0
        while len(negatives) < n_test:
            cand_i = rng.integers(0, n, size=4 * (n_test - len(negatives)) + 8)
            cand_j = rng.integers(0, n, size=cand_i.size)
            for i, j in zip(cand_i.tolist(), cand_j.tolist()):
                if i == j:
                    continue
                pair = (min(i, j), max(i, j))
                if pair in edge_set or pair in negatives:
                    continue
                negatives.add(pair)
                if len(negatives) == n_test:
                    break
            guard += 1
            if guard > 1000:
                raise EvalError(f"dimension {d}: could not sample {n_test} non-edges")
        test_neg.extend((d, i, j) for i, j in sorted(negatives))

    train_graph = MultiplexGraph(n, train_dims, graph.features.copy(),
                                 copy.deepcopy(graph.labels))
    return EdgeSplit(train_graph, test_pos, test_neg, tuple(ratios), int(seed))


# ---------------------------------------------------------------------------
# ranking metrics


def auc_ap(scores, labels):
    """AUC via the rank statistic (ties count 1/2) and average precision."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise EvalError("scores and labels must be equal-length vectors")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvalError("both classes must be present")

    order = np.argsort(scores, kind="stable")
    ranks = np.empty_like(scores)
    sorted_scores = scores[order]
    i = 0
    pos = 1.0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (pos + (pos + j - i)) / 2.0  # midrank for ties
        pos += j - i + 1
        i = j + 1
    auc = (ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    desc = np.argsort(-scores, kind="stable")
    hits = (labels[desc] == 1).astype(np.float64)
    precision = np.cumsum(hits) / np.arange(1, scores.size + 1)
    ap = float((precision * hits).sum() / n_pos)
    return float(auc), ap


def f1_scores(predicted, actual):
    """(macro, micro) F1 over single- or multi-label assignments."""
    pred_sets = [set(p) if isinstance(p, (list, tuple, set)) else {int(p)}
                 for p in predicted]
    true_sets = [set(a) if isinstance(a, (list, tuple, set)) else {int(a)}
                 for a in actual]
    if len(pred_sets) != len(true_sets):
        raise EvalError("predicted and actual lengths differ")
    classes = sorted(set().union(*true_sets, *pred_sets)) if true_sets else []
    tp = {c: 0 for c in classes}
    fp = {c: 0 for c in classes}
    fn = {c: 0 for c in classes}
    for p, a in zip(pred_sets, true_sets):
        for c in p & a:
            tp[c] += 1
        for c in p - a:
            fp[c] += 1
        for c in a - p:
            fn[c] += 1
    per_class = []
    for c in classes:
        denom = 2 * tp[c] + fp[c] + fn[c]
        per_class.append(2 * tp[c] / denom if denom else 0.0)
    macro = float(np.mean(per_class)) if per_class else 0.0
    tp_all = sum(tp.values())
    denom = 2 * tp_all + sum(fp.values()) + sum(fn.values())
    micro = 2 * tp_all / denom if denom else 0.0
    return macro, float(micro)


# ---------------------------------------------------------------------------
# edge scoring


def edge_scores(z, pairs, kind=mf.LORENTZ, r=2.0, t=1.0):
    """Score node pairs: Fermi-Dirac on hyperbolic states, sigmoid dot
    product on euclidean ones."""
    z = np.asarray(z, dtype=np.float64)
    idx_i = np.fromiter((p[-2] for p in pairs), dtype=np.int64, count=len(pairs))
    idx_j = np.fromiter((p[-1] for p in pairs), dtype=np.int64, count=len(pairs))
    if kind == mf.EUCLIDEAN:
        return sigmoid((z[idx_i] * z[idx_j]).sum(axis=1))
    scores = mf.fermi_dirac_score(constant(z[idx_i]), constant(z[idx_j]),
                                  r=r, t=t, kind=kind)
    return val(scores).ravel()


def link_prediction_eval(z, split: EdgeSplit, kind=mf.LORENTZ, r=2.0, t=1.0):
    """Pooled AUC/AP over the split's held-out positives and negatives."""
    pairs = list(split.test_pos) + list(split.test_neg)
    if not split.test_pos or not split.test_neg:
        raise EvalError("empty test set; use a nonzero test ratio")
    labels = np.concatenate([np.ones(len(split.test_pos), dtype=np.int64),
                             np.zeros(len(split.test_neg), dtype=np.int64)])
    scores = edge_scores(z, pairs, kind=kind, r=r, t=t)
    return auc_ap(scores, labels)


# ---------------------------------------------------------------------------
# logistic regression (kept in-repo for determinism)


@dataclass
class Classifier:
    weights: np.ndarray  # C x E
    bias: np.ndarray  # C
    classes: list
    multilabel: bool


def _softmax_rows(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _fit_linear(n_params, loss_grad, max_iter=5000, tol=1e-5):
    """Backtracking gradient descent; the objective decreases monotonically.

    `loss_grad(params) -> (loss, grad)` must be the mean loss over rows
    plus the l2 penalty, so duplicated rows leave the optimum unchanged.
    """
    params = np.zeros(n_params)
    loss, grad = loss_grad(params)
    step = 1.0
    for _ in range(max_iter):
        gnorm = np.linalg.norm(grad)
        if gnorm < tol:
            break
        while step > 1e-12:
            cand = params - step * grad
            cand_loss, cand_grad = loss_grad(cand)
            if cand_loss <= loss - 1e-4 * step * gnorm * gnorm:
                break
            step *= 0.5
        params, loss, grad = cand, cand_loss, cand_grad
        step = min(step * 2.0, 1e3)
    return params


def fit_logreg(embeddings, labels, l2=1e-4, max_iter=5000, tol=1e-5) -> Classifier:
    """Multinomial logistic regression (one-vs-rest when multi-label)."""
    x = np.asarray(embeddings, dtype=np.float64)
    label_sets = [set(l) if isinstance(l, (list, tuple, set)) else {int(l)}
                  for l in labels]
    classes = sorted(set().union(*label_sets))
    if len(classes) < 2:
        raise EvalError("need at least two classes to fit a classifier")
    multilabel = any(len(s) > 1 for s in label_sets)
    n, e = x.shape
    c = len(classes)
    index = {cls: k for k, cls in enumerate(classes)}
    xb = np.concatenate([x, np.ones((n, 1))], axis=1)  # bias as a fixed column

    if multilabel:
        y = np.zeros((n, c))
        for row, s in enumerate(label_sets):
            for cls in s:
                y[row, index[cls]] = 1.0

        def loss_grad(params):
            w = params.reshape(c, e + 1)
            logits = xb @ w.T
            p = 1.0 / (1.0 + np.exp(-np.clip(logits, -500, 500)))
            eps = 1e-12
            nll = -(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)).mean()
            penalty = 0.5 * l2 * (w[:, :-1] ** 2).sum()
            g = ((p - y).T @ xb) / n
            g[:, :-1] += l2 * w[:, :-1]
            return nll + penalty, g.reshape(-1)
    else:
        y_idx = np.array([index[next(iter(s))] for s in label_sets])
        onehot = np.zeros((n, c))
        onehot[np.arange(n), y_idx] = 1.0

        def loss_grad(params):
            w = params.reshape(c, e + 1)
            p = _softmax_rows(xb @ w.T)
            nll = -np.log(p[np.arange(n), y_idx] + 1e-12).mean()
            penalty = 0.5 * l2 * (w[:, :-1] ** 2).sum()
            g = ((p - onehot).T @ xb) / n
            g[:, :-1] += l2 * w[:, :-1]
            return nll + penalty, g.reshape(-1)

    flat = _fit_linear(c * (e + 1), loss_grad, max_iter=max_iter, tol=tol)
    w = flat.reshape(c, e + 1)
    return Classifier(w[:, :-1].copy(), w[:, -1].copy(), classes, multilabel)


def predict(classifier: Classifier, embeddings):
    """Argmax prediction (per-label 0.5 threshold when multi-label)."""
    x = np.asarray(embeddings, dtype=np.float64)
    logits = x @ classifier.weights.T + classifier.bias
    if classifier.multilabel:
        return [[classifier.classes[k] for k in np.flatnonzero(row > 0)]
                for row in logits]
    return [classifier.classes[int(k)] for k in np.argmax(logits, axis=1)]


def classification_eval(embeddings, labels, seed=0, n_repeats=5, test_ratio=0.2,
                        l2=1e-4):
    """Stratified train/test node splits, repeated; mean and std of F1."""
    x = np.asarray(embeddings, dtype=np.float64)
    label_sets = [set(l) if isinstance(l, (list, tuple, set)) else {int(l)}
                  for l in labels]
    primary = np.array([sorted(s)[0] for s in label_sets])
    macros, micros = [], []
    for rep in range(n_repeats):
        rng = np.random.default_rng(
            np.random.SeedSequence([int(seed) & (2**63 - 1), 41, rep]))
        test_idx = []
        for cls in np.unique(primary):
            members = np.flatnonzero(primary == cls)
            members = members[rng.permutation(members.size)]
            n_test = max(1, int(round(members.size * test_ratio)))
            if n_test >= members.size:
                n_test = members.size - 1
            test_idx.extend(members[:n_test].tolist())
        test_mask = np.zeros(x.shape[0], dtype=bool)
        test_mask[test_idx] = True
        train_labels = [labels[i] for i in np.flatnonzero(~test_mask)]
        clf = fit_logreg(x[~test_mask], train_labels, l2=l2)
        preds = predict(clf, x[test_mask])
        actual = [labels[i] for i in np.flatnonzero(test_mask)]
        macro, micro = f1_scores(preds, actual)
        macros.append(macro)
        micros.append(micro)
    return {
        "f1_macro": float(np.mean(macros)), "f1_macro_std": float(np.std(macros)),
        "f1_micro": float(np.mean(micros)), "f1_micro_std": float(np.std(micros)),
        "n_repeats": n_repeats,
    }
