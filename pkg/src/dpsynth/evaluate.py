"""Statistical similarity, downstream utility and membership-inference checks.

Per-column fidelity uses the 1-D Wasserstein distance for numeric columns
(min-max scaled jointly at the report level) and base-2 Jensen-Shannon
divergence for categorical histograms; mixed columns score their
continuous part under WD and their singular-vs-continuous split under
JSD. Table-level association is compared through a matrix of Pearson,
Cramer's V and correlation-ratio entries. Utility is train-on-synthetic /
test-on-real with built-in logistic and ridge regressors, reported as
absolute differences against the real-trained baseline. The attack is a
best-case nearest-synthetic-neighbor threshold test.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import rankdata, wasserstein_distance

from .codec import SINGULAR_ATOL, TableSchema
from .errors import DataError

__all__ = [
    "EvalReport",
    "MiaResult",
    "wd_1d",
    "jsd",
    "diff_corr",
    "tstr_classify",
    "tstr_regress",
    "mia",
    "evaluate_tables",
]


def _floats(cells, where: str) -> np.ndarray:
    try:
        return np.array([float(c) for c in cells], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{where}: unparseable numeric cell ({exc})") from exc


def wd_1d(a, b) -> float:
    """First Wasserstein distance between two empirical 1-D samples."""
    a = np.asarray(list(a), dtype=np.float64)
    b = np.asarray(list(b), dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise DataError("wd_1d: empty sample")
    return float(wasserstein_distance(a, b))


def scaled_wd(a, b) -> float:
    """WD after jointly min-max scaling both samples to [0, 1]."""
    a = np.asarray(list(a), dtype=np.float64)
    b = np.asarray(list(b), dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise DataError("scaled_wd: empty sample")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    span = hi - lo
    if span == 0:
        return 0.0
    return wd_1d((a - lo) / span, (b - lo) / span)


def jsd(a_counts: Mapping[str, float], b_counts: Mapping[str, float]) -> float:
    """Base-2 Jensen-Shannon divergence between two count histograms."""
    support = sorted(set(a_counts) | set(b_counts))
    if not support:
        raise DataError("jsd: both histograms are empty")
    p = np.array([float(a_counts.get(k, 0)) for k in support])
    q = np.array([float(b_counts.get(k, 0)) for k in support])
    if p.sum() == 0 or q.sum() == 0:
        raise DataError("jsd: a histogram has zero total count")
    p /= p.sum()
    q /= q.sum()
    m = 0.5 * (p + q)

    def kl(u, v):
        mask = u > 0
        return float(np.sum(u[mask] * np.log2(u[mask] / v[mask])))

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


# --------------------------------------------------------------- associations

def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    sx, sy = x.std(), y.std()
    if sx == 0 or sy == 0:
        warnings.warn("constant column in Pearson correlation; entry set to 0")
        return 0.0
    return float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))


def _cramers_v(x: list[str], y: list[str]) -> float:
    xs = sorted(set(x))
    ys = sorted(set(y))
    if len(xs) < 2 or len(ys) < 2:
        return 0.0
    xi = np.array([xs.index(v) for v in x])
    yi = np.array([ys.index(v) for v in y])
    table = np.zeros((len(xs), len(ys)))
    np.add.at(table, (xi, yi), 1.0)
    n = table.sum()
    expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / n
    mask = expected > 0
    chi2 = float(np.sum((table[mask] - expected[mask]) ** 2 / expected[mask]))
    return float(np.sqrt(chi2 / (n * (min(len(xs), len(ys)) - 1))))


def _correlation_ratio(cats: list[str], values: np.ndarray) -> float:
    total = float(np.sum((values - values.mean()) ** 2))
    if total == 0:
        warnings.warn("constant column in correlation ratio; entry set to 0")
        return 0.0
    between = 0.0
    arr = np.asarray(values)
    codes = np.array(cats)
    for c in set(cats):
        group = arr[codes == c]
        between += group.size * (group.mean() - arr.mean()) ** 2
    return float(np.sqrt(between / total))


def _association_matrix(grid: list[list[str]], schema: TableSchema) -> np.ndarray:
    n_cols = len(schema.columns)
    numeric: dict[int, np.ndarray] = {}
    cats: dict[int, list[str]] = {}
    for i, col in enumerate(schema.columns):
        cells = [row[i] for row in grid]
        if col.kind == "categorical":
            cats[i] = cells
        else:
            numeric[i] = _floats(cells, f"column {col.name!r}")
    out = np.eye(n_cols)
    for i in range(n_cols):
        for j in range(i + 1, n_cols):
            if i in numeric and j in numeric:
                v = _pearson(numeric[i], numeric[j])
            elif i in cats and j in cats:
                v = _cramers_v(cats[i], cats[j])
            elif i in cats:
                v = _correlation_ratio(cats[i], numeric[j])
            else:
                v = _correlation_ratio(cats[j], numeric[i])
            out[i, j] = out[j, i] = v
    return out


def diff_corr(real: list[list[str]], synth: list[list[str]], schema: TableSchema) -> float:
    """Frobenius norm of the difference of association matrices, diagonal excluded."""
    if len(schema.columns) < 2:
        raise DataError("diff_corr needs at least 2 columns")
    a = _association_matrix(real, schema)
    b = _association_matrix(synth, schema)
    d = a - b
    np.fill_diagonal(d, 0.0)
    return float(np.linalg.norm(d))


# -------------------------------------------------------------------- utility

def _feature_vocab(grids, schema: TableSchema, target: str) -> dict[int, tuple[str, ...]]:
    """Shared category vocabulary per categorical feature column.

    Built over every table involved so all design matrices share one width.
    """
    t_idx = schema.column_index(target)
    vocab: dict[int, tuple[str, ...]] = {}
    for i, col in enumerate(schema.columns):
        if i == t_idx or col.kind != "categorical":
            continue
        if col.categories:
            vocab[i] = col.categories
        else:
            seen = set()
            for grid in grids:
                seen.update(row[i] for row in grid)
            vocab[i] = tuple(sorted(seen))
    return vocab


def _design(grid, schema: TableSchema, target: str, vocab: dict[int, tuple[str, ...]]):
    """Features (numeric matrix) and raw target cells for one table."""
    t_idx = schema.column_index(target)
    feats = []
    for i, col in enumerate(schema.columns):
        if i == t_idx:
            continue
        cells = [row[i] for row in grid]
        if col.kind == "categorical":
            cats = vocab[i]
            block = np.zeros((len(grid), len(cats)))
            index = {c: j for j, c in enumerate(cats)}
            for r, c in enumerate(cells):
                if c in index:
                    block[r, index[c]] = 1.0
            feats.append(block)
        else:
            feats.append(_floats(cells, f"column {col.name!r}").reshape(-1, 1))
    if not feats:
        raise DataError("no feature columns besides the target")
    x = np.hstack(feats)
    y = [row[t_idx] for row in grid]
    return x, y


def _standardize(train: np.ndarray, *others):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd == 0, 1.0, sd)
    return tuple((m - mu) / sd for m in (train, *others))


def _fit_logistic(x: np.ndarray, labels: np.ndarray, n_classes: int,
                  l2: float = 1e-4, epochs: int = 500) -> tuple[np.ndarray, np.ndarray]:
    """Full-batch gradient descent on softmax cross-entropy; deterministic."""
    n, d = x.shape
    w = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    # safe step size from a Lipschitz bound on the mean loss gradient
    lip = 0.5 * float(np.sum(x * x)) / n + l2
    lr = 1.0 / max(lip, 1e-6)
    for _ in range(epochs):
        logits = x @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        w -= lr * (x.T @ g + l2 * w)
        b -= lr * g.sum(axis=0)
    return w, b


def _predict_proba(x, w, b):
    logits = x @ w + b
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def _auc_binary(scores: np.ndarray, truth: np.ndarray) -> float:
    pos = truth == 1
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return 0.5
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _auc_macro(proba: np.ndarray, labels: np.ndarray) -> float:
    if proba.shape[1] == 2:
        return _auc_binary(proba[:, 1], (labels == 1).astype(int))
    vals = []
    for c in range(proba.shape[1]):
        truth = (labels == c).astype(int)
        if truth.sum() in (0, len(truth)):
            continue
        vals.append(_auc_binary(proba[:, c], truth))
    return float(np.mean(vals)) if vals else 0.5


def _f1_macro(pred: np.ndarray, truth: np.ndarray, n_classes: int) -> float:
    scores = []
    for c in range(n_classes):
        tp = int(np.sum((pred == c) & (truth == c)))
        fp = int(np.sum((pred == c) & (truth != c)))
        fn = int(np.sum((pred != c) & (truth == c)))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def tstr_classify(real_train, real_test, synth, schema: TableSchema, target: str
                  ) -> tuple[float, float, float]:
    """Train-on-synthetic vs train-on-real classification gap on real test data.

    Returns absolute differences: accuracy in percentage points, macro AUC
    and macro F1 in raw units.
    """
    vocab = _feature_vocab((real_train, real_test, synth), schema, target)
    x_rt, y_rt = _design(real_train, schema, target, vocab)
    x_te, y_te = _design(real_test, schema, target, vocab)
    x_sy, y_sy = _design(synth, schema, target, vocab)
    classes = sorted(set(y_rt) | set(y_te) | set(y_sy))
    if len(set(y_rt)) < 2 or len(set(y_sy)) < 2:
        raise DataError("tstr_classify: training target has a single class")
    index = {c: i for i, c in enumerate(classes)}
    lab_rt = np.array([index[c] for c in y_rt])
    lab_te = np.array([index[c] for c in y_te])
    lab_sy = np.array([index[c] for c in y_sy])

    def run(x_tr, labels, x_ev):
        x_tr_s, x_ev_s = _standardize(x_tr, x_ev)
        w, b = _fit_logistic(x_tr_s, labels, len(classes))
        proba = _predict_proba(x_ev_s, w, b)
        pred = np.argmax(proba, axis=1)
        acc = float(np.mean(pred == lab_te))
        return acc, _auc_macro(proba, lab_te), _f1_macro(pred, lab_te, len(classes))

    acc_r, auc_r, f1_r = run(x_rt, lab_rt, x_te)
    acc_s, auc_s, f1_s = run(x_sy, lab_sy, x_te)
    return abs(acc_r - acc_s) * 100.0, abs(auc_r - auc_s), abs(f1_r - f1_s)


def _fit_ridge(x: np.ndarray, y: np.ndarray, reg: float) -> tuple[np.ndarray, float]:
    """Closed-form ridge on centered data; intercept unpenalized."""
    y_mean = float(y.mean())
    yc = y - y_mean
    if reg > 0:
        beta = np.linalg.solve(x.T @ x + reg * np.eye(x.shape[1]), x.T @ yc)
    else:
        beta, *_ = np.linalg.lstsq(x, yc, rcond=None)
    return beta, y_mean


def tstr_regress(real_train, real_test, synth, schema: TableSchema, target: str,
                 reg: float = 1.0) -> tuple[float, float, float]:
    """Ridge-regression utility gap: absolute differences of (MAE, EVS, R2)."""
    vocab = _feature_vocab((real_train, real_test, synth), schema, target)
    x_rt, y_rt = _design(real_train, schema, target, vocab)
    x_te, y_te = _design(real_test, schema, target, vocab)
    x_sy, y_sy = _design(synth, schema, target, vocab)
    if x_rt.shape[1] == 0:
        raise DataError("tstr_regress: empty feature matrix")
    t_rt = _floats(y_rt, f"target {target!r}")
    t_te = _floats(y_te, f"target {target!r}")
    t_sy = _floats(y_sy, f"target {target!r}")

    def run(x_tr, y_tr, x_ev):
        x_tr_s, x_ev_s = _standardize(x_tr, x_ev)
        beta, y_mean = _fit_ridge(x_tr_s, y_tr, reg)
        pred = x_ev_s @ beta + y_mean
        mae = float(np.mean(np.abs(t_te - pred)))
        resid = t_te - pred
        var = float(np.var(t_te))
        evs = 1.0 - float(np.var(resid)) / var if var > 0 else 0.0
        sst = float(np.sum((t_te - t_te.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid ** 2)) / sst if sst > 0 else 0.0
        return mae, evs, r2

    mae_r, evs_r, r2_r = run(x_rt, t_rt, x_te)
    mae_s, evs_s, r2_s = run(x_sy, t_sy, x_te)
    return abs(mae_r - mae_s), abs(evs_r - evs_s), abs(r2_r - r2_s)


# --------------------------------------------------------------------- attack

class MiaResult(NamedTuple):
    accuracy: float
    threshold: float


def mia(members: np.ndarray, nonmembers: np.ndarray, synth: np.ndarray) -> MiaResult:
    """Best-case nearest-synthetic-neighbor membership attack.

    Scores every record by Euclidean distance to its nearest synthetic
    row and picks the threshold maximizing balanced accuracy over the
    combined set, giving the attacker maximal power. Inputs are numeric
    matrices in a common (typically encoded) space.
    """
    members = np.atleast_2d(np.asarray(members, dtype=np.float64))
    nonmembers = np.atleast_2d(np.asarray(nonmembers, dtype=np.float64))
    synth = np.atleast_2d(np.asarray(synth, dtype=np.float64))
    if synth.shape[0] == 0:
        raise DataError("mia: empty synthetic set")
    if members.shape[0] != nonmembers.shape[0] or members.shape[0] == 0:
        raise DataError(
            f"mia: need equal non-empty member/nonmember sets, got "
            f"{members.shape[0]} vs {nonmembers.shape[0]}"
        )
    d_m = cdist(members, synth).min(axis=1)
    d_n = cdist(nonmembers, synth).min(axis=1)
    n = len(d_m)
    best_acc, best_thr = 0.5, -np.inf  # predict-nobody baseline
    for thr in np.unique(np.concatenate([d_m, d_n])):
        tpr = float(np.mean(d_m <= thr))
        tnr = float(np.mean(d_n > thr))
        acc = 0.5 * (tpr + tnr)
        if acc > best_acc:
            best_acc, best_thr = acc, float(thr)
    return MiaResult(best_acc, best_thr)


# --------------------------------------------------------------------- report

@dataclass
class EvalReport:
    """Everything the evaluate pipeline measures, plus run metadata."""

    wd: dict[str, float] = field(default_factory=dict)
    jsd: dict[str, float] = field(default_factory=dict)
    diff_cor: float = 0.0
    utility: dict | None = None
    mia_accuracy: float | None = None
    metadata: dict = field(default_factory=dict)


def _split_mixed(cells: list[str], singular_values) -> tuple[np.ndarray, dict[str, int]]:
    vals = _floats(cells, "mixed column")
    hist: dict[str, int] = {}
    cont_mask = np.ones(len(vals), dtype=bool)
    for s in singular_values:
        hit = np.abs(vals - s) <= SINGULAR_ATOL
        hist[repr(float(s))] = int(hit.sum())
        cont_mask &= ~hit
    hist["<continuous>"] = int(cont_mask.sum())
    return vals[cont_mask], hist


def evaluate_tables(real: list[list[str]], synth: list[list[str]], schema: TableSchema,
                    seed: int = 0, target: str | None = None) -> EvalReport:
    """Full fidelity/utility report comparing a synthetic table to the real one.

    Numeric columns score WD on jointly min-max scaled values; categorical
    columns score base-2 JSD; mixed columns additionally report the JSD of
    their singular-vs-continuous indicator under ``<name>:singular``. TSTR
    utility uses an 80/20 split of the real table by seeded shuffle.
    """
    report = EvalReport()
    for i, col in enumerate(schema.columns):
        r_cells = [row[i] for row in real]
        s_cells = [row[i] for row in synth]
        if col.kind == "categorical":
            counts_r: dict[str, int] = {}
            counts_s: dict[str, int] = {}
            for c in r_cells:
                counts_r[c] = counts_r.get(c, 0) + 1
            for c in s_cells:
                counts_s[c] = counts_s.get(c, 0) + 1
            report.jsd[col.name] = jsd(counts_r, counts_s)
        elif col.kind == "mixed":
            r_cont, r_hist = _split_mixed(r_cells, col.singular_values)
            s_cont, s_hist = _split_mixed(s_cells, col.singular_values)
            if r_cont.size and s_cont.size:
                report.wd[col.name] = scaled_wd(r_cont, s_cont)
            else:
                report.wd[col.name] = scaled_wd(
                    _floats(r_cells, col.name), _floats(s_cells, col.name)
                )
            report.jsd[f"{col.name}:singular"] = jsd(r_hist, s_hist)
        else:
            report.wd[col.name] = scaled_wd(
                _floats(r_cells, col.name), _floats(s_cells, col.name)
            )
    report.diff_cor = diff_corr(real, synth, schema)

    if target is None and schema.target_index is not None:
        target = schema.columns[schema.target_index].name
    if target is not None:
        if len(real) < 2:
            raise DataError("TSTR evaluation needs at least 2 real rows")
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(real))
        cut = min(max(1, int(0.8 * len(real))), len(real) - 1)
        train = [real[i] for i in order[:cut]]
        test = [real[i] for i in order[cut:]]
        t_idx = schema.column_index(target)
        if schema.columns[t_idx].kind == "categorical":
            acc, auc, f1 = tstr_classify(train, test, synth, schema, target)
            report.utility = {
                "kind": "classification",
                "delta_acc_pp": acc, "delta_auc": auc, "delta_f1": f1,
            }
        else:
            mae, evs, r2 = tstr_regress(train, test, synth, schema, target)
            report.utility = {
                "kind": "regression",
                "delta_mae": mae, "delta_evs": evs, "delta_r2": r2,
            }
    report.metadata = {
        "seed": seed,
        "real_rows": len(real),
        "synth_rows": len(synth),
    }
    return report
