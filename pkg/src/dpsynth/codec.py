"""Table encoding between raw string grids and the GAN's numeric space.

Numeric columns (continuous, mixed, long-tail) are modeled per column by a
variational Gaussian mixture. Each value is normalized against its best
mode k* = argmax_k w_k * N(tau; mu_k, sd_k) as

    alpha = clamp((tau - mu_k*) / (4 * sd_k*), -1, 1)

and paired with a one-hot mode indicator beta. Mixed columns route values
that equal a declared singular value (within 1e-9) to dedicated singular
modes with alpha = 0; long-tail columns are pre-transformed by a
sign-preserving log1p. Categorical columns become plain one-hots.

The encoded row is the concatenation of per-column (alpha, beta) or
one-hot blocks in schema order. A separate conditional vector one-hot
selects a (column, mode) pair; during training modes are drawn with
probability proportional to log(1 + count) to soften imbalance, while
generation draws them at their raw frequency.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.mixture import BayesianGaussianMixture

from .errors import ConfigError, DataError

__all__ = [
    "ColumnSpec",
    "TableSchema",
    "VgmModel",
    "Block",
    "EncodedLayout",
    "EncodedTable",
    "CodecState",
    "COLUMN_KINDS",
    "parse_schema",
    "fit_vgm",
    "encode_value",
    "decode_value",
    "encode_table",
    "encode_rows",
    "decode_table",
    "sample_condition",
    "sample_conditions",
    "longtail_forward",
    "longtail_inverse",
]

COLUMN_KINDS = ("continuous", "categorical", "mixed", "longtail")
NUMERIC_KINDS = ("continuous", "mixed", "longtail")

DEFAULT_MAX_MODES = 10
WEIGHT_PRUNE = 0.005
STD_FLOOR = 1e-6
SINGULAR_ATOL = 1e-9


@dataclass(frozen=True)
class ColumnSpec:
    """Declared type of one column."""

    name: str
    kind: str
    singular_values: tuple[float, ...] = ()
    categories: tuple[str, ...] = ()
    is_target: bool = False

    def __post_init__(self):
        if self.kind not in COLUMN_KINDS:
            raise ConfigError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "mixed":
            if not self.singular_values:
                raise ConfigError(f"mixed column {self.name!r} needs singular_values")
            if len(set(self.singular_values)) != len(self.singular_values):
                raise ConfigError(f"column {self.name!r}: singular_values must be distinct")
        elif self.singular_values:
            raise ConfigError(f"column {self.name!r}: singular_values only apply to mixed columns")
        if self.categories and self.kind != "categorical":
            raise ConfigError(f"column {self.name!r}: categories only apply to categorical columns")


@dataclass(frozen=True)
class TableSchema:
    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate column names in schema")
        targets = [c.name for c in self.columns if c.is_target]
        if len(targets) > 1:
            raise ConfigError(f"at most one target column allowed, got {targets}")

    @property
    def target_index(self) -> int | None:
        for i, c in enumerate(self.columns):
            if c.is_target:
                return i
        return None

    def column_index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise ConfigError(f"schema has no column {name!r}")


def parse_schema(config_text: str) -> TableSchema:
    """Parse a JSON schema document: a list of column objects.

    Each object takes ``name``, ``kind`` and optionally ``singular_values``,
    ``categories`` and ``is_target``. Unknown keys are rejected.
    """
    try:
        doc = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"schema is not valid JSON: {exc}") from exc
    if isinstance(doc, dict) and set(doc) == {"columns"}:
        doc = doc["columns"]
    if not isinstance(doc, list) or not doc:
        raise ConfigError("schema must be a non-empty list of column objects")
    allowed = {"name", "kind", "singular_values", "categories", "is_target"}
    cols = []
    for item in doc:
        if not isinstance(item, dict):
            raise ConfigError(f"schema entries must be objects, got {item!r}")
        unknown = set(item) - allowed
        if unknown:
            raise ConfigError(f"unknown schema keys {sorted(unknown)} in column {item.get('name')!r}")
        if "name" not in item or "kind" not in item:
            raise ConfigError(f"schema column needs 'name' and 'kind': {item!r}")
        cols.append(ColumnSpec(
            name=str(item["name"]),
            kind=str(item["kind"]),
            singular_values=tuple(float(v) for v in item.get("singular_values", ())),
            categories=tuple(str(c) for c in item.get("categories", ())),
            is_target=bool(item.get("is_target", False)),
        ))
    return TableSchema(tuple(cols))


@dataclass(frozen=True)
class VgmModel:
    """Per-column mixture: singular modes first, Gaussian modes by ascending mean."""

    weights: tuple[float, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]
    singular_modes: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.weights) != len(self.means) or len(self.means) != len(self.stds):
            raise ValueError("VgmModel: weights/means/stds lengths differ")
        if self.weights and abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"VgmModel: weights sum to {sum(self.weights)}, expected 1")
        if any(s < STD_FLOOR for s in self.stds):
            raise ValueError(f"VgmModel: stds must be >= {STD_FLOOR}")

    @property
    def n_gaussian(self) -> int:
        return len(self.weights)

    @property
    def mode_count(self) -> int:
        return len(self.singular_modes) + len(self.weights)


def fit_vgm(values, max_modes: int = DEFAULT_MAX_MODES, seed: int = 0) -> VgmModel:
    """Fit a variational Gaussian mixture to a 1-D sample.

    Runs several restarts (k-means++ plus random responsibilities) and
    keeps the solution with the best evidence lower bound, then prunes
    components below weight 0.005 and renormalizes. Deterministic given
    (values, max_modes, seed). Mixed-column callers must strip singular
    values beforehand.
    """
    x = np.asarray(list(values), dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("fit_vgm expects a 1-D sample")
    if np.unique(x).size < 2:
        raise DataError(
            "degenerate column: fewer than 2 distinct values left to model; "
            "re-type it as categorical"
        )
    n_comp = int(min(max_modes, x.size))
    best = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for offset, init in enumerate(("k-means++", "random", "random")):
            gm = BayesianGaussianMixture(
                n_components=n_comp,
                weight_concentration_prior_type="dirichlet_process",
                weight_concentration_prior=1e-3,
                max_iter=1000,
                tol=1e-4,
                init_params=init,
                random_state=seed + offset,
            ).fit(x.reshape(-1, 1))
            if best is None or gm.lower_bound_ > best.lower_bound_:
                best = gm
    w = best.weights_
    mu = best.means_.ravel()
    sd = np.sqrt(best.covariances_.ravel())
    keep = w > WEIGHT_PRUNE
    w, mu, sd = w[keep], mu[keep], sd[keep]
    order = np.argsort(mu, kind="stable")
    w, mu, sd = w[order], mu[order], sd[order]
    w = w / w.sum()
    sd = np.maximum(sd, STD_FLOOR)
    return VgmModel(tuple(w.tolist()), tuple(mu.tolist()), tuple(sd.tolist()))


def _gaussian_mode_index(tau: np.ndarray, model: VgmModel) -> np.ndarray:
    """Argmax_k of w_k * N(tau; mu_k, sd_k), ties to the lowest index."""
    w = np.asarray(model.weights)
    mu = np.asarray(model.means)
    sd = np.asarray(model.stds)
    t = np.asarray(tau, dtype=np.float64).reshape(-1, 1)
    log_dens = np.log(w) - np.log(sd) - 0.5 * ((t - mu) / sd) ** 2
    return np.argmax(log_dens, axis=1)


def encode_value(tau: float, model: VgmModel) -> tuple[float, np.ndarray]:
    """Encode one value as (alpha, beta one-hot over the model's modes)."""
    beta = np.zeros(model.mode_count)
    for i, s in enumerate(model.singular_modes):
        if abs(tau - s) <= SINGULAR_ATOL:
            beta[i] = 1.0
            return 0.0, beta
    k = int(_gaussian_mode_index(np.array([tau]), model)[0])
    alpha = (tau - model.means[k]) / (4.0 * model.stds[k])
    alpha = float(np.clip(alpha, -1.0, 1.0))
    beta[len(model.singular_modes) + k] = 1.0
    return alpha, beta


def decode_value(alpha: float, beta, model: VgmModel) -> float:
    """Invert ``encode_value``; beta must be a valid one-hot."""
    b = np.asarray(beta, dtype=np.float64)
    if b.shape != (model.mode_count,) or not np.all((b == 0) | (b == 1)) or b.sum() != 1:
        raise ValueError(f"malformed beta one-hot {beta!r}")
    mode = int(np.argmax(b))
    n_sing = len(model.singular_modes)
    if mode < n_sing:
        return float(model.singular_modes[mode])
    k = mode - n_sing
    return float(4.0 * model.stds[k] * alpha + model.means[k])


def longtail_forward(x: np.ndarray) -> np.ndarray:
    """Sign-preserving log1p compression for heavy-tailed columns."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.log1p(np.abs(x))


def longtail_inverse(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return np.sign(y) * np.expm1(np.abs(y))


@dataclass(frozen=True)
class Block:
    """Placement of one column in the encoded row and the condition vector."""

    name: str
    kind: str
    offset: int          # start of the column's block in the encoded row
    width: int           # total block width
    onehot_offset: int   # start of the beta / one-hot section
    modes: int           # number of modes or categories
    cond_offset: int     # start of this column's section in the condition vector
    is_target: bool = False

    @property
    def alpha_offset(self) -> int | None:
        return self.offset if self.kind in NUMERIC_KINDS else None


@dataclass(frozen=True)
class EncodedLayout:
    blocks: tuple[Block, ...]
    row_width: int
    cond_width: int


@dataclass(frozen=True)
class CodecState:
    """Everything needed to encode new rows and decode generated ones."""

    schema: TableSchema
    models: tuple[VgmModel | None, ...]
    categories: tuple[tuple[str, ...] | None, ...]
    layout: EncodedLayout
    frequencies: tuple[tuple[int, ...], ...]
    dropped_rows: int = 0

    def mode_count(self, col: int) -> int:
        return self.layout.blocks[col].modes


@dataclass(frozen=True)
class EncodedTable:
    layout: EncodedLayout
    data: np.ndarray
    frequencies: tuple[tuple[int, ...], ...]


def _build_layout(schema: TableSchema, models, categories) -> EncodedLayout:
    blocks = []
    offset = 0
    cond_offset = 0
    for i, col in enumerate(schema.columns):
        if col.kind == "categorical":
            modes = len(categories[i])
            width = modes
            onehot = offset
        else:
            modes = models[i].mode_count
            width = 1 + modes
            onehot = offset + 1
        blocks.append(Block(col.name, col.kind, offset, width, onehot, modes,
                            cond_offset, col.is_target))
        offset += width
        cond_offset += modes
    return EncodedLayout(tuple(blocks), offset, cond_offset)


def _parse_numeric_column(cells: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Returns (values, ok mask); NaN/Inf and unparseable cells are not ok."""
    vals = np.full(len(cells), np.nan)
    ok = np.zeros(len(cells), dtype=bool)
    for i, cell in enumerate(cells):
        try:
            v = float(cell)
        except (TypeError, ValueError):
            continue
        if np.isfinite(v):
            vals[i] = v
            ok[i] = True
    return vals, ok


def encode_table(raw: list[list[str]], schema: TableSchema,
                 max_modes: int = DEFAULT_MAX_MODES, seed: int = 0
                 ) -> tuple[EncodedTable, CodecState]:
    """Fit per-column models on ``raw`` and encode it.

    Rows with unparseable numeric cells or undeclared categories are
    dropped and counted in ``CodecState.dropped_rows``.
    """
    n_cols = len(schema.columns)
    for r, row in enumerate(raw):
        if len(row) != n_cols:
            raise DataError(f"row {r} has {len(row)} cells, schema has {n_cols} columns")
    n_rows = len(raw)
    keep = np.ones(n_rows, dtype=bool)
    numeric_vals: dict[int, np.ndarray] = {}
    categories: list[tuple[str, ...] | None] = []

    for i, col in enumerate(schema.columns):
        cells = [row[i] for row in raw]
        if col.kind == "categorical":
            if col.categories:
                cats = col.categories
            else:
                cats = tuple(sorted(set(cells)))
            categories.append(cats)
            known = set(cats)
            keep &= np.array([c in known for c in cells])
        else:
            vals, ok = _parse_numeric_column(cells)
            numeric_vals[i] = vals
            keep &= ok
            categories.append(None)

    dropped = int(n_rows - keep.sum())
    if keep.sum() == 0:
        raise DataError(f"no usable rows: all {n_rows} rows dropped")

    models: list[VgmModel | None] = []
    for i, col in enumerate(schema.columns):
        if col.kind == "categorical":
            models.append(None)
            continue
        vals = numeric_vals[i][keep]
        if col.kind == "longtail":
            vals = longtail_forward(vals)
        if col.kind == "mixed":
            singular = np.zeros(vals.shape, dtype=bool)
            for s in col.singular_values:
                singular |= np.abs(vals - s) <= SINGULAR_ATOL
            cont = vals[~singular]
            if np.unique(cont).size < 2:
                raise DataError(
                    f"mixed column {col.name!r} has fewer than 2 distinct non-singular "
                    "values; re-type it as categorical"
                )
            base = fit_vgm(cont, max_modes, seed)
            models.append(replace(base, singular_modes=tuple(col.singular_values)))
        else:
            models.append(fit_vgm(vals, max_modes, seed))

    layout = _build_layout(schema, models, categories)
    state = CodecState(schema, tuple(models), tuple(categories), layout,
                       frequencies=(), dropped_rows=dropped)
    kept_rows = [row for row, k in zip(raw, keep) if k]
    data = encode_rows(kept_rows, state)

    freqs = []
    for block in layout.blocks:
        onehot = data[:, block.onehot_offset:block.onehot_offset + block.modes]
        freqs.append(tuple(int(c) for c in onehot.sum(axis=0)))
    freqs = tuple(freqs)
    state = replace(state, frequencies=freqs)
    return EncodedTable(layout, data, freqs), state


def encode_rows(raw: list[list[str]], state: CodecState) -> np.ndarray:
    """Encode rows with already-fitted models (no refitting, no dropping)."""
    layout = state.layout
    n = len(raw)
    out = np.zeros((n, layout.row_width))
    for i, col in enumerate(state.schema.columns):
        block = layout.blocks[i]
        cells = [row[i] for row in raw]
        if col.kind == "categorical":
            cats = state.categories[i]
            index = {c: j for j, c in enumerate(cats)}
            try:
                idx = np.array([index[c] for c in cells])
            except KeyError as exc:
                raise DataError(f"column {col.name!r}: unknown category {exc.args[0]!r}") from exc
            out[np.arange(n), block.onehot_offset + idx] = 1.0
            continue
        vals, ok = _parse_numeric_column(cells)
        if not ok.all():
            bad = int(np.argmin(ok))
            raise DataError(f"column {col.name!r}: unparseable numeric cell {cells[bad]!r}")
        if col.kind == "longtail":
            vals = longtail_forward(vals)
        model = state.models[i]
        n_sing = len(model.singular_modes)
        mode = np.full(n, -1, dtype=int)
        for j, s in enumerate(model.singular_modes):
            hit = (np.abs(vals - s) <= SINGULAR_ATOL) & (mode < 0)
            mode[hit] = j
        cont = mode < 0
        if cont.any():
            k = _gaussian_mode_index(vals[cont], model)
            mode[cont] = n_sing + k
            mu = np.asarray(model.means)[k]
            sd = np.asarray(model.stds)[k]
            alpha = np.clip((vals[cont] - mu) / (4.0 * sd), -1.0, 1.0)
            out[np.flatnonzero(cont), block.offset] = alpha
        out[np.arange(n), block.onehot_offset + mode] = 1.0
    return out


def decode_table(encoded: np.ndarray, state: CodecState) -> list[list[str]]:
    """Decode encoded (possibly soft) rows back to a string grid.

    One-hot and beta blocks are hardened by per-block argmax before the
    numeric inverse; long-tail columns get their exact inverse transform.
    """
    data = np.asarray(encoded, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != state.layout.row_width:
        raise ValueError(
            f"decode_table: row width {data.shape[1] if data.ndim == 2 else '?'} "
            f"!= layout width {state.layout.row_width}"
        )
    n = data.shape[0]
    columns: list[list[str]] = []
    for i, col in enumerate(state.schema.columns):
        block = state.layout.blocks[i]
        onehot = data[:, block.onehot_offset:block.onehot_offset + block.modes]
        mode = np.argmax(onehot, axis=1)
        if col.kind == "categorical":
            cats = state.categories[i]
            columns.append([cats[m] for m in mode])
            continue
        model = state.models[i]
        n_sing = len(model.singular_modes)
        alpha = np.clip(data[:, block.offset], -1.0, 1.0)
        vals = np.empty(n)
        sing = mode < n_sing
        if sing.any():
            table = np.asarray(model.singular_modes)
            vals[sing] = table[mode[sing]]
        if (~sing).any():
            k = mode[~sing] - n_sing
            mu = np.asarray(model.means)[k]
            sd = np.asarray(model.stds)[k]
            vals[~sing] = 4.0 * sd * alpha[~sing] + mu
        if col.kind == "longtail":
            cont = ~sing
            vals[cont] = longtail_inverse(vals[cont])
        columns.append([repr(float(v)) for v in vals])
    return [list(row) for row in zip(*columns)]


def _condition_probs(state: CodecState, weighting: str) -> list[np.ndarray]:
    probs = []
    for counts in state.frequencies:
        c = np.asarray(counts, dtype=np.float64)
        w = np.log1p(c) if weighting == "log" else c
        total = w.sum()
        probs.append(w / total if total > 0 else np.full(len(c), 1.0 / len(c)))
    return probs


def sample_conditions(state: CodecState, rng: np.random.Generator, n: int,
                      weighting: str = "log") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw ``n`` condition vectors; returns (vectors, column ids, mode ids).

    Columns are chosen uniformly. Within a column, ``log`` weighting picks
    modes proportional to log(1 + count) (training), ``raw`` proportional
    to the observed count (generation).
    """
    if not state.frequencies or all(sum(f) == 0 for f in state.frequencies):
        raise DataError("cannot sample conditions from an empty frequency table")
    probs = _condition_probs(state, weighting)
    n_cols = len(state.schema.columns)
    cols = rng.integers(0, n_cols, size=n)
    modes = np.empty(n, dtype=int)
    for c in range(n_cols):
        mask = cols == c
        cnt = int(mask.sum())
        if cnt:
            modes[mask] = rng.choice(len(probs[c]), size=cnt, p=probs[c])
    vecs = np.zeros((n, state.layout.cond_width))
    offs = np.array([state.layout.blocks[c].cond_offset for c in cols])
    vecs[np.arange(n), offs + modes] = 1.0
    return vecs, cols, modes


def sample_condition(state: CodecState, rng: np.random.Generator
                     ) -> tuple[np.ndarray, int, int]:
    """Draw one training condition vector; see ``sample_conditions``."""
    vecs, cols, modes = sample_conditions(state, rng, 1)
    return vecs[0], int(cols[0]), int(modes[0])
