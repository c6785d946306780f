"""Conditional GAN training with a sanitized generator boundary gradient.

Three networks share the codec's encoded space: a generator mapping
(noise, condition) to an encoded row, a discriminator scoring
(row, condition) pairs, and an auxiliary classifier predicting the target
column from the remaining blocks. The discriminator and classifier train
on real rows without noise. The generator never does: its loss gradient
is taken with respect to the generated batch, sanitized (clip plus
Gaussian noise), and only then propagated through the generator's own
layers. Every sanitized update with sigma > 0 is charged to the privacy
ledger; the discriminator and classifier steps never touch it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .codec import (
    CodecState,
    EncodedLayout,
    EncodedTable,
    TableSchema,
    decode_table,
    encode_table,
    sample_conditions,
)
from .errors import ConfigError
from .privacy import (
    DEFAULT_DELTA,
    DEFAULT_LAMBDA_GRID,
    PrivacyLedger,
    SanitizerConfig,
    record_update,
    sanitize,
)

__all__ = [
    "Hyper",
    "Models",
    "OutputHead",
    "Checkpoint",
    "Trainer",
    "init_models",
    "fit",
    "sample",
]

ADAM_LR = 2e-4
ADAM_BETA1 = 0.5
ADAM_BETA2 = 0.9


@dataclass(frozen=True)
class Hyper:
    """Run hyperparameters; ``seed`` is mandatory so no run has silent entropy."""

    seed: int
    z_dim: int = 64
    g_hidden: tuple[int, ...] = (256, 256)
    d_hidden: tuple[int, ...] = (256, 256)
    a_hidden: tuple[int, ...] = (128, 128, 128, 128)
    batch: int = 64
    steps: int = 5000
    sigma: float = 0.0
    clip: float = 1.0
    delta: float = DEFAULT_DELTA
    lambda_grid: tuple[int, ...] = DEFAULT_LAMBDA_GRID
    aux_weight: float = 1.0
    attention: bool = True
    token_width: int = 16
    max_modes: int = 10
    lr: float = ADAM_LR

    def __post_init__(self):
        if self.batch < 2:
            raise ConfigError(f"batch must be >= 2, got {self.batch}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.z_dim < 1:
            raise ConfigError(f"z_dim must be >= 1, got {self.z_dim}")
        if len(self.a_hidden) != 4:
            raise ConfigError("the auxiliary classifier uses exactly 4 hidden stages")
        if self.aux_weight < 0:
            raise ConfigError("aux_weight must be >= 0")

    def sanitizer(self) -> SanitizerConfig:
        return SanitizerConfig(self.clip, self.batch, self.sigma)


class OutputHead:
    """Generator output activation: tanh on alpha slots, softmax per one-hot block."""

    def __init__(self, layout: EncodedLayout):
        self.alpha_cols = np.array(
            [b.offset for b in layout.blocks if b.kind != "categorical"], dtype=int
        )
        groups = [(b.onehot_offset, b.onehot_offset + b.modes) for b in layout.blocks]
        self.softmax = tn.softmax_group(groups)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        y, sm_cache = tn.forward(self.softmax, x)
        t = None
        if self.alpha_cols.size:
            t = np.tanh(x[:, self.alpha_cols])
            y[:, self.alpha_cols] = t
        return y, (sm_cache, t)

    def backward(self, cache: tuple, dy: np.ndarray) -> np.ndarray:
        sm_cache, t = cache
        dx, _ = tn.backward(self.softmax, sm_cache, dy)
        if t is not None:
            dx[:, self.alpha_cols] = dy[:, self.alpha_cols] * (1.0 - t * t)
        return dx


@dataclass
class Models:
    generator: list[tn.Layer]
    g_head: OutputHead
    discriminator: list[tn.Layer]
    classifier: list[tn.Layer] | None
    g_opt: tn.OptimState
    d_opt: tn.OptimState
    a_opt: tn.OptimState | None


def stack_forward(layers, x):
    caches = []
    for layer in layers:
        x, c = tn.forward(layer, x)
        caches.append(c)
    return x, caches


def stack_backward(layers, caches, dy):
    grads = [None] * len(layers)
    for i in reversed(range(len(layers))):
        dy, grads[i] = tn.backward(layers[i], caches[i], dy)
    return dy, grads


def stack_input_grad(layers, caches, dy):
    """Backward pass that only carries d_input (parameter grads discarded)."""
    for i in reversed(range(len(layers))):
        if layers[i].kind == "affine":
            # skip the dW/db products; only dx = dy @ W.T is needed
            dy = dy @ layers[i].params[0].T
        else:
            dy, _ = tn.backward(layers[i], caches[i], dy)
    return dy


def params_of(layers) -> list[np.ndarray]:
    out = []
    for layer in layers:
        out.extend(layer.params)
    return out


def _flatten_grads(grads) -> list[np.ndarray]:
    out = []
    for g in grads:
        out.extend(g)
    return out


def _target_block(layout: EncodedLayout):
    for b in layout.blocks:
        if b.is_target:
            return b
    return None


def init_models(layout: EncodedLayout, hyper: Hyper, rng: np.random.Generator) -> Models:
    """Build generator/discriminator/classifier stacks for the layout."""
    row_w = layout.row_width
    cond_w = layout.cond_width
    n_cols = len(layout.blocks)

    g: list[tn.Layer] = []
    w = hyper.z_dim + cond_w
    for h in hyper.g_hidden:
        g += [tn.affine(w, h, rng), tn.layer_norm(h), tn.leaky_relu()]
        w = h
    if hyper.attention:
        token_total = n_cols * hyper.token_width
        g += [tn.affine(w, token_total, rng), tn.self_attention(hyper.token_width, rng)]
        w = token_total
    g.append(tn.affine(w, row_w, rng))

    d: list[tn.Layer] = []
    w = row_w + cond_w
    for h in hyper.d_hidden:
        d += [tn.affine(w, h, rng), tn.layer_norm(h), tn.leaky_relu()]
        w = h
    d += [tn.affine(w, 1, rng), tn.sigmoid_layer()]

    a = None
    a_opt = None
    if hyper.aux_weight > 0:
        target = _target_block(layout)
        if target is None:
            raise ConfigError("aux_weight > 0 requires a target column (set aux_weight 0 to disable)")
        if target.kind != "categorical":
            raise ConfigError("the auxiliary classifier needs a categorical target column")
        a = []
        w = row_w - target.width
        for h in hyper.a_hidden:
            a += [tn.affine(w, h, rng), tn.leaky_relu()]
            w = h
        a.append(tn.affine(w, target.modes, rng))
        a.append(tn.softmax_group([(0, target.modes)]))
        a_opt = tn.optim_state(params_of(a), hyper.lr, ADAM_BETA1, ADAM_BETA2)

    return Models(
        generator=g,
        g_head=OutputHead(layout),
        discriminator=d,
        classifier=a,
        g_opt=tn.optim_state(params_of(g), hyper.lr, ADAM_BETA1, ADAM_BETA2),
        d_opt=tn.optim_state(params_of(d), hyper.lr, ADAM_BETA1, ADAM_BETA2),
        a_opt=a_opt,
    )


@dataclass
class Checkpoint:
    """Self-contained result of a run: enough to sample without the data."""

    hyper: Hyper
    codec: CodecState
    ledger: PrivacyLedger
    models: Models
    step: int = 0


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


class Trainer:
    """Owns one training run: models, ledger, rng and the encoded table."""

    def __init__(self, table: EncodedTable, state: CodecState, hyper: Hyper,
                 rng: np.random.Generator | None = None, models: Models | None = None):
        self.hyper = hyper
        self.state = state
        self.data = table.data
        self.rng = rng if rng is not None else np.random.default_rng(hyper.seed)
        self.models = models if models is not None else init_models(state.layout, hyper, self.rng)
        self.ledger = PrivacyLedger(hyper.sanitizer(), 0, tuple(hyper.lambda_grid), hyper.delta)
        self.step = 0
        self.last_boundary_norm: float | None = None

        layout = state.layout
        self.row_w = layout.row_width
        target = _target_block(layout)
        self.target_col = None
        self.nontarget_cols = np.arange(self.row_w)
        self.aux_enabled = hyper.aux_weight > 0 and self.models.classifier is not None
        if target is not None:
            self.target_col = next(
                i for i, b in enumerate(layout.blocks) if b.is_target
            )
            self.target_onehot = target.onehot_offset
            self.target_modes = target.modes
            self.nontarget_cols = np.concatenate([
                np.arange(target.offset),
                np.arange(target.offset + target.width, self.row_w),
            ])
        # row ids per (column, mode), for condition-matched real batches
        self._match: dict[tuple[int, int], np.ndarray] = {}
        for c, block in enumerate(layout.blocks):
            onehot = self.data[:, block.onehot_offset:block.onehot_offset + block.modes]
            modes = np.argmax(onehot, axis=1)
            for m in range(block.modes):
                self._match[(c, m)] = np.flatnonzero(modes == m)

    # ------------------------------------------------------------------ batches
    def _draw_conditions(self, n: int):
        return sample_conditions(self.state, self.rng, n, "log")

    def _matched_real(self, cols: np.ndarray, modes: np.ndarray) -> np.ndarray:
        rows = np.empty(len(cols), dtype=int)
        for i, (c, m) in enumerate(zip(cols, modes)):
            ids = self._match[(int(c), int(m))]
            if ids.size:
                rows[i] = ids[self.rng.integers(ids.size)]
            else:
                rows[i] = self.rng.integers(self.data.shape[0])
        return self.data[rows]

    def _generate(self, cond: np.ndarray, want_caches: bool = False):
        z = self.rng.standard_normal((cond.shape[0], self.hyper.z_dim))
        logits, caches = stack_forward(self.models.generator, np.hstack([z, cond]))
        rows, head_cache = self.models.g_head.forward(logits)
        if want_caches:
            return rows, caches, head_cache
        return rows

    # ------------------------------------------------------------------- steps
    def disc_step(self, real_rows: np.ndarray, cond_rows: np.ndarray) -> float:
        """One cross-entropy ascent step on the discriminator. No ledger charge."""
        if real_rows.shape[0] != cond_rows.shape[0]:
            raise ValueError(
                f"batch size mismatch: {real_rows.shape[0]} real vs {cond_rows.shape[0]} conditions"
            )
        b = real_rows.shape[0]
        fake = self._generate(cond_rows)
        d = self.models.discriminator
        x = np.vstack([np.hstack([real_rows, cond_rows]), np.hstack([fake, cond_rows])])
        logit, caches = stack_forward(d[:-1], x)
        prob, _ = tn.forward(d[-1], logit)
        loss = float(np.mean(_softplus(-logit[:b])) + np.mean(_softplus(logit[b:])))
        # seed the backward pass at the logit: exact gradient of the fused
        # sigmoid + cross-entropy, stable for saturated outputs
        seed = np.empty_like(prob)
        seed[:b] = (prob[:b] - 1.0) / b
        seed[b:] = prob[b:] / b
        _, grads = stack_backward(d[:-1], caches, seed)
        tn.adam_update(params_of(d), _flatten_grads(grads), self.models.d_opt)
        return loss

    def aux_step(self, real_rows: np.ndarray) -> float:
        """One cross-entropy step on the classifier over real rows."""
        if not self.aux_enabled:
            raise ConfigError("auxiliary classifier is disabled for this run")
        b = real_rows.shape[0]
        feats = real_rows[:, self.nontarget_cols]
        labels = np.argmax(
            real_rows[:, self.target_onehot:self.target_onehot + self.target_modes], axis=1
        )
        a = self.models.classifier
        logits, caches = stack_forward(a[:-1], feats)
        prob, _ = tn.forward(a[-1], logits)
        lse = np.log(np.sum(np.exp(logits - logits.max(axis=1, keepdims=True)), axis=1))
        lse += logits.max(axis=1)
        loss = float(np.mean(lse - logits[np.arange(b), labels]))
        seed = prob.copy()
        seed[np.arange(b), labels] -= 1.0
        seed /= b
        _, grads = stack_backward(a[:-1], caches, seed)
        tn.adam_update(params_of(a), _flatten_grads(grads), self.models.a_opt)
        return loss

    def gen_step(self) -> float:
        """One generator update through the sanitized boundary gradient.

        The non-saturating adversarial loss and the classifier's condition
        loss are both backpropagated only down to the generated batch;
        that single boundary gradient is clipped and noised, then pushed
        through the generator's own layers. Charges the ledger when
        sigma > 0.
        """
        hyper = self.hyper
        b = hyper.batch
        cond, cols, modes = self._draw_conditions(b)
        rows, g_caches, head_cache = self._generate(cond, want_caches=True)

        d = self.models.discriminator
        logit, d_caches = stack_forward(d[:-1], np.hstack([rows, cond]))
        prob, _ = tn.forward(d[-1], logit)
        loss = float(np.mean(_softplus(-logit)))
        seed = (prob - 1.0) / b
        d_input_grad = stack_input_grad(d[:-1], d_caches, seed)
        boundary = d_input_grad[:, :self.row_w]

        if self.aux_enabled:
            mask = cols == self.target_col
            m = int(mask.sum())
            if m:
                a = self.models.classifier
                feats = rows[:, self.nontarget_cols]
                logits, a_caches = stack_forward(a[:-1], feats)
                pa, _ = tn.forward(a[-1], logits)
                labels = modes[mask]
                lse = np.log(np.sum(np.exp(logits - logits.max(axis=1, keepdims=True)), axis=1))
                lse += logits.max(axis=1)
                aux_loss = float(np.mean(lse[mask] - logits[np.flatnonzero(mask), labels]))
                seed_a = np.zeros_like(pa)
                seed_a[mask] = pa[mask]
                seed_a[np.flatnonzero(mask), labels] -= 1.0
                seed_a /= m
                dfeats = stack_input_grad(a[:-1], a_caches, seed_a)
                aux_grad = np.zeros_like(rows)
                aux_grad[:, self.nontarget_cols] = dfeats
                boundary = boundary + hyper.aux_weight * aux_grad
                loss += hyper.aux_weight * aux_loss

        clean = sanitize(boundary.reshape(-1), self.ledger.config, self.rng)
        clean = clean.reshape(boundary.shape)
        self.last_boundary_norm = float(np.linalg.norm(clean))

        d_logits = self.models.g_head.backward(head_cache, clean)
        _, g_grads = stack_backward(self.models.generator, g_caches, d_logits)
        tn.adam_update(params_of(self.models.generator), _flatten_grads(g_grads),
                       self.models.g_opt)
        if hyper.sigma > 0:
            record_update(self.ledger)
        return loss

    # --------------------------------------------------------------------- run
    def run(self) -> Checkpoint:
        """The full loop: one disc, one classifier and one generator step per iteration."""
        b = self.hyper.batch
        for _ in range(self.hyper.steps):
            cond, cols, modes = self._draw_conditions(b)
            real = self._matched_real(cols, modes)
            self.disc_step(real, cond)
            if self.aux_enabled:
                ids = self.rng.integers(self.data.shape[0], size=b)
                self.aux_step(self.data[ids])
            self.gen_step()
            self.step += 1
        return Checkpoint(self.hyper, self.state, self.ledger, self.models, self.step)


def fit(raw: list[list[str]], schema: TableSchema, hyper: Hyper) -> Checkpoint:
    """Encode the table, train for ``hyper.steps`` iterations, return a checkpoint."""
    table, state = encode_table(raw, schema, hyper.max_modes, hyper.seed)
    trainer = Trainer(table, state, hyper)
    return trainer.run()


def sample(checkpoint: Checkpoint, n: int, rng: np.random.Generator) -> list[list[str]]:
    """Draw ``n`` synthetic rows from a checkpoint; never touches training data.

    Conditions are drawn at the raw frequencies recorded by the codec, so
    the generated marginal follows the learned conditionals at their
    observed rates.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    state = checkpoint.codec
    hyper = checkpoint.hyper
    cond, _, _ = sample_conditions(state, rng, n, "raw")
    z = rng.standard_normal((n, hyper.z_dim))
    logits, _ = stack_forward(checkpoint.models.generator, np.hstack([z, cond]))
    rows, _ = checkpoint.models.g_head.forward(logits)
    return decode_table(rows, state)
