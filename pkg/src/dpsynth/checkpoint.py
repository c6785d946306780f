"""Checkpoint container: a versioned JSON document with binary parameter blobs.

Layout of the file (UTF-8 JSON, one object):

    magic    "dpsynth-checkpoint"
    version  1
    step     completed training iterations
    hyper    all run hyperparameters
    ledger   {sigma, clip, batch, updates, lambda_grid, delta}
    codec    schema, per-column mixture parameters, categories,
             frequency table, dropped-row count
    networks {generator | discriminator | classifier:
                 [{kind, config, params: [{rows, cols, data}]}]}

Parameter tensors are stored as base64 of their raw 64-bit little-endian
float bytes, so load(save(x)) reproduces every parameter bit-exactly.
Files are written to a temporary sibling and renamed into place.
"""

from __future__ import annotations

import base64
import json
import os
import tempfile

import numpy as np

from . import tensor as tn
from .codec import (
    CodecState,
    ColumnSpec,
    TableSchema,
    VgmModel,
    _build_layout,
)
from .errors import IntegrityError
from .gan import Checkpoint, Hyper, Models, OutputHead, params_of
from .privacy import PrivacyLedger, SanitizerConfig

__all__ = ["save_checkpoint", "load_checkpoint", "MAGIC", "VERSION"]

MAGIC = "dpsynth-checkpoint"
VERSION = 1


def _encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {
        "rows": int(a.shape[0]),
        "cols": int(a.shape[1]),
        "data": base64.b64encode(a.astype("<f8").tobytes()).decode("ascii"),
    }


def _decode_array(d: dict) -> np.ndarray:
    try:
        rows, cols = int(d["rows"]), int(d["cols"])
        raw = base64.b64decode(d["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"corrupt parameter block: {exc}") from exc
    if len(raw) != rows * cols * 8:
        raise IntegrityError(
            f"parameter block length {len(raw)} != {rows}x{cols} float64"
        )
    return np.frombuffer(raw, dtype="<f8").reshape(rows, cols).astype(np.float64)


def _encode_layers(layers) -> list[dict]:
    out = []
    for layer in layers:
        cfg = {}
        for k, v in layer.config.items():
            cfg[k] = [[int(a), int(b)] for a, b in v] if k == "groups" else v
        out.append({
            "kind": layer.kind,
            "config": cfg,
            "params": [_encode_array(p) for p in layer.params],
        })
    return out


def _decode_layers(doc) -> list[tn.Layer]:
    layers = []
    for item in doc:
        cfg = dict(item.get("config", {}))
        if "groups" in cfg:
            cfg["groups"] = [(int(a), int(b)) for a, b in cfg["groups"]]
        try:
            layer = tn.Layer(item["kind"], [_decode_array(p) for p in item["params"]], cfg)
        except (KeyError, TypeError, ValueError) as exc:
            raise IntegrityError(f"corrupt layer record: {exc}") from exc
        layers.append(layer)
    return layers


def _codec_doc(state: CodecState) -> dict:
    cols = []
    for spec in state.schema.columns:
        cols.append({
            "name": spec.name,
            "kind": spec.kind,
            "singular_values": list(spec.singular_values),
            "categories": list(spec.categories),
            "is_target": spec.is_target,
        })
    models = []
    for m in state.models:
        if m is None:
            models.append(None)
        else:
            models.append({
                "weights": list(m.weights),
                "means": list(m.means),
                "stds": list(m.stds),
                "singular_modes": list(m.singular_modes),
            })
    return {
        "columns": cols,
        "models": models,
        "categories": [list(c) if c is not None else None for c in state.categories],
        "frequencies": [list(f) for f in state.frequencies],
        "dropped_rows": state.dropped_rows,
    }


def _codec_from_doc(doc: dict) -> CodecState:
    try:
        schema = TableSchema(tuple(
            ColumnSpec(
                name=c["name"],
                kind=c["kind"],
                singular_values=tuple(c["singular_values"]),
                categories=tuple(c["categories"]),
                is_target=c["is_target"],
            )
            for c in doc["columns"]
        ))
        models = tuple(
            None if m is None else VgmModel(
                tuple(m["weights"]), tuple(m["means"]), tuple(m["stds"]),
                tuple(m["singular_modes"]),
            )
            for m in doc["models"]
        )
        categories = tuple(
            tuple(c) if c is not None else None for c in doc["categories"]
        )
        frequencies = tuple(tuple(int(x) for x in f) for f in doc["frequencies"])
        dropped = int(doc["dropped_rows"])
    except (KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"corrupt codec record: {exc}") from exc
    layout = _build_layout(schema, models, categories)
    return CodecState(schema, models, categories, layout, frequencies, dropped)


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    """Write the checkpoint atomically (temp file + rename)."""
    hyper = ckpt.hyper
    doc = {
        "magic": MAGIC,
        "version": VERSION,
        "step": ckpt.step,
        "hyper": {
            "seed": hyper.seed,
            "z_dim": hyper.z_dim,
            "g_hidden": list(hyper.g_hidden),
            "d_hidden": list(hyper.d_hidden),
            "a_hidden": list(hyper.a_hidden),
            "batch": hyper.batch,
            "steps": hyper.steps,
            "sigma": hyper.sigma,
            "clip": hyper.clip,
            "delta": hyper.delta,
            "lambda_grid": list(hyper.lambda_grid),
            "aux_weight": hyper.aux_weight,
            "attention": hyper.attention,
            "token_width": hyper.token_width,
            "max_modes": hyper.max_modes,
            "lr": hyper.lr,
        },
        "ledger": {
            "sigma": ckpt.ledger.config.sigma,
            "clip": ckpt.ledger.config.clip,
            "batch": ckpt.ledger.config.batch,
            "updates": ckpt.ledger.updates,
            "lambda_grid": list(ckpt.ledger.lambda_grid),
            "delta": ckpt.ledger.delta,
        },
        "codec": _codec_doc(ckpt.codec),
        "networks": {
            "generator": _encode_layers(ckpt.models.generator),
            "discriminator": _encode_layers(ckpt.models.discriminator),
            "classifier": (
                _encode_layers(ckpt.models.classifier)
                if ckpt.models.classifier is not None else None
            ),
        },
    }
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> Checkpoint:
    """Read a checkpoint; raises IntegrityError on corruption or version skew."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError, OSError) as exc:
        raise IntegrityError(f"unreadable checkpoint {path!r}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("magic") != MAGIC:
        raise IntegrityError(f"{path!r} is not a checkpoint (bad magic)")
    if doc.get("version") != VERSION:
        raise IntegrityError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        h = doc["hyper"]
        hyper = Hyper(
            seed=int(h["seed"]),
            z_dim=int(h["z_dim"]),
            g_hidden=tuple(h["g_hidden"]),
            d_hidden=tuple(h["d_hidden"]),
            a_hidden=tuple(h["a_hidden"]),
            batch=int(h["batch"]),
            steps=int(h["steps"]),
            sigma=float(h["sigma"]),
            clip=float(h["clip"]),
            delta=float(h["delta"]),
            lambda_grid=tuple(int(x) for x in h["lambda_grid"]),
            aux_weight=float(h["aux_weight"]),
            attention=bool(h["attention"]),
            token_width=int(h["token_width"]),
            max_modes=int(h["max_modes"]),
            lr=float(h["lr"]),
        )
        lg = doc["ledger"]
        ledger = PrivacyLedger(
            SanitizerConfig(float(lg["clip"]), int(lg["batch"]), float(lg["sigma"])),
            int(lg["updates"]),
            tuple(int(x) for x in lg["lambda_grid"]),
            float(lg["delta"]),
        )
        codec = _codec_from_doc(doc["codec"])
        nets = doc["networks"]
        generator = _decode_layers(nets["generator"])
        discriminator = _decode_layers(nets["discriminator"])
        classifier = (
            _decode_layers(nets["classifier"]) if nets["classifier"] is not None else None
        )
        step = int(doc["step"])
    except (KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"corrupt checkpoint {path!r}: {exc}") from exc

    if generator and generator[-1].kind == "affine":
        width = generator[-1].params[0].shape[1]
        if width != codec.layout.row_width:
            raise IntegrityError(
                f"generator output width {width} != codec row width {codec.layout.row_width}"
            )
    models = Models(
        generator=generator,
        g_head=OutputHead(codec.layout),
        discriminator=discriminator,
        classifier=classifier,
        g_opt=tn.optim_state(params_of(generator)),
        d_opt=tn.optim_state(params_of(discriminator)),
        a_opt=tn.optim_state(params_of(classifier)) if classifier is not None else None,
    )
    return Checkpoint(hyper, codec, ledger, models, step)
