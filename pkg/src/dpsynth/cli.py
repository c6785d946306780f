"""Command-line surface: fit, sample, evaluate, attack, accountant, encode.

All state flows through a single JSON config document (``--config``);
no environment variables are honored. Every run is deterministic from
the config seed, including privacy noise, unless ``--os-entropy``
replaces the seed with fresh OS entropy. Exit codes: 0 success,
2 config error, 3 data error, 4 checkpoint integrity error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import TableSchema, parse_schema, encode_table, encode_rows
from .errors import ConfigError, DataError, IntegrityError
from .evaluate import evaluate_tables, mia
from .gan import Hyper, fit, sample
from .privacy import (
    DEFAULT_DELTA,
    DEFAULT_LAMBDA_GRID,
    PrivacyLedger,
    SanitizerConfig,
    calibrate_sigma,
    epsilon,
)

__all__ = ["main", "entrypoint", "RunConfig", "load_config"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTEGRITY = 4

_TOP_KEYS = {"seed", "io", "schema", "hyper", "privacy"}
_IO_KEYS = {"input", "checkpoint", "synthetic", "report", "members", "nonmembers"}
_HYPER_KEYS = {"z_dim", "g_hidden", "d_hidden", "a_hidden", "batch", "steps",
               "aux_weight", "attention", "token_width", "max_modes"}
_PRIVACY_KEYS = {"sigma", "target_epsilon", "clip", "delta", "lambda_grid"}


def _fmt6(x: float) -> float:
    """Round to 6 significant digits for report output."""
    return float(f"{x:.6g}")


def _round_floats(obj):
    if isinstance(obj, float):
        return _fmt6(obj)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_round_floats(v) for v in obj]
    return obj


class RunConfig:
    """Validated view over the run's JSON config document."""

    def __init__(self, doc: dict, path: str):
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path!r} must be a JSON object")
        unknown = set(doc) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "seed" not in doc:
            raise ConfigError("config must set an explicit seed")
        if not isinstance(doc["seed"], int):
            raise ConfigError(f"seed must be an integer, got {doc['seed']!r}")
        self.seed: int = doc["seed"]

        io = doc.get("io", {})
        if not isinstance(io, dict):
            raise ConfigError("io section must be an object")
        unknown = set(io) - _IO_KEYS
        if unknown:
            raise ConfigError(f"unknown io keys {sorted(unknown)}")
        for key, value in io.items():
            if not isinstance(value, str) or not value:
                raise ConfigError(f"io.{key} must be a non-empty path")
        self.io: dict[str, str] = dict(io)

        self.schema: TableSchema | None = None
        if "schema" in doc:
            self.schema = parse_schema(json.dumps(doc["schema"]))

        hyper = doc.get("hyper", {})
        if not isinstance(hyper, dict):
            raise ConfigError("hyper section must be an object")
        unknown = set(hyper) - _HYPER_KEYS
        if unknown:
            raise ConfigError(f"unknown hyper keys {sorted(unknown)}")
        self.hyper_doc = dict(hyper)

        privacy = doc.get("privacy", {})
        if not isinstance(privacy, dict):
            raise ConfigError("privacy section must be an object")
        unknown = set(privacy) - _PRIVACY_KEYS
        if unknown:
            raise ConfigError(f"unknown privacy keys {sorted(unknown)}")
        if "sigma" in privacy and "target_epsilon" in privacy:
            raise ConfigError("provide exactly one of privacy.sigma / privacy.target_epsilon")
        self.privacy_doc = dict(privacy)

    # ------------------------------------------------------------------ pieces
    def path(self, key: str, needed_by: str) -> str:
        if key not in self.io:
            raise ConfigError(f"{needed_by} requires io.{key} in the config")
        return self.io[key]

    def need_schema(self) -> TableSchema:
        if self.schema is None:
            raise ConfigError("config is missing the schema section")
        return self.schema

    def _clip(self) -> float:
        raw = self.privacy_doc.get("clip", 1.0)
        if isinstance(raw, str):
            if raw.lower() in ("inf", "infinity"):
                return float("inf")
            raise ConfigError(f"privacy.clip must be a number or 'inf', got {raw!r}")
        return float(raw)

    def require_privacy_choice(self) -> None:
        """Training/accounting must explicitly pick sigma or target_epsilon."""
        if ("sigma" in self.privacy_doc) == ("target_epsilon" in self.privacy_doc):
            raise ConfigError(
                "provide exactly one of privacy.sigma / privacy.target_epsilon "
                "(sigma 0 declares an explicitly non-private run)"
            )

    def resolve_sigma(self, steps: int, batch: int) -> float:
        """Sigma directly from config, or calibrated from target_epsilon."""
        if "target_epsilon" in self.privacy_doc:
            return calibrate_sigma(
                float(self.privacy_doc["target_epsilon"]),
                float(self.privacy_doc.get("delta", DEFAULT_DELTA)),
                steps,
                batch,
                tuple(self.privacy_doc.get("lambda_grid", DEFAULT_LAMBDA_GRID)),
            )
        return float(self.privacy_doc.get("sigma", 0.0))

    def build_hyper(self, seed: int) -> Hyper:
        h = self.hyper_doc
        steps = int(h.get("steps", 5000))
        batch = int(h.get("batch", 64))
        kwargs = dict(
            seed=seed,
            steps=steps,
            batch=batch,
            sigma=self.resolve_sigma(steps, batch),
            clip=self._clip(),
            delta=float(self.privacy_doc.get("delta", DEFAULT_DELTA)),
            lambda_grid=tuple(
                int(x) for x in self.privacy_doc.get("lambda_grid", DEFAULT_LAMBDA_GRID)
            ),
        )
        for key in ("z_dim", "batch", "steps", "token_width", "max_modes"):
            if key in h:
                kwargs[key] = int(h[key])
        for key in ("g_hidden", "d_hidden", "a_hidden"):
            if key in h:
                kwargs[key] = tuple(int(x) for x in h[key])
        if "aux_weight" in h:
            kwargs["aux_weight"] = float(h["aux_weight"])
        if "attention" in h:
            kwargs["attention"] = bool(h["attention"])
        return Hyper(**kwargs)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}")
    return RunConfig(doc, path)


# ------------------------------------------------------------------------ csv

def read_csv(path: str, schema: TableSchema) -> list[list[str]]:
    """Read a headered CSV and project it onto the schema's columns in order."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read CSV {path!r}: {exc}") from exc
    if not rows:
        raise DataError(f"CSV {path!r} is empty (no header row)")
    header, body = rows[0], rows[1:]
    positions = []
    for col in schema.columns:
        if col.name not in header:
            raise DataError(f"CSV {path!r} is missing schema column {col.name!r}")
        positions.append(header.index(col.name))
    out = []
    for r, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"CSV {path!r} row {r + 1} has {len(row)} cells, header has {len(header)}")
        out.append([row[p] for p in positions])
    return out


def write_csv(path: str, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _resolve_seed(config_seed: int, args) -> int:
    if getattr(args, "os_entropy", False):
        return int.from_bytes(os.urandom(8), "little")
    if getattr(args, "seed_override", None) is not None:
        return args.seed_override
    return config_seed


def _epsilon_text(ledger: PrivacyLedger) -> str:
    if ledger.config.sigma == 0:
        return "NON-PRIVATE"
    eps, order = epsilon(ledger)
    return f"{eps:.6g} (lambda*={order})"


# ----------------------------------------------------------------- subcommands

def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    cfg.require_privacy_choice()
    seed = _resolve_seed(cfg.seed, args)
    schema = cfg.need_schema()
    hyper = cfg.build_hyper(seed)
    raw = read_csv(cfg.path("input", "fit"), schema)
    started = time.perf_counter()
    ckpt = fit(raw, schema, hyper)
    elapsed = time.perf_counter() - started
    out_path = args.checkpoint or cfg.path("checkpoint", "fit")
    save_checkpoint(out_path, ckpt)
    print(f"checkpoint: {out_path}")
    print(f"steps (T): {ckpt.ledger.updates if hyper.sigma > 0 else ckpt.step}")
    print(f"sigma: {hyper.sigma:.6g}")
    print(f"epsilon(delta={hyper.delta:g}): {_epsilon_text(ckpt.ledger)}")
    print(f"dropped rows: {ckpt.codec.dropped_rows}")
    print(f"wall time: {elapsed:.1f}s")
    return EXIT_OK


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    seed = ckpt.hyper.seed if args.seed_override is None else args.seed_override
    if args.os_entropy:
        seed = int.from_bytes(os.urandom(8), "little")
    rng = np.random.default_rng(seed)
    rows = sample(ckpt, args.n, rng)
    header = [c.name for c in ckpt.codec.schema.columns]
    write_csv(args.out, header, rows)
    print(f"wrote {args.n} rows to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(cfg.seed, args)
    schema = cfg.need_schema()
    real = read_csv(cfg.path("input", "evaluate"), schema)
    synth = read_csv(cfg.path("synthetic", "evaluate"), schema)
    started = time.perf_counter()
    report = evaluate_tables(real, synth, schema, seed)
    doc = {
        "version": __version__,
        "wd": report.wd,
        "jsd": report.jsd,
        "diff_cor": report.diff_cor,
        "utility": report.utility,
        "mia_accuracy": report.mia_accuracy,
        "metadata": report.metadata,
        "privacy": None,  # filled from the checkpoint when one is given
    }
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        doc["privacy"] = {
            "epsilon": _epsilon_text(ckpt.ledger),
            "delta": ckpt.ledger.delta,
            "T": ckpt.ledger.updates,
        }
        doc["metadata"]["dropped_training_rows"] = ckpt.codec.dropped_rows
    doc["wall_time_s"] = time.perf_counter() - started
    doc = _round_floats(doc)
    text = json.dumps(doc, indent=2)
    out_path = args.out or cfg.io.get("report")
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(cfg.seed, args)
    schema = cfg.need_schema()
    members = read_csv(cfg.path("members", "attack"), schema)
    nonmembers = read_csv(cfg.path("nonmembers", "attack"), schema)
    if len(members) != len(nonmembers):
        raise DataError(
            f"attack needs balanced sets, got {len(members)} members vs "
            f"{len(nonmembers)} nonmembers"
        )
    rng = np.random.default_rng(seed)
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        state = ckpt.codec
        if "synthetic" in cfg.io:
            synth = read_csv(cfg.io["synthetic"], schema)
        else:
            synth = sample(ckpt, max(10 * len(members), 1000), rng)
    else:
        synth = read_csv(cfg.path("synthetic", "attack"), schema)
        # no checkpoint codec available: fit one on the combined records
        combined = members + nonmembers + synth
        _, state = encode_table(combined, schema, seed=seed)
    result = mia(
        encode_rows(members, state),
        encode_rows(nonmembers, state),
        encode_rows(synth, state),
    )
    print(f"mia accuracy: {result.accuracy:.6g}")
    print(f"threshold: {result.threshold:.6g}")
    return EXIT_OK


def cmd_accountant(args) -> int:
    cfg = load_config(args.config)
    cfg.require_privacy_choice()
    h = cfg.hyper_doc
    steps = int(h.get("steps", 5000))
    batch = int(h.get("batch", 64))
    delta = float(cfg.privacy_doc.get("delta", DEFAULT_DELTA))
    grid = tuple(int(x) for x in cfg.privacy_doc.get("lambda_grid", DEFAULT_LAMBDA_GRID))
    if "target_epsilon" in cfg.privacy_doc:
        target = float(cfg.privacy_doc["target_epsilon"])
        sigma = calibrate_sigma(target, delta, steps, batch, grid)
        ledger = PrivacyLedger(SanitizerConfig(cfg._clip(), batch, sigma), steps, grid, delta)
        eps, order = epsilon(ledger)
        print(f"calibrated sigma: {sigma:.6g}")
        print(f"epsilon(delta={delta:g}): {eps:.6g} (lambda*={order}) <= target {target:.6g}")
        return EXIT_OK
    sigma = float(cfg.privacy_doc.get("sigma", 0.0))
    if sigma == 0:
        print("NON-PRIVATE (sigma = 0; no epsilon applies)")
        return EXIT_OK
    ledger = PrivacyLedger(SanitizerConfig(cfg._clip(), batch, sigma), steps, grid, delta)
    eps, order = epsilon(ledger)
    print(f"T: {steps}")
    print(f"epsilon(delta={delta:g}): {eps:.6g}")
    print(f"lambda*: {order}")
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(cfg.seed, args)
    schema = cfg.need_schema()
    raw = read_csv(cfg.path("input", "encode"), schema)
    max_modes = int(cfg.hyper_doc.get("max_modes", 10))
    table, state = encode_table(raw, schema, max_modes, seed)
    header = []
    for block in state.layout.blocks:
        if block.kind != "categorical":
            header.append(f"{block.name}:alpha")
        labels = (
            state.categories[state.schema.column_index(block.name)]
            if block.kind == "categorical"
            else [f"mode{m}" for m in range(block.modes)]
        )
        header.extend(f"{block.name}:{label}" for label in labels)
    rows = [[f"{v:.17g}" for v in row] for row in table.data]
    write_csv(args.out, header, rows)
    print(f"encoded {table.data.shape[0]} rows x {table.data.shape[1]} columns to {args.out}")
    print(f"dropped rows: {state.dropped_rows}")
    return EXIT_OK


# ----------------------------------------------------------------------- main

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpsynth",
        description="Differentially private tabular data synthesis",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, checkpoint=False):
        if config:
            p.add_argument("--config", required=True, help="run config JSON")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint file")
        p.add_argument("--seed-override", type=int, default=None)
        p.add_argument("--os-entropy", action="store_true",
                       help="seed from OS entropy (non-reproducible)")

    p = sub.add_parser("fit", help="train a generator and write a checkpoint")
    common(p, checkpoint=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sample", help="draw synthetic rows from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed-override", type=int, default=None)
    p.add_argument("--os-entropy", action="store_true")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="fidelity/utility report for a synthetic table")
    common(p, checkpoint=True)
    p.add_argument("--out", help="report JSON path (defaults to io.report)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("attack", help="nearest-neighbor membership inference attack")
    common(p, checkpoint=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("accountant", help="privacy accounting calculations")
    common(p)
    p.set_defaults(func=cmd_accountant)

    p = sub.add_parser("encode", help="dump the encoded table as CSV (debug)")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint() -> None:
    sys.exit(main())
