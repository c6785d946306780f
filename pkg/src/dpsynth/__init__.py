"""Differentially private tabular data synthesis.

A conditional GAN learns an encoded view of a table (per-column Gaussian
mixture normalization plus one-hot blocks); the only gradient that ever
reaches the generator is clipped and noised at the discriminator boundary,
and a Renyi-DP ledger converts the update count into an (epsilon, delta)
guarantee. Ships with an evaluation suite (Wasserstein / Jensen-Shannon /
association-difference fidelity, train-on-synthetic utility, nearest
neighbor membership inference) and a CLI.
"""

__version__ = "0.1.0"

from .codec import (
    CodecState,
    ColumnSpec,
    EncodedTable,
    TableSchema,
    VgmModel,
    decode_table,
    decode_value,
    encode_rows,
    encode_table,
    encode_value,
    fit_vgm,
    parse_schema,
    sample_condition,
    sample_conditions,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, IntegrityError, NonPrivateRunError
from .evaluate import (
    EvalReport,
    MiaResult,
    diff_corr,
    evaluate_tables,
    jsd,
    mia,
    tstr_classify,
    tstr_regress,
    wd_1d,
)
from .gan import Checkpoint, Hyper, Models, Trainer, fit, init_models, sample
from .privacy import (
    PrivacyLedger,
    SanitizerConfig,
    calibrate_sigma,
    epsilon,
    record_update,
    sanitize,
)

__all__ = [
    "__version__",
    "ColumnSpec",
    "TableSchema",
    "VgmModel",
    "CodecState",
    "EncodedTable",
    "parse_schema",
    "fit_vgm",
    "encode_value",
    "decode_value",
    "encode_table",
    "encode_rows",
    "decode_table",
    "sample_condition",
    "sample_conditions",
    "SanitizerConfig",
    "PrivacyLedger",
    "sanitize",
    "record_update",
    "epsilon",
    "calibrate_sigma",
    "Hyper",
    "Models",
    "Trainer",
    "Checkpoint",
    "init_models",
    "fit",
    "sample",
    "save_checkpoint",
    "load_checkpoint",
    "EvalReport",
    "MiaResult",
    "wd_1d",
    "jsd",
    "diff_corr",
    "tstr_classify",
    "tstr_regress",
    "mia",
    "evaluate_tables",
    "ConfigError",
    "DataError",
    "IntegrityError",
    "NonPrivateRunError",
]
