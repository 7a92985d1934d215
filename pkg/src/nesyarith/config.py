"""Run configuration: one JSON document, schema-validated, with dotted
``--set`` overrides and named deterministic RNG streams.

Every command consumes the same five sections (data, model, train, eval,
llm).  Unknown keys are rejected outright so a typo cannot silently fall
back to a default.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from typing import Any

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Field:
    default: Any
    kind: str  # int | float | bool | str | int_list
    choices: tuple | None = None


_SCHEMA: dict[str, dict[str, Field]] = {
    "data": {
        "seed": Field(0, "int"),
        "max_operand_digits": Field(2, "int"),
        "max_result_digits": Field(2, "int"),
        "ratios": Field([80, 10, 10], "int_list"),
        "pool_size": Field(10_000, "int"),
        "pool_fraction": Field(0.25, "float"),
        "dump_rows": Field(1000, "int"),
        "dump_nesting": Field([1, 2], "int_list"),
        "dump_task": Field("SubExpr", "str", ("SubExpr", "EndToEnd")),
    },
    "model": {
        "d_model": Field(128, "int"),
        "n_heads": Field(4, "int"),
        "d_ff": Field(256, "int"),
        "vocab_size": Field(19, "int"),
        "max_positions": Field(150, "int"),
        "pe_mode": Field("label", "str", ("label", "sinusoidal")),
        "max_decode_len": Field(20, "int"),
        "dropout": Field(0.0, "float"),
        "scale_embedding": Field(True, "bool"),
    },
    "train": {
        "steps": Field(20_000, "int"),
        "lr": Field(1e-4, "float"),
        "batch_size": Field(128, "int"),
        "seed": Field(0, "int"),
        "checkpoint_path": Field("", "str"),
        "checkpoint_every": Field(1000, "int"),
        "log_every": Field(100, "int"),
        "val_every": Field(1000, "int"),
        "val_batch_size": Field(128, "int"),
        "teacher_forcing": Field(False, "bool"),
    },
    "eval": {
        "seed": Field(0, "int"),
        "nesting_list": Field(list(range(1, 11)), "int_list"),
        "n_batches": Field(10, "int"),
        "batch_size": Field(100, "int"),
        "n_outputs": Field(100, "int"),
        "combiner_variant": Field("default", "str", ("default", "alt")),
        "solver_multi": Field(False, "bool"),
        "checkpoint": Field("", "str"),
        "dump_traces": Field(False, "bool"),
        "dump_sequences": Field(False, "bool"),
        "oracle_p_malformed": Field(0.0, "float"),
        "oracle_p_wrong_result": Field(0.0, "float"),
        "oracle_p_wrong_target": Field(0.0, "float"),
        "oracle_noise_range": Field(3, "int"),
    },
    "llm": {
        "model": Field("text-davinci-003", "str"),
        "max_tokens": Field(8, "int"),
        "temperature": Field(0.0, "float"),
        "batch_size": Field(10, "int"),
        "n_batches": Field(10, "int"),
        "timeout": Field(30.0, "float"),
        "max_attempts": Field(3, "int"),
    },
}

# Named substreams hanging off a root seed; fixed indices keep every
# component reproducible in isolation.
_STREAMS = {"data": 0, "model-init": 1, "label-pe": 2, "sampling": 3, "oracle": 4}


def stream_rng(root_seed: int, name: str, extra: int | None = None) -> np.random.Generator:
    key = (_STREAMS[name],) if extra is None else (_STREAMS[name], extra)
    return np.random.default_rng(np.random.SeedSequence(entropy=root_seed, spawn_key=key))


def default_config() -> dict:
    return {
        section: {key: copy.deepcopy(f.default) for key, f in fields.items()}
        for section, fields in _SCHEMA.items()
    }


def _check_value(section: str, key: str, f: Field, value: Any) -> None:
    where = f"{section}.{key}"
    if f.kind == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif f.kind == "float":
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif f.kind == "bool":
        ok = isinstance(value, bool)
    elif f.kind == "str":
        ok = isinstance(value, str)
    elif f.kind == "int_list":
        ok = isinstance(value, list) and all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        )
    else:  # pragma: no cover - schema bug
        raise AssertionError(f.kind)
    if not ok:
        raise ConfigError(f"{where} must be {f.kind}, got {value!r}")
    if f.choices is not None and value not in f.choices:
        raise ConfigError(f"{where} must be one of {f.choices}, got {value!r}")


def validate_config(cfg: dict) -> dict:
    """Merge user values over defaults; reject unknown keys and bad types."""
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    merged = default_config()
    for section, body in cfg.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be an object")
        for key, value in body.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            _check_value(section, key, _SCHEMA[section][key], value)
            merged[section][key] = value
    ratios = merged["data"]["ratios"]
    if len(ratios) != 3 or sum(ratios) != 100 or any(r < 0 for r in ratios):
        raise ConfigError(f"data.ratios must be three non-negative ints summing to 100")
    return merged


def apply_override(cfg: dict, dotted: str, raw_value: str) -> None:
    """Apply a ``--set section.key=value`` override; value parsed as JSON."""
    parts = dotted.split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key must look like section.key, got {dotted!r}")
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    section, key = parts
    cfg.setdefault(section, {})[key] = value


def load_config(path: str | None, overrides: list[str] = ()) -> dict:
    """Read, override, validate.  ``path=None`` starts from pure defaults."""
    if path is None:
        cfg: dict = {}
    else:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                cfg = json.load(fh)
        except OSError as err:
            raise ConfigError(f"cannot read config {path!r}: {err}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"config {path!r} is not valid JSON: {err}") from err
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        apply_override(cfg, dotted, raw)
    return validate_config(cfg)


def config_hash(cfg: dict) -> str:
    import hashlib

    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:8]
