"""Deterministic CSV/JSON writers and schema validation of JSON summaries."""

from __future__ import annotations

import json
import math
from importlib import resources

import jsonschema
import numpy as np


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path, header, rows):
    """CSV with 17 significant digits and ``\\n`` line endings."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def load_schema(subcommand: str) -> dict:
    text = resources.files("regensim").joinpath("schemas", f"{subcommand}.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_summary(subcommand: str, summary: dict) -> dict:
    """Round-trip ``summary`` through JSON and validate it against the shipped schema."""
    data = json.loads(dumps(summary))
    jsonschema.validate(data, load_schema(subcommand))
    return data


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))
