# stsf_cd/config.py
import json
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import yaml
from jsonschema import Draft202012Validator

from .coercion import coerce_data
from .errors import ConfigValidationError
from .plugins import run_custom_validators

SCHEMA_PATH = Path(__file__).resolve().parent.parent / "schemas" / "stsf-config.schema.json"

PathLike = Union[str, Path]


def load_json(path: PathLike):
    with open(path) as f:
        return json.load(f)


def load_config_file(path: PathLike) -> Dict[str, Any]:
    """Load a key/value tree from YAML or JSON; an empty file is an empty config."""
    path = Path(path)
    if not path.exists():
        raise ConfigValidationError(
            "Config file not found",
            errors=[{"field": "--config", "value": str(path), "type": "path", "error": "No such file"}],
        )
    with open(path) as f:
        if path.suffix.lower() == ".json":
            data = json.load(f)
        else:
            data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ConfigValidationError(
            "Config file must hold a mapping",
            errors=[{"field": "<root>", "value": type(data).__name__, "type": "object",
                     "error": "Top level is not a key/value tree"}],
        )
    return data


def load_schema(schema_file: Optional[PathLike] = None) -> Dict[str, Any]:
    return load_json(schema_file or SCHEMA_PATH)


def schema_defaults(schema: Mapping[str, Any]) -> Dict[str, Any]:
    return {
        key: prop["default"]
        for key, prop in schema.get("properties", {}).items()
        if "default" in prop
    }


def _record(field: str, value: Any, kind: Any, error: str) -> Dict[str, str]:
    return {"field": field, "value": str(value), "type": str(kind), "error": error}


def _unknown_keys(data: Mapping[str, Any], schema: Mapping[str, Any]) -> List[Dict[str, str]]:
    allowed = schema.get("properties", {}).keys()
    return [_record(key, data[key], "unknown", "Unknown parameter") for key in sorted(set(data) - set(allowed))]


def _schema_violations(data: Mapping[str, Any], schema: Mapping[str, Any]) -> List[Dict[str, str]]:
    records = []
    validator = Draft202012Validator(schema)
    for err in sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.path))):
        top = str(err.path[0]) if err.path else None
        prop = schema.get("properties", {}).get(top, {})
        records.append(_record(
            ".".join(map(str, err.path)) or "<root>",
            data.get(top, "N/A") if top is not None else "N/A",
            prop.get("type", "unknown"),
            err.message,
        ))
    return records


def validate_config(data: Dict[str, Any], schema: Dict[str, Any], *, coerce: bool = True,
                    strict: bool = True) -> Dict[str, Any]:
    """
    Coerce, reject unknown keys, validate against the schema and run the x-validators
    plugins. Each stage stops the run with every problem it found.
    """
    if coerce:
        try:
            data = coerce_data(data, schema)
        except ValueError as e:
            message = str(e)
            field = message.split("'")[1] if "'" in message else "unknown"
            raise ConfigValidationError("Coercion failed", errors=[_record(field, message, "coercion", message)])

    if strict:
        unknown = _unknown_keys(data, schema)
        if unknown:
            raise ConfigValidationError("Unknown parameters found", errors=unknown)

    violations = _schema_violations(data, schema)
    if violations:
        raise ConfigValidationError("Schema validation failed", errors=violations)

    plugin_errors = run_custom_validators(data, schema)
    if plugin_errors:
        raise ConfigValidationError("Rule validation failed", errors=plugin_errors)
    return data


def resolve_config(config_file: Optional[PathLike] = None,
                   overrides: Optional[Mapping[str, Any]] = None,
                   schema_file: Optional[PathLike] = None) -> Dict[str, Any]:
    """
    Merge schema defaults < config file < overrides, then coerce and validate.

    Overrides with value None are treated as "flag not given".
    """
    schema = load_schema(schema_file)
    merged = schema_defaults(schema)
    if config_file:
        merged.update(load_config_file(config_file))
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    return validate_config(merged, schema)
