# stsf_cd/coercion.py
"""
Schema-driven coercion of flag values.

Command-line overrides arrive as strings; properties marked `"x-coerce": true` are
converted to their schema type before validation:

    '42'           -> 42                for "iterations"
    '5e-4'         -> 0.0005            for "learning_rate"
    'yes'          -> True              for "self_score"
    '0.5,0.3,0.2'  -> [0.5, 0.3, 0.2]   for "split"
    'linear,fim'   -> ['linear', 'fim'] for "subnets"
"""
import json
from typing import Any, Callable, Dict

TRUE_WORDS = frozenset({"true", "1", "yes", "y", "on"})
FALSE_WORDS = frozenset({"false", "0", "no", "n", "off"})


def _to_integer(value: Any) -> int:
    if isinstance(value, bool):
        raise ValueError(f"Cannot coerce boolean '{value}' to integer")
    if isinstance(value, float) and not value.is_integer():
        raise ValueError(f"Cannot coerce '{value}' to integer")
    if isinstance(value, (int, float)):
        return int(value)
    return int(str(value).strip())


def _to_number(value: Any) -> float:
    if isinstance(value, bool):
        raise ValueError(f"Cannot coerce boolean '{value}' to number")
    if isinstance(value, (int, float)):
        return value
    return float(str(value).strip())


def _to_boolean(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    word = str(value).strip().lower()
    if word in TRUE_WORDS:
        return True
    if word in FALSE_WORDS:
        return False
    raise ValueError(f"Cannot coerce '{value}' to boolean")


def _token(text: str):
    text = text.strip()
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _parse_json(text: str, expected: type):
    try:
        parsed = json.loads(text)
    except json.JSONDecodeError:
        raise ValueError(f"Cannot parse JSON {expected.__name__}: {text}")
    if not isinstance(parsed, expected):
        raise ValueError(f"JSON is not a {expected.__name__}: {type(parsed).__name__}")
    return parsed


def _to_array(value: Any) -> list:
    if isinstance(value, (list, tuple)):
        return list(value)
    if not isinstance(value, str):
        raise ValueError(f"Cannot coerce to array: {type(value).__name__}")
    text = value.strip()
    if text.startswith("["):
        return _parse_json(text, list)
    return [_token(part) for part in text.split(",") if part.strip()]


def _to_object(value: Any) -> dict:
    if isinstance(value, dict):
        return value
    if isinstance(value, str):
        return _parse_json(value, dict)
    raise ValueError(f"Cannot coerce to object: {type(value).__name__}")


COERCERS: Dict[str, Callable[[Any], Any]] = {
    "integer": _to_integer,
    "number": _to_number,
    "boolean": _to_boolean,
    "string": str,
    "array": _to_array,
    "object": _to_object,
}


def coerce_value(value: Any, target_type: str) -> Any:
    if value is None or target_type not in COERCERS:
        return value
    return COERCERS[target_type](value)


def coerce_data(data: Dict[str, Any], schema: Dict[str, Any]) -> Dict[str, Any]:
    """Return a copy of `data` with every x-coerce property converted to its schema type."""
    result = dict(data)
    for key, prop in schema.get("properties", {}).items():
        if key not in result or not prop.get("x-coerce", False):
            continue
        target = prop.get("type")
        if isinstance(target, list):
            # ["integer", "null"]: first non-null member
            target = next((t for t in target if t != "null"), None)
        try:
            result[key] = coerce_value(result[key], target)
        except (TypeError, ValueError) as e:
            raise ValueError(f"Coercion failed for '{key}': {e}") from e
    return result
