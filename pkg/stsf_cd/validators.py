# stsf_cd/validators.py
from typing import Any, Dict

from .model import VARIANTS


class RuleViolation(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


def validate_split_ratios(data: Dict[str, Any], schema: Dict[str, Any]):
    """Split ratios must sum to one"""
    split = data.get("split")
    if split is None:
        return
    total = sum(float(r) for r in split)
    if abs(total - 1.0) > 1e-9:
        raise RuleViolation("split", f"Split ratios must sum to 1 (got {total!r})")


def validate_variant_flags(data: Dict[str, Any], schema: Dict[str, Any]):
    """Variant must name one of the model's module combinations"""
    variant = data.get("variant")
    if variant is None:
        return
    if variant not in VARIANTS:
        raise RuleViolation("variant", f"Unknown variant '{variant}', valid: {sorted(VARIANTS)}")
