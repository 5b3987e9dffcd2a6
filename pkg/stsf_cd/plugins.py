# stsf_cd/plugins.py
import importlib
from typing import Any, Dict, List


def run_custom_validators(data: Dict[str, Any], schema: Dict[str, Any]) -> List[Dict[str, str]]:
    """Run every `module:function` listed under x-validators and collect their complaints."""
    validators: List[str] = schema.get("x-validators", [])
    collected = []
    for path in validators:
        module_name, func_name = path.split(":", 1)
        module = importlib.import_module(module_name)
        func = getattr(module, func_name)
        try:
            func(data, schema)  # raise on error
        except ValueError as e:
            collected.append({
                "field": getattr(e, "field", func_name),
                "value": "N/A",
                "type": "plugin",
                "error": str(e),
            })
    return collected
