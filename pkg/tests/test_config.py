import pytest
import yaml

from stsf_cd.coercion import coerce_data
from stsf_cd.config import load_schema, resolve_config, schema_defaults, validate_config
from stsf_cd.errors import ConfigValidationError
from stsf_cd.model import VARIANTS
from stsf_cd.validators import RuleViolation, validate_variant_flags


@pytest.fixture
def schema():
    return load_schema()


def test_defaults_validate(schema):
    cfg = validate_config(schema_defaults(schema), schema)
    assert cfg["variant"] == "full"
    assert cfg["split"] == [0.5, 0.3, 0.2]


def test_cli_strings_are_coerced(schema):
    data = coerce_data({"iterations": "42", "learning_rate": "5e-4", "split": "0.5,0.3,0.2",
                        "self_score": "true", "subnets": "fim,gsfm"}, schema)
    assert data == {"iterations": 42, "learning_rate": 0.0005, "split": [0.5, 0.3, 0.2],
                    "self_score": True, "subnets": ["fim", "gsfm"]}


def test_precedence_defaults_file_flags(tmp_path):
    config_file = tmp_path / "run.yaml"
    config_file.write_text(yaml.safe_dump({"iterations": 20, "batch_size": 2}))
    cfg = resolve_config(config_file, {"iterations": "5", "seed": None})
    assert cfg["iterations"] == 5
    assert cfg["batch_size"] == 2
    assert cfg["learning_rate"] == 0.0005
    assert cfg["seed"] == 0


def test_unknown_key_rejected(schema):
    with pytest.raises(ConfigValidationError) as exc:
        validate_config(dict(schema_defaults(schema), epochs=3), schema)
    assert exc.value.errors[0]["field"] == "epochs"


def test_invalid_variant_lists_valid_values(schema):
    with pytest.raises(ConfigValidationError) as exc:
        validate_config(dict(schema_defaults(schema), variant="v3"), schema)
    record = exc.value.errors[0]
    assert record["field"] == "variant"
    assert "baseline" in record["error"] and "full" in record["error"]


def test_uncoercible_value_is_reported(schema):
    with pytest.raises(ConfigValidationError) as exc:
        validate_config(dict(schema_defaults(schema), count="ten"), schema)
    assert exc.value.errors[0]["type"] == "coercion"


def test_split_rule_plugin(schema):
    with pytest.raises(ConfigValidationError) as exc:
        validate_config(dict(schema_defaults(schema), split=[0.5, 0.3, 0.3]), schema)
    assert exc.value.errors[0]["field"] == "split"
    assert exc.value.errors[0]["type"] == "plugin"


def test_tile_size_is_only_range_checked(schema):
    assert validate_config(dict(schema_defaults(schema), size=900), schema)["size"] == 900
    with pytest.raises(ConfigValidationError) as exc:
        validate_config(dict(schema_defaults(schema), size=1025), schema)
    assert exc.value.errors[0]["field"] == "size"


def test_variant_rule_follows_model_table():
    for name in VARIANTS:
        validate_variant_flags({"variant": name}, {})
    with pytest.raises(RuleViolation) as exc:
        validate_variant_flags({"variant": "v3"}, {})
    assert exc.value.field == "variant"


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigValidationError):
        resolve_config(tmp_path / "nope.yaml")


def test_shipped_configs_validate():
    from stsf_cd.config import SCHEMA_PATH

    for name in ("desk.yaml", "large.yaml"):
        cfg = resolve_config(SCHEMA_PATH.parent.parent / "configs" / name)
        assert cfg["variant"] == "full"
