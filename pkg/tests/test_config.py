import pytest

from polypnet.config import (
    TrainConfig,
    add_config_arguments,
    format_value,
    load_config_file,
    parse_bool,
    parse_config_text,
    parse_sources,
    resolve_config,
)
from polypnet.errors import ConfigError
from main import UsageParser


def test_defaults_are_valid():
    cfg = TrainConfig()
    assert cfg.tversky().alpha == 0.3 and cfg.tversky().beta == 0.7
    model = cfg.model_config()
    assert model.enable_second_unet and model.enable_attention_gates
    assert model.encoder.stage_widths == (8, 16, 32, 64, 128)


def test_text_parsing():
    values = parse_config_text("# comment\nlr = 0.01  # trailing\n\nsources = a=/x,b=/y\n")
    assert values == {"lr": "0.01", "sources": "a=/x,b=/y"}
    with pytest.raises(ConfigError):
        parse_config_text("just words")
    with pytest.raises(ConfigError):
        parse_config_text("= 3")


def test_value_parsers():
    assert parse_bool("Yes") is True and parse_bool("off") is False
    with pytest.raises(ValueError):
        parse_bool("maybe")
    assert parse_sources("kvasir=/data/k, cvc=/data/c") == (("kvasir", "/data/k"), ("cvc", "/data/c"))
    with pytest.raises(ValueError):
        parse_sources("nopath")


def test_from_strings():
    cfg = TrainConfig.from_strings({"lr": "0.02", "stage_blocks": "1,2,1,1,1", "stem_width": "none",
                                    "freeze_unet1": "yes", "variant": "cunet"})
    assert cfg.lr == 0.02
    assert cfg.stage_blocks == (1, 2, 1, 1, 1)
    assert cfg.stem_width is None
    assert cfg.freeze_unet1 is True
    assert not cfg.model_config().enable_attention_gates


@pytest.mark.parametrize("values", [
    {"learning_rate": "0.1"},
    {"lr": "fast"},
    {"threshold": "1.5"},
    {"variant": "transformer"},
    {"precision": "half"},
    {"input_side": "48"},
    {"cardinality": "3"},
])
def test_invalid_values(values):
    with pytest.raises(ConfigError):
        TrainConfig.from_strings(values)


def test_flag_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("lr = 0.01\nbatch_size = 2\n")
    parser = UsageParser()
    parser.add_argument("--config")
    add_config_arguments(parser)
    args = parser.parse_args(["--config", str(path), "--batch_size", "8", "--enable_attention_gates", "false"])
    cfg = resolve_config(args.config, args)
    assert cfg.lr == 0.01
    assert cfg.batch_size == 8
    assert not cfg.model_config().enable_attention_gates


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(str(tmp_path / "absent.cfg"))


def test_text_round_trip():
    cfg = TrainConfig(lr=0.02, sources=(("a", "/x"),), stage_widths=(4, 8, 16, 32, 64), scenario=4)
    assert TrainConfig.from_text(cfg.to_text()) == cfg
    assert format_value(None) == "none"


def test_scenario_spec_uses_source_names():
    cfg = TrainConfig(sources=(("kvasir-seg", "/k"), ("cvc-clinicdb", "/c")))
    assert cfg.scenario_spec().train_sources == ("kvasir-seg", "cvc-clinicdb")
    assert TrainConfig().scenario_spec().train_sources == ("synthetic",)
