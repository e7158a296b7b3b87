"""Tests for experiment config parsing."""

import json
import math
from pathlib import Path

import pytest
from jsonschema import Draft202012Validator

from renewal_quantum.core.errors import ConfigError
from renewal_quantum.core.renewal import BiExponential, MittagLeffler, Tabulated
from renewal_quantum.pipeline.config import EXPERIMENTS, SCHEMA, load_config, parse_config, validate_document

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

BIEXP_WAITING = {"kind": "biexponential", "weight_a": 0.8, "rate_a": 1.0, "weight_b": 0.2, "rate_b": 0.05}


def aged_decay(**overrides):
    document = {
        "experiment": "aged-decay",
        "output": "out.csv",
        "waiting": dict(BIEXP_WAITING),
        "grid": {"step": 0.1, "span": 10.0},
        "ages": [0, 2, "inf"],
    }
    document.update(overrides)
    return document


def response_event(**perturbation):
    return {
        "experiment": "response-event",
        "output": "out.csv",
        "waiting": {"kind": "mittag-leffler", "alpha": 0.5, "amplitude": 0.5},
        "grid": {"step": 0.05, "span": 20.0},
        "perturbation": {"kind": "superoperator", "lambda": 0.1, "xi": "cos", "omega": 1.0, **perturbation},
        "ensemble": {"N": 10, "seed": 1},
    }


def path_of(document) -> str:
    with pytest.raises(ConfigError) as info:
        parse_config(document)
    return info.value.path


class TestBundledConfigs:
    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIG_DIR.glob("*.json")))
    def test_loads(self, name):
        config = load_config(CONFIG_DIR / name)
        assert config.experiment in EXPERIMENTS
        assert config.output.startswith("results/")

    def test_regression_keeps_repeated_observable(self):
        config = load_config(CONFIG_DIR / "regression.json")
        assert len(config.model.observables) == 2


class TestParse:
    def test_aged_decay(self):
        config = parse_config(aged_decay())
        assert isinstance(config.waiting.build(), BiExponential)
        assert config.ages == (0.0, 2.0, math.inf)
        assert config.grid.build().count == 101
        assert config.seed is None

    def test_fractional_waiting(self):
        document = aged_decay(waiting={"kind": "mittag-leffler", "alpha": 0.5, "amplitude": 1.0})
        assert isinstance(parse_config(document).waiting.build(), MittagLeffler)

    def test_tabulated_coarse_mass(self):
        density = [math.exp(-0.5 * k) for k in range(41)]
        document = aged_decay(waiting={"kind": "tabulated", "step": 0.5, "density": density, "tail_rate": 1.0})
        with pytest.raises(ConfigError) as info:
            parse_config(document)
        assert info.value.path == "waiting.density"

    def test_tabulated_bad_samples(self):
        document = aged_decay(waiting={"kind": "tabulated", "step": 0.1, "density": [1.0, -1.0], "tail_rate": 1.0})
        assert path_of(document) == "waiting.density[1]"

    def test_tabulated_normalized(self):
        density = [math.exp(-0.01 * k) for k in range(2001)]
        document = aged_decay(waiting={"kind": "tabulated", "step": 0.01, "density": density, "tail_rate": 1.0})
        assert isinstance(parse_config(document).waiting.build(), Tabulated)

    def test_canonical_json_is_sorted(self):
        config = parse_config(aged_decay())
        text = config.canonical_json()
        assert text == json.dumps(json.loads(text), sort_keys=True, separators=(",", ":"))

    def test_response_operator_default(self):
        config = parse_config(response_event(Omega=3.0))
        pert = config.perturbation
        assert pert.operator == "depolarizing-bias"
        assert pert.build().kind == "superoperator"
        assert pert.Omega == 3.0


class TestSchema:
    def test_is_valid_draft_2020_12(self):
        Draft202012Validator.check_schema(SCHEMA)
        assert SCHEMA["$schema"].endswith("2020-12/schema")

    def test_names_experiment(self):
        assert "experiment" in SCHEMA["properties"]
        assert SCHEMA["additionalProperties"] is False

    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIG_DIR.glob("*.json")))
    def test_bundled_configs_validate(self, name):
        document = json.loads((CONFIG_DIR / name).read_text(encoding="utf-8"))
        assert list(Draft202012Validator(SCHEMA).iter_errors(document)) == []
        validate_document(document)

    def test_missing_experiment(self):
        document = aged_decay()
        del document["experiment"]
        assert path_of(document) == "experiment"

    def test_nested_list_path(self):
        document = {
            "experiment": "regression",
            "output": "out.csv",
            "waiting": dict(BIEXP_WAITING),
            "model": {"channel": "dephasing", "observables": ["sq", "sx"]},
            "grid": {"step": 0.1, "span": 1.0},
            "ages": [0],
            "ensemble": {"N": 10, "seed": 1},
        }
        assert path_of(document).startswith("model.observables[0]")

    def test_key_of_another_waiting_kind(self):
        waiting = {"kind": "exponential", "rate": 1.0, "alpha": 0.5}
        with pytest.raises(ConfigError, match="unknown key") as info:
            parse_config(aged_decay(waiting=waiting))
        assert info.value.path == "waiting.alpha"

    def test_missing_waiting_parameter(self):
        waiting = dict(BIEXP_WAITING)
        del waiting["rate_b"]
        with pytest.raises(ConfigError, match="missing required key") as info:
            parse_config(aged_decay(waiting=waiting))
        assert info.value.path == "waiting.rate_b"

    def test_response_time_needs_event_time_kind(self):
        document = {
            "experiment": "response-time",
            "output": "out.csv",
            "waiting": dict(BIEXP_WAITING),
            "model": {"channel": "depolarizing", "observables": ["sz"]},
            "grid": {"step": 0.01, "span": 1.0},
            "perturbation": {"lambda": 0.05, "omega": 1.0},
        }
        assert path_of(document) == "perturbation.kind"

    def test_integral_float_counts_as_integer(self):
        document = response_event()
        document["ensemble"] = {"N": 10.0, "seed": 1}
        ensemble = parse_config(document).ensemble
        assert ensemble.realizations == 10
        assert isinstance(ensemble.realizations, int)


class TestRejections:
    def test_not_an_object(self):
        with pytest.raises(ConfigError):
            parse_config([1, 2])

    def test_unknown_top_level_key(self):
        assert path_of(aged_decay(colour="blue")) == "colour"

    def test_unknown_nested_key(self):
        document = aged_decay(grid={"step": 0.1, "span": 10.0, "extra": 1})
        assert path_of(document) == "grid.extra"

    def test_unknown_experiment(self):
        assert path_of(aged_decay(experiment="teleport")) == "experiment"

    def test_missing_section(self):
        document = aged_decay()
        del document["grid"]
        assert path_of(document) == "grid"

    def test_span_not_multiple_of_step(self):
        assert path_of(aged_decay(grid={"step": 0.3, "span": 1.0})) == "grid.span"

    def test_negative_step(self):
        assert path_of(aged_decay(grid={"step": -0.1, "span": 1.0})) == "grid.step"

    def test_boolean_is_not_a_number(self):
        waiting = dict(BIEXP_WAITING, rate_a=True)
        assert path_of(aged_decay(waiting=waiting)) == "waiting.rate_a"

    def test_unknown_waiting_kind(self):
        assert path_of(aged_decay(waiting={"kind": "gamma"})) == "waiting.kind"

    def test_alpha_above_one(self):
        document = aged_decay(waiting={"kind": "mittag-leffler", "alpha": 1.5, "amplitude": 1.0})
        assert path_of(document) == "waiting.alpha"

    def test_negative_age(self):
        assert path_of(aged_decay(ages=[0, -1])) == "ages[1]"

    def test_infinite_age_outside_aged_decay(self):
        document = aged_decay(
            experiment="fractional-decay",
            waiting={"kind": "mittag-leffler", "alpha": 0.5, "amplitude": 1.0},
            ages=[0, "inf"],
        )
        assert path_of(document) == "ages[1]"

    def test_fractional_needs_mittag_leffler(self):
        assert path_of(aged_decay(experiment="fractional-decay", ages=[0])) == "waiting.kind"

    def test_lambda_bound(self):
        assert path_of(response_event(**{"lambda": 2.0})) == "perturbation"

    def test_event_time_operator_on_superoperator(self):
        assert path_of(response_event(operator="classical-shift")) == "perturbation.operator"

    def test_response_event_needs_superoperator(self):
        assert path_of(response_event(kind="event-time")) == "perturbation.kind"

    def test_bad_seed(self):
        document = response_event()
        document["ensemble"] = {"N": 10, "seed": -1}
        assert path_of(document) == "ensemble.seed"

    def test_zero_realizations(self):
        document = response_event()
        document["ensemble"] = {"N": 0, "seed": 1}
        assert path_of(document) == "ensemble.N"

    def test_incomplete_kraus(self):
        document = {
            "experiment": "regression",
            "output": "out.csv",
            "waiting": dict(BIEXP_WAITING),
            "model": {"channel": {"kraus": [[[[0.5, 0], [0, 0]], [[0, 0], [-0.5, 0]]]]}, "observables": ["sx", "sx"]},
            "grid": {"step": 0.1, "span": 1.0},
            "ages": [0],
            "ensemble": {"N": 10, "seed": 1},
        }
        assert path_of(document) == "model.channel.kraus"

    def test_regression_needs_two_observables(self):
        document = {
            "experiment": "regression",
            "output": "out.csv",
            "waiting": dict(BIEXP_WAITING),
            "model": {"channel": "dephasing", "observables": ["sx"]},
            "grid": {"step": 0.1, "span": 1.0},
            "ages": [0],
            "ensemble": {"N": 10, "seed": 1},
        }
        assert path_of(document) == "model.observables"


class TestLoadConfig:
    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_config(tmp_path / "absent.json")

    def test_overrides(self, tmp_path):
        path = tmp_path / "response.json"
        path.write_text(json.dumps(response_event()), encoding="utf-8")
        config = load_config(path, seed_override=99, out_override="elsewhere.csv")
        assert config.seed == 99
        assert config.output == "elsewhere.csv"
        assert '"seed":99' in config.canonical_json()

    def test_non_finite_number(self, tmp_path):
        path = tmp_path / "nan.json"
        document = json.dumps(response_event()).replace('"lambda": 0.1', '"lambda": NaN')
        path.write_text(document, encoding="utf-8")
        with pytest.raises(ConfigError, match="NaN"):
            load_config(path)

    def test_overflowing_number(self, tmp_path):
        path = tmp_path / "huge.json"
        document = json.dumps(response_event()).replace('"lambda": 0.1', '"lambda": 1e400')
        path.write_text(document, encoding="utf-8")
        with pytest.raises(ConfigError, match="overflows"):
            load_config(path)
