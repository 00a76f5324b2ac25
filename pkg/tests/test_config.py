"""Tests for flat configuration files and their mapping onto model and simulator settings."""

import pytest

from negcon.config import (
    load_config,
    model_config,
    parse_config_text,
    parse_overrides,
    run_options,
    sim_config,
)
from negcon.core import ModelConfig
from negcon.errors import ConfigError
from negcon.simulation import CovariateLaw


class TestParsing:
    def test_key_values(self):
        text = "link = multiplicative\n# comment\nobesity_threshold = 28.5  # inline\n"
        assert parse_config_text(text) == {"link": "multiplicative", "obesity_threshold": "28.5"}

    def test_case_preserved(self):
        assert "sim.theta1.(intercept)" in parse_config_text("sim.theta1.(intercept) = -9")

    def test_malformed(self):
        with pytest.raises(ConfigError, match="cannot parse"):
            parse_config_text("just words")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.cfg")

    def test_overrides(self):
        assert parse_overrides(["a=1", " b = x=y "]) == {"a": "1", "b": "x=y"}
        with pytest.raises(ConfigError, match="key=value"):
            parse_overrides(["novalue"])


class TestModelConfig:
    def test_defaults(self):
        assert model_config({}) == ModelConfig()

    def test_types(self):
        cfg = model_config({"link": "multiplicative", "obesity_threshold": "28",
                            "center_ages": "no", "outcome_covariates": "y2_b, sex2"})
        assert cfg.link == "multiplicative" and cfg.obesity_threshold == 28.0
        assert cfg.center_ages is False and cfg.outcome_covariates == ("y2_b", "sex2")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown configuration key 'colour'"):
            model_config({"colour": "blue"})

    def test_bad_boolean(self):
        with pytest.raises(ConfigError, match="boolean"):
            model_config({"center_ages": "maybe"})

    def test_bad_number(self):
        with pytest.raises(ConfigError, match="number"):
            model_config({"obesity_threshold": "thirty"})

    def test_sim_and_run_keys_ignored(self):
        assert model_config({"sim.seed": "3", "strata": "1"}) == ModelConfig()


class TestRunOptions:
    def test_defaults(self):
        assert run_options({}) == {"strata": (1, 2, 3), "bootstrap": 0, "bootstrap_seed": 0}

    def test_subset(self):
        assert run_options({"strata": "3, 1"})["strata"] == (3, 1)

    @pytest.mark.parametrize("values", [{"strata": "0,1"}, {"strata": ""}, {"bootstrap": "-1"},
                                        {"bootstrap": "many"}])
    def test_rejected(self, values):
        with pytest.raises(ConfigError):
            run_options(values)


class TestSimConfig:
    def test_none_without_sim_keys(self):
        assert sim_config({"link": "additive"}, ModelConfig()) is None

    def test_full(self):
        values = parse_config_text("""
sim.n_candidate = 1000
sim.seed = 7
sim.alpha = 0, 0.5, 0.8, 1.2
sim.beta_a = 0.1, 0.2, 0.3
sim.beta0 = 2
sim.theta1.(intercept) = -9
sim.theta1.z = 0.35
sim.beta_c.age2:age1 = 0.0005
sim.gamma2.z = 0.1
sim.law.trait_sd = 4
sim.mechanism = latent-first
""")
        sim = sim_config(values, ModelConfig())
        assert sim.n_candidate == 1000 and sim.seed == 7
        assert sim.alpha == (0.0, 0.5, 0.8, 1.2) and sim.beta_a == (0.1, 0.2, 0.3)
        assert sim.beta0 == (2.0, 2.0, 2.0)
        assert sim.theta1 == {"(intercept)": -9.0, "z": 0.35}
        assert sim.beta_c == {"age2:age1": 0.0005}
        assert sim.gamma == ({}, {"z": 0.1}, {})
        assert sim.law == CovariateLaw(trait_sd=4.0)
        assert sim.mechanism == "latent-first"

    def test_link_follows_model(self):
        sim = sim_config({"sim.seed": "1"}, ModelConfig(link="multiplicative"))
        assert sim.link == "multiplicative" and sim.outcome_family == "lognormal"

    def test_explicit_sim_link_wins(self):
        sim = sim_config({"sim.link": "additive"}, ModelConfig(link="multiplicative"))
        assert sim.link == "additive"

    def test_n_observed_none(self):
        assert sim_config({"sim.n_observed": "none"}, ModelConfig()).n_observed is None

    @pytest.mark.parametrize("key", ["sim.colour", "sim.theta9.z", "sim.law.height", "sim.gamma"])
    def test_unknown(self, key):
        with pytest.raises(ConfigError, match="unknown configuration key"):
            sim_config({key: "1"}, ModelConfig())

    def test_validation_propagates(self):
        with pytest.raises(ConfigError, match="reference"):
            sim_config({"sim.alpha": "1,1,1,1"}, ModelConfig())
