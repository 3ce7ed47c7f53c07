"""
Tests for settings and run configuration loading
"""

from unittest.mock import patch

import pytest
from pydantic import ValidationError

from src.config import config_hash, load_run_config, settings, validate_settings
from src.exceptions import ConfigurationError
from src.models import RunConfig

class TestSettings:
    """Test cases for environment settings"""

    def test_defaults_are_valid(self):
        validate_settings()
        assert settings.CSV_DIGITS == 17

    def test_quadrature_too_coarse(self):
        with patch.object(settings, "QUADRATURE_POINTS", 3):
            with pytest.raises(ValueError, match="QUADRATURE_POINTS"):
                validate_settings()

    def test_nonpositive_tolerance(self):
        with patch.object(settings, "NEWTON_TOL", 0.0):
            with pytest.raises(ValueError, match="NEWTON_TOL"):
                validate_settings()

class TestRunConfig:
    """Test cases for load_run_config"""

    def test_minimal_file(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[mesh]\nR = 4.0\nh = 0.5\n")
        config = load_run_config(path)
        assert config.mesh.R == 4.0
        assert config.sweep.lambdas == [0.0]

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_run_config(tmp_path / "absent.toml")

    def test_malformed_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[mesh\nR = 4.0\n")
        with pytest.raises(ConfigurationError):
            load_run_config(path)

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[mesh]\nradius = 4.0\n")
        with pytest.raises(ValidationError):
            load_run_config(path)

    def test_zero_viscosity(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[physical]\nV = 1.0\nL = 1.0\nnu = 0.0\nrho = 1.0\nM = 1.0\nell = 1.0\n")
        with pytest.raises(ValidationError):
            load_run_config(path)

    def test_empty_window(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[bifurcation]\nlambda_min = 2.0\nlambda_max = 1.0\n")
        with pytest.raises(ValidationError):
            load_run_config(path)

    def test_both_parameter_sources(self):
        with pytest.raises(ValidationError):
            RunConfig.model_validate({
                "params": {"omega_n2": 1.0},
                "physical": {"V": 1.0, "L": 1.0, "nu": 1.0, "rho": 1.0, "M": 1.0, "ell": 1.0},
            })

    def test_non_increasing_sweep(self):
        with pytest.raises(ValidationError):
            RunConfig.model_validate({"sweep": {"lambdas": [0.0, 0.1, 0.1]}})

class TestConfigHash:
    """Test cases for config_hash"""

    def test_stable(self):
        assert config_hash(RunConfig()) == config_hash(RunConfig())

    def test_sensitive(self):
        assert config_hash(RunConfig()) != config_hash(RunConfig(seed=1))

if __name__ == "__main__":
    pytest.main([__file__])
