"""
Tests for manifest loading and environment settings.
"""

import pytest

from app.config import Config, load_run_config, parse_run_config, resolve_threads
from app.errors import ConfigError


class TestLoadRunConfig:
    """Test TOML manifest parsing."""

    def test_valid_manifest(self, write_config):
        """Test a complete manifest loads."""
        path = write_config(
            '[problem]\nkey = "exp2-heat"\n\n'
            '[mesh]\nkind = "graded"\nlevels = 3\n\n'
            '[time]\nkind = "geometric"\nT = 0.05\nN = 4\nq_rule = "linear"\n'
        )
        cfg = load_run_config(path)
        assert cfg.problem.key == "exp2-heat"
        assert cfg.mesh.levels == 3
        assert cfg.time.T == 0.05

    def test_missing_file(self, tmp_path):
        """Test a missing manifest raises ConfigError."""
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(tmp_path / "absent.toml")

    def test_syntax_error_has_line(self, write_config):
        """Test TOML syntax errors carry the line number."""
        path = write_config("[problem]\nkey = \n")
        with pytest.raises(ConfigError, match="line 2"):
            load_run_config(path)

    def test_validation_error_has_key_path(self, write_config):
        """Test validation errors name the dotted key."""
        path = write_config("[mesh]\nk = 0\n")
        with pytest.raises(ConfigError, match="mesh.k"):
            load_run_config(path)

    def test_unknown_key(self, write_config):
        """Test unknown keys are rejected."""
        path = write_config("[solver]\nmethod = \"gmres\"\n")
        with pytest.raises(ConfigError, match="solver.method"):
            load_run_config(path)

    def test_parse_mapping(self):
        """Test already-parsed mappings validate the same way."""
        cfg = parse_run_config({"penalty": {"c_s": 10.0}})
        assert cfg.penalty.c_s == 10.0
        with pytest.raises(ConfigError):
            parse_run_config({"penalty": {"sigma": 0.5}})


class TestSettings:
    """Test environment-level settings."""

    def test_resolve_threads(self):
        """Test 0 means auto and negatives are rejected."""
        assert resolve_threads(3) == 3
        assert resolve_threads(0) >= 1
        with pytest.raises(ConfigError):
            resolve_threads(-1)

    def test_memory_guards(self):
        """Test mesh guards have sane defaults."""
        assert Config.MAX_UNIFORM_LEVEL >= 4
        assert Config.MAX_GRADED_LEVEL >= 5
