"""Tests for layered configuration"""
import pytest
from pydantic import ValidationError

from core.config import (
    SimConfig, build_config, flatten_config, load_config_file, parse_config_text,
)
from core.isa import FuClass


class TestDefaults:
    """Test the reference machine defaults"""

    def test_defaults(self):
        """Test a few structural defaults"""
        config = SimConfig()
        assert config.context_count == 4
        assert config.fetch_policy == "icount2.8m"
        assert config.pipeline.rob_size == 32
        assert config.pipeline.iq_size == 64
        assert config.cache.data_ports == 4
        assert config.dsmt.mdrt_entries == 64
        assert not config.dsmt.strict_lbit_squash
        assert config.latencies[FuClass.INT_DIV] == 12

    def test_fetch_port_count(self):
        """Test that the ideal policy gives every context its own port"""
        assert build_config({"context_count": 8}).fetch_port_count == 2
        assert build_config({"context_count": 8, "fetch_policy": "ideal"}).fetch_port_count == 8

    def test_dsmt_enabled(self):
        """Test that a single context runs without DSMT"""
        assert not build_config({"contexts": 1}).dsmt_enabled
        assert build_config({"contexts": 2}).dsmt_enabled


class TestBuildConfig:
    """Test layering and validation"""

    def test_later_layers_win(self):
        """Test layer precedence and skipped None values"""
        config = build_config({"contexts": 2, "max_cycles": 10}, {"contexts": None, "max_cycles": 20})
        assert config.context_count == 2
        assert config.max_cycles == 20

    def test_aliases_and_dotted_keys(self):
        """Test short names and nested keys"""
        config = build_config({
            "policy": "ideal",
            "mdrt_entries": "8",
            "strict_lbit_squash": "true",
            "cache.memory_latency": "80",
            "pipeline.units.IntALU.count": 4,
            "latencies.FPMul": 5,
        })
        assert config.fetch_policy == "ideal"
        assert config.dsmt.mdrt_entries == 8
        assert config.dsmt.strict_lbit_squash is True
        assert config.cache.memory_latency == 80
        assert config.pipeline.units[FuClass.INT_ALU].count == 4
        assert config.latencies[FuClass.FP_MUL] == 5

    @pytest.mark.parametrize("layer", [
        {"contexts": 3},
        {"fetch_policy": "round_robin"},
        {"dsmt.lsst_threshold": 4},
        {"dsmt.no_such_knob": 1},
        {"latencies.IntALU": 0},
        {"fast_skip": -1},
    ])
    def test_rejects(self, layer):
        """Test out-of-range and unknown settings"""
        with pytest.raises(ValidationError):
            build_config(layer)


class TestConfigFiles:
    """Test key=value files"""

    def test_parse(self):
        """Test comments and whitespace"""
        text = "# machine\ncontexts = 8\n\ndsmt.clone_cost=3  # cycles\n"
        assert parse_config_text(text) == {"contexts": "8", "dsmt.clone_cost": "3"}

    def test_parse_error_names_line(self):
        """Test a malformed line"""
        with pytest.raises(ValueError, match="line 2"):
            parse_config_text("contexts=2\njunk\n")

    def test_load_file(self, tmp_path):
        """Test reading a config file into a layer"""
        path = tmp_path / "machine.cfg"
        path.write_text("policy=ideal\ncontexts=2\n")
        config = build_config(load_config_file(path))
        assert config.fetch_policy == "ideal" and config.context_count == 2

    def test_flatten_round_trip(self):
        """Test that flattened keys rebuild the same config"""
        config = build_config({"contexts": 8, "dsmt.window_cycles": 500})
        flat = dict(flatten_config(config))
        assert flat["dsmt.window_cycles"] == 500
        assert flat["pipeline.units.IntALU.rs"] == 8
        assert build_config(flat) == config
