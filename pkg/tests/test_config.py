import pytest

from nefsim.config import GLOBAL, RunConfig, config_reference, parse_config
from nefsim.errors import ConfigTypeError, DuplicateKeyError, UnknownKeyError


class TestParse:
    def test_empty_file_all_defaults(self):
        cfg = parse_config("")
        assert cfg.get(GLOBAL, "dt") == 0.001
        assert cfg.get(GLOBAL, "seed") == 0
        assert cfg.get("arm", "payload_mass") == 1.0
        assert cfg.get("rover", "n_neurons") == 512

    def test_override_single_key(self):
        cfg = parse_config("[arm]\npayload_mass = 1.5\n")
        assert cfg.get("arm", "payload_mass") == 1.5
        assert cfg.get("arm", "kp") == 30.0  # everything else default

    def test_typo_guard_with_line_number(self):
        with pytest.raises(UnknownKeyError) as err:
            parse_config("[arm]\npayload_mas = 1.5\n")
        assert err.value.line == 2

    def test_unknown_section(self):
        with pytest.raises(UnknownKeyError):
            parse_config("[armz]\n")

    def test_duplicate_key(self):
        with pytest.raises(DuplicateKeyError):
            parse_config("[arm]\nkp = 1\nkp = 2\n")

    def test_type_error_reports_expectation(self):
        with pytest.raises(ConfigTypeError, match="int"):
            parse_config("[rover]\nn_neurons = lots\n")

    def test_int_rejects_float_literal(self):
        with pytest.raises(ConfigTypeError):
            parse_config("[rover]\nn_neurons = 12.5\n")

    def test_bool_parsing(self):
        assert parse_config("[arm]\nemit_trajectory = true\n").get(
            "arm", "emit_trajectory") is True
        assert parse_config("[arm]\nemit_trajectory = false\n").get(
            "arm", "emit_trajectory") is False

    def test_comments_and_blank_lines(self):
        text = "# header comment\n\nseed = 9  # trailing comment\n[arm]\n# more\nkp = 12\n"
        cfg = parse_config(text)
        assert cfg.get(GLOBAL, "seed") == 9
        assert cfg.get("arm", "kp") == 12.0

    def test_global_keys_before_sections(self):
        cfg = parse_config("dt = 0.002\nbackend = fixed\n")
        assert cfg.get(GLOBAL, "dt") == 0.002
        assert cfg.get(GLOBAL, "backend") == "fixed"


class TestEffectiveEcho:
    def test_round_trips_through_parser(self):
        cfg = parse_config("[arm]\npayload_mass = 1.25\n[rover]\nn_neurons = 64\n")
        text = cfg.render_effective()
        back = parse_config(text)
        assert back.get("arm", "payload_mass") == 1.25
        assert back.get("rover", "n_neurons") == 64
        assert back.get("arm", "kp") == cfg.get("arm", "kp")

    def test_echo_is_deterministic(self):
        assert RunConfig().render_effective() == RunConfig().render_effective()

    def test_reference_lists_defaults(self):
        ref = config_reference()
        assert "payload_mass" in ref
        assert "scale_firing_rates" in ref
