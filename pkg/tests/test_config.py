import json

import pytest

from coenv.config import Config, config_from_dict, config_to_dict, load_config
from coenv.errors import InvalidArgument


def test_defaults_round_trip():
    assert config_from_dict(config_to_dict(Config())) == Config()


def test_nested_overrides(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"interactive": {"pos_check_tol": 0.015, "check_visibility": False},
                             "iterative": {"M_max": 5},
                             "transfer": {"steps": 40, "margin": 0.02},
                             "world": {"ik": {"pos_tol": 1e-5}}}))
    cfg = load_config(p)
    assert cfg.interactive.pos_check_tol == 0.015 and cfg.interactive.check_visibility is False
    assert cfg.iterative.M_max == 5
    assert (cfg.transfer.steps, cfg.transfer.margin) == (40, 0.02)
    assert cfg.world.ik.pos_tol == 1e-5
    assert cfg.world.grasp_capture_tol == Config().world.grasp_capture_tol


def test_int_accepted_for_float():
    cfg = config_from_dict({"transfer": {"margin": 0}})
    assert cfg.transfer.margin == 0.0 and isinstance(cfg.transfer.margin, float)


@pytest.mark.parametrize("d", [
    {"bogus": {}},
    {"interactive": {"nope": 1}},
    {"iterative": {"M_max": 2.5}},
    {"iterative": {"M_max": True}},
    {"interactive": {"check_visibility": 1}},
    {"transfer": {"margin": "0.1"}},
    {"transfer": {"margin": -1}},
    {"iterative": {"M_max": 0}},
    {"world": 3},
])
def test_bad_values(d):
    with pytest.raises(InvalidArgument):
        config_from_dict(d)


def test_missing_and_malformed_file(tmp_path):
    with pytest.raises(InvalidArgument, match="not found"):
        load_config(tmp_path / "absent.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(InvalidArgument):
        load_config(tmp_path / "bad.json")
