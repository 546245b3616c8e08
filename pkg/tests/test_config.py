from __future__ import annotations

import json

import pytest

from lobworld.config import ConfigError, RunConfig, config_from_dict, load_config


def test_defaults_match_model_architecture():
    c = RunConfig()
    assert (c.lob.W, c.lob.U, c.lob.L) == (40, 10, 3)
    assert c.autoencoder.m == 16
    assert (c.transition.N, c.transition.K, c.transition.rnn_units) == (10, 5, 128)
    assert (c.reward.reward_lstm, c.reward.reward_dense) == (128, 40)
    assert (c.agent.actions, c.agent.H) == (21, 500)
    assert c.reward.po_max == 1000 and c.reward.fees == 0.02
    assert c.reward.squash_range == (-6.0, 6.0)
    assert c.evaluation.max_states == 300


def test_round_trip_through_json():
    c = config_from_dict({"seed": 4, "agent": {"kinds": ["pg", "dqn"]},
                          "transition": {"train": {"epochs": 3}}})
    again = config_from_dict(json.loads(json.dumps(c.to_dict())))
    assert again == c
    assert again.transition.train.epochs == 3
    assert again.transition.train.patience == 10   # unspecified fields keep section defaults


@pytest.mark.parametrize("raw,match", [
    ({"bogus": 1}, "unknown key"),
    ({"lob": {"W": 40, "Wx": 1}}, r"lob: unknown key\(s\) Wx"),
    ({"autoencoder": {"train": {"lrr": 0.1}}}, "autoencoder.train"),
    ({"lob": {"W": "40"}}, "lob.W: expected int"),
    ({"agent": {"kinds": "pg"}}, "expected a list"),
    ({"seed": True}, "expected int"),
])
def test_schema_errors(raw, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(raw)


@pytest.mark.parametrize("raw", [
    {"data": {"train": ["sideways"]}},
    {"lob": {"W": 44}},
    {"agent": {"actions": 11}},
    {"agent": {"kinds": ["ppo"]}},
    {"agent": {"gamma": 1.5}},
    {"reward": {"squash_range": [1.0, -1.0]}},
    {"benchmark": {"bfs_horizon": 7}},
    {"benchmark": {"conservative": 150}},
])
def test_semantic_errors(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_float_fields_accept_ints():
    assert config_from_dict({"reward": {"fees": 0}}).reward.fees == 0.0


def test_load_config(tmp_path):
    assert load_config(None) == RunConfig()
    p = tmp_path / "c.json"
    p.write_text('{"seed": 9}')
    assert load_config(p).seed == 9
    assert load_config(p).with_seed(3).seed == 3
    p.write_text("{oops")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


def test_shipped_desk_config_is_valid():
    from pathlib import Path
    cfg = load_config(Path(__file__).parent.parent / "configs" / "desk.json")
    assert len(cfg.data.train + cfg.data.validation + cfg.data.test) == 4
