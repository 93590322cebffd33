"""Tests for profile, file and override resolution of run configurations."""

import json

import pytest

from ecnu_gnn import config as C
from ecnu_gnn.errors import ContractError


class TestProfiles:
    def test_default_is_swat(self):
        cfg = C.resolve()
        assert cfg.profile == "swat"
        m = cfg.model
        assert (m.window, m.topk, m.embed_dim, m.feature_dim, m.n_ecnum, m.n_ncrm) == (5, 30, 128, 256, 4, 4)

    @pytest.mark.parametrize(
        "name,expected",
        [
            ("wadi", (5, 30, 128, 256, 3, 4)),
            ("psm", (3, 25, 128, 128, 1, 2)),
            ("synth", (5, 5, 16, 32, 2, 2)),
        ],
    )
    def test_values(self, name, expected):
        m = C.resolve(name).model
        assert (m.window, m.topk, m.embed_dim, m.feature_dim, m.n_ecnum, m.n_ncrm) == expected

    def test_unknown(self):
        with pytest.raises(ContractError, match="unknown profile"):
            C.resolve("nope")


class TestLayering:
    def test_file_then_overrides_then_seed(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"profile": "synth", "model": {"topk": 3}, "train": {"seed": 4, "batch_size": 8}}))
        cfg = C.resolve(config_path=path, overrides=C.parse_overrides(["train.batch_size=16"]), seed=9)
        assert cfg.profile == "synth"
        assert cfg.model.topk == 3 and cfg.model.feature_dim == 32
        assert cfg.train.batch_size == 16 and cfg.seed == 9

    def test_explicit_profile_beats_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"profile": "synth"}))
        assert C.resolve("psm", config_path=path).profile == "psm"

    @pytest.mark.parametrize(
        "items,match",
        [
            (["model.depth=3"], "unknown key"),
            (["optim.lr=1"], "unknown section"),
            (["model.topk=three"], "integer"),
            (["train.learning_rate=fast"], "number"),
            (["preprocess.normalize=maybe"], "boolean"),
            (["topk=3"], "section.key=value"),
        ],
    )
    def test_bad_overrides(self, items, match):
        with pytest.raises(ContractError, match=match):
            C.resolve("synth", overrides=C.parse_overrides(items))

    def test_value_validation_applies(self):
        with pytest.raises(ContractError):
            C.resolve("synth", overrides=C.parse_overrides(["score.sma_window=0"]))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{")
        with pytest.raises(ContractError, match="invalid JSON"):
            C.resolve(config_path=path)


class TestDigest:
    def test_stable_and_sensitive(self):
        a = C.resolve("synth", seed=1)
        assert a.digest() == C.resolve("synth", seed=1).digest()
        assert a.digest() != C.resolve("synth", seed=2).digest()
        assert len(a.digest()) == 64

    def test_round_trip_through_file(self, tmp_path):
        a = C.resolve("synth", seed=3)
        path = tmp_path / "c.json"
        path.write_text(json.dumps(a.to_dict()))
        assert C.resolve(config_path=path) == a

    def test_helpers(self):
        a = C.resolve("synth")
        assert C.with_model(a, topk=2).model.topk == 2
        assert C.with_seed(a, 11).seed == 11
