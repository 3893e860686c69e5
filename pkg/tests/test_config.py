"""Configuration parsing, canonical form, and scope hashing."""

from dataclasses import replace
from importlib import resources

import pytest

from deforma.config import (
    ConfigError,
    config_hash,
    default_config,
    override_cases,
    override_seed,
    parse_config,
    serialize_config,
)


class TestParsing:
    def test_empty_text_gives_defaults(self):
        assert parse_config("") == default_config()

    def test_round_trip_is_exact(self):
        cfg = default_config()
        assert parse_config(serialize_config(cfg)) == cfg

    def test_round_trip_of_modified_config(self):
        cfg = replace(default_config(), graph_threshold=0.0105)
        cfg = replace(cfg, model=replace(cfg.model, n_layers=12))
        assert parse_config(serialize_config(cfg)) == cfg

    def test_overrides_apply(self):
        cfg = parse_config(
            "train.epochs = 7\n"
            "train.standardize = true\n"
            "model.use_jumping_knowledge = true\n"
            "phantom.tumor_center = 0.01 0.03 0.0\n"
        )
        assert cfg.train.epochs == 7
        assert cfg.train.standardize is True
        assert cfg.model.use_jumping_knowledge is True
        assert cfg.phantom.tumor_center == (0.01, 0.03, 0.0)

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config(
            "# a full comment line\n"
            "\n"
            "train.epochs = 9  # trailing comment\n"
        )
        assert cfg.train.epochs == 9

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config("train.momentum = 0.9\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate config key"):
            parse_config("train.epochs = 5\ntrain.epochs = 6\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="expected 'key = value'"):
            parse_config("train.epochs 5\n")

    def test_empty_value_rejected(self):
        with pytest.raises(ConfigError, match="empty value"):
            parse_config("train.epochs =\n")

    def test_bad_number_rejected(self):
        with pytest.raises(ConfigError, match="expected an integer"):
            parse_config("train.epochs = many\n")

    def test_bad_tuple_arity_rejected(self):
        with pytest.raises(ConfigError, match="expected 3 numbers"):
            parse_config("phantom.tumor_center = 0.0 0.025\n")

    def test_bad_bool_rejected(self):
        with pytest.raises(ConfigError, match="expected true or false"):
            parse_config("model.use_jumping_knowledge = maybe\n")

    def test_domain_invariants_enforced(self):
        with pytest.raises(ConfigError):
            parse_config("model.hidden_dim = 7\n")
        with pytest.raises(ConfigError):
            parse_config("material.normal.bulk_kappa = 100.0\n")
        with pytest.raises(ConfigError):
            parse_config("graph.threshold = 0.0\n")

    def test_serialization_is_sorted_and_stable(self):
        text = serialize_config(default_config())
        keys = [line.split(" = ")[0] for line in text.strip().splitlines()]
        assert keys == sorted(keys)
        assert serialize_config(parse_config(text)) == text

    def test_bundled_desk_config_parses(self):
        text = (
            resources.files("deforma")
            .joinpath("configs/desk.cfg")
            .read_text(encoding="utf-8")
        )
        cfg = parse_config(text)
        assert cfg.phantom.target_edge_length == 0.007
        assert cfg.train.epochs == 500
        assert cfg.train.standardize is True
        assert cfg.load.n_cases == 60
        assert cfg.graph_threshold == 0.0105
        assert cfg.workdir == "runs/desk"


class TestHashing:
    def test_hash_is_twelve_hex(self):
        digest = config_hash(default_config())
        assert len(digest) == 12
        int(digest, 16)

    def test_workdir_never_hashed(self):
        cfg = default_config()
        moved = replace(cfg, workdir="elsewhere")
        assert config_hash(cfg) == config_hash(moved)
        for stage in ("mesh", "dataset", "graph", "train"):
            assert config_hash(cfg, stage) == config_hash(moved, stage)

    def test_downstream_change_keeps_upstream_scopes(self):
        cfg = default_config()
        retrained = replace(cfg, train=replace(cfg.train, epochs=9))
        assert config_hash(cfg, "train") != config_hash(retrained, "train")
        for stage in ("mesh", "dataset", "graph"):
            assert config_hash(cfg, stage) == config_hash(retrained, stage)

    def test_phantom_change_invalidates_everything(self):
        cfg = default_config()
        regrown = replace(
            cfg, phantom=replace(cfg.phantom, target_edge_length=0.008)
        )
        for stage in ("mesh", "dataset", "graph", "train"):
            assert config_hash(cfg, stage) != config_hash(regrown, stage)

    def test_graph_change_spares_mesh_and_dataset(self):
        cfg = default_config()
        rewired = replace(cfg, graph_threshold=0.004)
        assert config_hash(cfg, "graph") != config_hash(rewired, "graph")
        assert config_hash(cfg, "train") != config_hash(rewired, "train")
        assert config_hash(cfg, "mesh") == config_hash(rewired, "mesh")
        assert config_hash(cfg, "dataset") == config_hash(rewired, "dataset")

    def test_unknown_stage_rejected(self):
        with pytest.raises(ValueError, match="unknown stage"):
            config_hash(default_config(), "deploy")


class TestOverrides:
    def test_seed_override_touches_every_stream(self):
        cfg = override_seed(default_config(), 42)
        assert cfg.phantom.rng_seed == 42
        assert cfg.load.rng_seed == 42
        assert cfg.model.rng_seed == 42
        assert cfg.train.rng_seed == 42
        assert cfg.graph_rng_seed == 42

    def test_negative_seed_rejected(self):
        with pytest.raises(ConfigError, match="non-negative"):
            override_seed(default_config(), -1)

    def test_cases_override_divides_across_anchors(self):
        cfg = override_cases(default_config(), 60)
        assert cfg.load.n_samples_per_location == 6
        assert cfg.load.n_cases == 60

    def test_cases_override_rejects_remainder(self):
        with pytest.raises(ConfigError, match="multiple of"):
            override_cases(default_config(), 55)

    def test_cases_override_rejects_nonpositive(self):
        with pytest.raises(ConfigError, match="positive"):
            override_cases(default_config(), 0)
