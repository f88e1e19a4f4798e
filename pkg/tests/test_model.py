"""Full model assembly: parameter accounting, checkpointing, inference modes."""

import numpy as np
import pytest

from smilefusion.errors import (
    InvalidConfigError,
    ShapeMismatchError,
    UnsupportedInferenceModeError,
)
from smilefusion.fusion import FUSION_KINDS
from smilefusion.model import (
    BackboneConfig,
    SmileModel,
    auxiliary_head_parameter_count,
    backbone_parameter_count,
    classifier_parameter_count,
    fusion_parameter_count,
    load_checkpoint,
    model_parameter_count,
    save_checkpoint,
)
from smilefusion.tensor import Tensor

MICRO = BackboneConfig(
    input_points=11,
    spatial_dim=12,
    embed_dim=16,
    temporal_blocks=2,
    heads=2,
    dropout=0.1,
    seq_len=5,
)


def _micro_model(kind="hadamard", seed=0, **kw):
    defaults = dict(marker_dim=10, fused_width=8, inference_mode="constant-gate")
    defaults.update(kw)
    return SmileModel(MICRO, fusion_kind=kind, seed=seed, **defaults)


def _clips(rng, n=3, cfg=MICRO):
    return rng.normal(size=(n, cfg.seq_len, cfg.input_points, 3))


class TestConfigValidation:
    def test_defaults_are_valid(self):
        cfg = BackboneConfig()
        assert cfg.validate() is cfg
        assert cfg.embed_dim == 256 and cfg.spatial_dim == 128
        assert cfg.temporal_blocks == 3 and cfg.heads == 4
        assert cfg.seq_len == 16 and cfg.positional is False

    def test_rejects_bad_values(self):
        with pytest.raises(InvalidConfigError):
            BackboneConfig(spatial_dim=0).validate()
        with pytest.raises(InvalidConfigError):
            BackboneConfig(heads=5).validate()  # must divide spatial_dim
        with pytest.raises(InvalidConfigError):
            BackboneConfig(dropout=1.0).validate()
        with pytest.raises(InvalidConfigError):
            BackboneConfig(seq_len=0).validate()

    def test_unknown_inference_mode_rejected(self):
        with pytest.raises(InvalidConfigError):
            _micro_model(inference_mode="lenient")


class TestParameterAccounting:
    def test_micro_walk_matches_closed_form(self):
        for kind in ("hadamard", "concat", "bilinear", "multi-head-attention"):
            model = _micro_model(kind)
            want = model_parameter_count(MICRO, kind, marker_dim=10, width=8)
            assert model.count_parameters() == want

    def test_default_dims_pinned_totals(self):
        cfg = BackboneConfig()
        assert backbone_parameter_count(cfg) == 648_320
        assert classifier_parameter_count(128) == 3 * 128 + 1
        assert model_parameter_count(cfg, "hadamard", 225, 128) == 710_529
        assert auxiliary_head_parameter_count() == 56_024

    def test_backbone_walk_matches_closed_form(self):
        model = _micro_model()
        walk = sum(
            p.data.size for p in model.parameters() if p.name.startswith("backbone.")
        )
        assert walk == backbone_parameter_count(MICRO)

    def test_positional_table_adds_seq_len_rows(self):
        cfg_pos = BackboneConfig(
            input_points=11,
            spatial_dim=12,
            embed_dim=16,
            temporal_blocks=2,
            heads=2,
            seq_len=5,
            positional=True,
        )
        base = backbone_parameter_count(MICRO)
        assert backbone_parameter_count(cfg_pos) == base + 5 * 12
        model = SmileModel(cfg_pos, fusion_kind="hadamard", marker_dim=10, fused_width=8)
        names = [p.name for p in model.parameters()]
        assert "backbone.pos_table" in names

    def test_fusion_count_includes_shared_projections(self):
        # shared Q-projections plus kind extras; baseline omits the marker map
        q, d, m = 8, MICRO.embed_dim, 10
        for kind in FUSION_KINDS:
            model = _micro_model(kind)
            walk = sum(
                p.data.size for p in model.parameters() if p.name.startswith("fusion.")
            )
            assert walk == fusion_parameter_count(kind, d, m, q, MICRO.heads)
        baseline = _micro_model("none")
        walk = sum(
            p.data.size for p in baseline.parameters() if p.name.startswith("fusion.")
        )
        assert walk == q * d + q

    def test_parameter_names_unique(self):
        model = _micro_model("gated-hadamard")
        names = [p.name for p in model.parameters()]
        assert len(names) == len(set(names))

    def test_parameter_groups_partition_everything(self):
        model = _micro_model("film")
        groups = model.parameter_groups()
        assert set(groups) == {
            "frame_encoder",
            "temporal",
            "pool",
            "fusion_projections",
            "fusion_extras",
            "classifier",
        }
        flat = [p.name for ps in groups.values() for p in ps]
        assert sorted(flat) == sorted(p.name for p in model.parameters())

    def test_hadamard_has_no_fusion_extras(self):
        # empty groups are dropped from the mapping entirely
        model = _micro_model("hadamard")
        assert "fusion_extras" not in model.parameter_groups()
        assert model.fusion.extra_parameter_count() == 0


class TestForward:
    def test_probabilities_in_unit_interval(self, rng):
        model = _micro_model()
        x = _clips(rng)
        markers = rng.normal(size=(3, 10))
        p = model.forward(x, Tensor(markers)).data
        assert p.shape == (3,)
        assert ((p > 0) & (p < 1)).all()

    def test_eval_forward_is_deterministic(self, rng):
        model = _micro_model()
        x = _clips(rng)
        markers = Tensor(rng.normal(size=(3, 10)))
        a = model.forward(x, markers).data
        b = model.forward(x, markers).data
        np.testing.assert_array_equal(a, b)

    def test_train_mode_dropout_changes_output(self, rng):
        model = _micro_model()
        x = _clips(rng)
        markers = Tensor(rng.normal(size=(3, 10)))
        eval_out = model.forward(x, markers).data
        train_out = model.forward(x, markers, train=True, rng=np.random.default_rng(1)).data
        assert not np.allclose(eval_out, train_out)

    def test_concat_widens_classifier(self, rng):
        model = _micro_model("gated-concat")
        assert model.classifier.width == 16
        x = _clips(rng, n=2)
        p = model.forward(x, Tensor(rng.normal(size=(2, 10)))).data
        assert p.shape == (2,)

    def test_seed_controls_initialization(self):
        a = _micro_model(seed=0)
        b = _micro_model(seed=0)
        c = _micro_model(seed=1)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)
        assert any(
            not np.array_equal(pa.data, pc.data)
            for pa, pc in zip(a.parameters(), c.parameters())
        )


class TestMarkerStats:
    def test_standardize_applies_stored_stats(self, rng):
        model = _micro_model()
        mean = rng.normal(size=10)
        std = rng.uniform(0.5, 2.0, size=10)
        model.set_marker_stats(mean, std)
        raw = rng.normal(size=(4, 10))
        np.testing.assert_allclose(
            model.standardize_markers(raw), (raw - mean) / std, rtol=1e-15
        )

    def test_unset_stats_rejected(self, rng):
        model = _micro_model()
        with pytest.raises(InvalidConfigError):
            model.standardize_markers(rng.normal(size=(2, 10)))

    def test_wrong_width_rejected(self):
        model = _micro_model()
        with pytest.raises(ShapeMismatchError):
            model.set_marker_stats(np.zeros(3), np.ones(3))


class TestInferenceModes:
    def test_strict_refuses_video_only(self, rng):
        model = _micro_model(inference_mode="strict")
        with pytest.raises(UnsupportedInferenceModeError):
            model.forward_inference(_clips(rng))

    def test_constant_gate_needs_stored_constant(self, rng):
        model = _micro_model()
        with pytest.raises(UnsupportedInferenceModeError):
            model.forward_inference(_clips(rng))

    def test_constant_gate_substitutes_training_mean(self, rng):
        model = _micro_model()
        model.marker_constant = np.zeros(10)
        x = _clips(rng)
        got = model.forward_inference(x).data
        want = model.forward(x, Tensor(np.zeros((3, 10)))).data
        np.testing.assert_array_equal(got, want)

    def test_baseline_always_video_only(self, rng):
        for mode in ("strict", "constant-gate"):
            model = _micro_model("none", inference_mode=mode)
            p = model.forward_inference(_clips(rng)).data
            assert p.shape == (3,)

    def test_predict_proba_dispatches(self, rng):
        model = _micro_model()
        model.marker_constant = np.zeros(10)
        x = _clips(rng)
        markers = rng.normal(size=(3, 10))
        with_markers = model.predict_proba(x, Tensor(markers))
        video_only = model.predict_proba(x)
        assert with_markers.shape == video_only.shape == (3,)
        assert not np.allclose(with_markers, video_only)


class TestCheckpoint:
    def test_round_trip_reproduces_probabilities(self, rng, tmp_path):
        model = _micro_model("film-hadamard", seed=3)
        model.set_marker_stats(rng.normal(size=10), rng.uniform(0.5, 2, 10))
        model.marker_constant = rng.normal(size=10)
        path = tmp_path / "ckpt.json"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        x = _clips(rng)
        markers = Tensor(rng.normal(size=(3, 10)))
        np.testing.assert_array_equal(
            loaded.forward(x, markers).data, model.forward(x, markers).data
        )
        np.testing.assert_array_equal(
            loaded.forward_inference(x).data, model.forward_inference(x).data
        )

    def test_manifest_restores_configuration(self, tmp_path):
        model = _micro_model("bilinear-hadamard", seed=9, inference_mode="strict")
        path = tmp_path / "ckpt.json"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.fusion.kind == "bilinear-hadamard"
        assert loaded.inference_mode == "strict"
        assert loaded.backbone_config == MICRO
        assert loaded.marker_dim == 10
        assert loaded.count_parameters() == model.count_parameters()

    def test_stats_survive_round_trip(self, rng, tmp_path):
        model = _micro_model()
        mean, std = rng.normal(size=10), rng.uniform(0.5, 2, 10)
        model.set_marker_stats(mean, std)
        model.marker_constant = np.full(10, 0.25)
        path = tmp_path / "ckpt.json"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.marker_mean, mean)
        np.testing.assert_array_equal(loaded.marker_std, std)
        np.testing.assert_array_equal(loaded.marker_constant, np.full(10, 0.25))
