"""The learned video path and the full classifier.

Landmark clips (fixed length T, P points, xyz) pass through a shared
per-frame two-layer perceptron, a stack of pre-norm self-attention blocks
over time, temporal mean pooling with an affine map to the final video
representation, fusion with the handcrafted marker vector, and a
layer-normalized sigmoid head.

The per-frame perceptron deliberately stands in for a heavyweight spatial
point-cloud encoder: the behavior under study is the fusion mechanism, and
the backbone interface (encode_frames / encode_temporal / pool_project)
admits richer encoders without touching anything downstream.

Two inference modes are recorded on the model and its checkpoints:
``strict`` refuses to run without marker input (fusion is part of the
decision function); ``constant-gate`` substitutes the training-set mean of
the standardized marker vector so inference is video-only.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    InvalidConfigError,
    ShapeMismatchError,
    UnsupportedInferenceModeError,
)
from .fusion import BASELINE_KIND, FusionLayer, check_kind, he_init
from .tensor import Parameter, Tensor, load_params, save_params

INFERENCE_MODES = ("strict", "constant-gate")

MARKER_DIM_DEFAULT = 225


@dataclass
class BackboneConfig:
    input_points: int = 11
    spatial_dim: int = 128
    embed_dim: int = 256
    temporal_blocks: int = 3
    heads: int = 4
    dropout: float = 0.1
    seq_len: int = 16
    ff_multiple: int = 4
    positional: bool = False

    def validate(self) -> "BackboneConfig":
        if self.spatial_dim % self.heads:
            raise InvalidConfigError(
                f"spatial_dim {self.spatial_dim} must divide into {self.heads} heads"
            )
        if self.seq_len < 2:
            raise InvalidConfigError(f"seq_len must be >= 2, got {self.seq_len}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        for name in ("input_points", "spatial_dim", "embed_dim", "ff_multiple"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be >= 1")
        if self.temporal_blocks < 0:
            raise InvalidConfigError("temporal_blocks must be >= 0")
        return self


class _ParamRegistry:
    """Flat name -> Parameter map; names must be unique within a model."""

    def __init__(self):
        self.by_name: dict[str, Parameter] = {}

    def add(self, name: str, data: np.ndarray) -> Parameter:
        if name in self.by_name:
            raise InvalidConfigError(f"duplicate parameter name {name!r}")
        p = Parameter(name, np.asarray(data, dtype=np.float64))
        self.by_name[name] = p
        return p

    def adopt(self, p: Parameter) -> None:
        if p.name in self.by_name:
            raise InvalidConfigError(f"duplicate parameter name {p.name!r}")
        self.by_name[p.name] = p


def _lift_frames(x) -> tuple[Tensor, bool]:
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.ndim == 3:
        return x.reshape(1, *x.shape), True
    if x.ndim == 4:
        return x, False
    raise ShapeMismatchError(f"expected [T,P,3] or [B,T,P,3], got {x.shape}")


def _lift_rows(x) -> tuple[Tensor, bool]:
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.ndim == 2:
        return x.reshape(1, *x.shape), True
    if x.ndim == 3:
        return x, False
    raise ShapeMismatchError(f"expected [T,d] or [B,T,d], got {x.shape}")


class Backbone:
    """Frame encoder + temporal attention stack + pooled projection."""

    def __init__(self, config: BackboneConfig, rng: np.random.Generator, registry: _ParamRegistry):
        self.config = config.validate()
        cfg = self.config
        ds, ff = cfg.spatial_dim, cfg.spatial_dim * cfg.ff_multiple
        add = registry.add

        self.frame_w1 = add("backbone.frame.w1", he_init(rng, (ds, 3 * cfg.input_points)))
        self.frame_b1 = add("backbone.frame.b1", np.zeros(ds))
        self.frame_w2 = add("backbone.frame.w2", he_init(rng, (ds, ds)))
        self.frame_b2 = add("backbone.frame.b2", np.zeros(ds))

        self.blocks = []
        for i in range(cfg.temporal_blocks):
            pre = f"backbone.block{i}"
            block = {
                "ln1_gain": add(f"{pre}.ln1_gain", np.ones(ds)),
                "ln1_bias": add(f"{pre}.ln1_bias", np.zeros(ds)),
                "ln2_gain": add(f"{pre}.ln2_gain", np.ones(ds)),
                "ln2_bias": add(f"{pre}.ln2_bias", np.zeros(ds)),
                "ff_w1": add(f"{pre}.ff_w1", he_init(rng, (ff, ds))),
                "ff_b1": add(f"{pre}.ff_b1", np.zeros(ff)),
                "ff_w2": add(f"{pre}.ff_w2", he_init(rng, (ds, ff))),
                "ff_b2": add(f"{pre}.ff_b2", np.zeros(ds)),
            }
            # No key bias: softmax is invariant to a per-query constant, so a
            # bias on keys can never influence the output and would only sit
            # in the model as dead weight.
            for name in ("query", "key", "value", "out"):
                block[f"{name}_w"] = add(f"{pre}.{name}_w", he_init(rng, (ds, ds)))
                if name != "key":
                    block[f"{name}_b"] = add(f"{pre}.{name}_b", np.zeros(ds))
            self.blocks.append(block)

        if cfg.positional:
            # Starts as a no-op and learns per-position offsets.
            self.pos_table = add("backbone.pos_table", np.zeros((cfg.seq_len, ds)))
        else:
            self.pos_table = None

        self.pool_w = add("backbone.pool.w", he_init(rng, (cfg.embed_dim, ds)))
        self.pool_b = add("backbone.pool.b", np.zeros(cfg.embed_dim))

    # -- stages ---------------------------------------------------------------

    def encode_frames(self, x) -> Tensor:
        """Shared perceptron per frame: [.., T, P, 3] -> [.., T, spatial]."""
        x, lifted = _lift_frames(x)
        cfg = self.config
        b, t = x.shape[0], x.shape[1]
        if t != cfg.seq_len or x.shape[2] != cfg.input_points or x.shape[3] != 3:
            raise ShapeMismatchError(
                f"expected [{cfg.seq_len}, {cfg.input_points}, 3] frames, got {x.shape[1:]}"
            )
        flat = x.reshape(b, t, 3 * cfg.input_points)
        hidden = (flat.matmul(self.frame_w1.transpose()) + self.frame_b1).relu()
        out = hidden.matmul(self.frame_w2.transpose()) + self.frame_b2
        return out.reshape(t, cfg.spatial_dim) if lifted else out

    def encode_temporal(self, s, train: bool = False, rng=None) -> Tensor:
        """Pre-norm self-attention blocks with residuals, full attention."""
        s, lifted = _lift_rows(s)
        cfg = self.config
        if s.shape[1] != cfg.seq_len or s.shape[2] != cfg.spatial_dim:
            raise ShapeMismatchError(
                f"expected [{cfg.seq_len}, {cfg.spatial_dim}] rows, got {s.shape[1:]}"
            )
        if self.pos_table is not None:
            s = s + self.pos_table
        for block in self.blocks:
            attended = self._self_attention(self._affine_norm(s, block, "ln1"), block)
            s = s + attended.dropout(cfg.dropout, train, rng)
            ff_out = self._feed_forward(self._affine_norm(s, block, "ln2"), block)
            s = s + ff_out.dropout(cfg.dropout, train, rng)
        return s.reshape(cfg.seq_len, cfg.spatial_dim) if lifted else s

    def pool_project(self, rows) -> Tensor:
        """Temporal mean then affine map to the video representation."""
        rows, lifted = _lift_rows(rows)
        pooled = rows.mean_over_axis(1)
        out = pooled.matmul(self.pool_w.transpose()) + self.pool_b
        return out.reshape(self.config.embed_dim) if lifted else out

    # -- internals -------------------------------------------------------------

    def _affine_norm(self, s: Tensor, block: dict, which: str) -> Tensor:
        return s.layer_norm(-1) * block[f"{which}_gain"] + block[f"{which}_bias"]

    def _self_attention(self, y: Tensor, block: dict) -> Tensor:
        cfg = self.config
        b, t = y.shape[0], y.shape[1]
        h, dh = cfg.heads, cfg.spatial_dim // cfg.heads

        def heads_of(w, bias=None):
            proj = y.matmul(block[w].transpose())
            if bias is not None:
                proj = proj + block[bias]
            return proj.reshape(b, t, h, dh).transpose(0, 2, 1, 3)

        q = heads_of("query_w", "query_b")
        k = heads_of("key_w")
        v = heads_of("value_w", "value_b")
        scores = q.matmul(k.transpose(0, 1, 3, 2)).scale(1.0 / np.sqrt(dh))
        weights = scores.softmax_over_axis(3)
        context = weights.matmul(v).transpose(0, 2, 1, 3).reshape(b, t, cfg.spatial_dim)
        return context.matmul(block["out_w"].transpose()) + block["out_b"]

    def _feed_forward(self, y: Tensor, block: dict) -> Tensor:
        hidden = (y.matmul(block["ff_w1"].transpose()) + block["ff_b1"]).relu()
        return hidden.matmul(block["ff_w2"].transpose()) + block["ff_b2"]


class ClassifierHead:
    """Affine layer norm over the fused width, then a sigmoid logit."""

    def __init__(self, width: int, rng: np.random.Generator, registry: _ParamRegistry):
        self.width = width
        self.ln_gain = registry.add("classifier.ln_gain", np.ones(width))
        self.ln_bias = registry.add("classifier.ln_bias", np.zeros(width))
        self.weight = registry.add("classifier.weight", he_init(rng, (1, width)))
        self.bias = registry.add("classifier.bias", np.zeros(()))

    def classify(self, fused) -> Tensor:
        if not isinstance(fused, Tensor):
            fused = Tensor(fused)
        single = fused.ndim == 1
        if single:
            fused = fused.reshape(1, fused.shape[0])
        if fused.shape[1] != self.width:
            raise ShapeMismatchError(
                f"classifier expects width {self.width}, got {fused.shape[1]}"
            )
        normed = fused.layer_norm(-1) * self.ln_gain + self.ln_bias
        logits = normed.matmul(self.weight.transpose()) + self.bias
        probs = logits.reshape(logits.shape[0]).sigmoid()
        return probs.reshape(()) if single else probs


class SmileModel:
    """Backbone + fusion + head, with marker standardization baked in.

    marker_mean / marker_std (set by training) standardize raw descriptors;
    marker_constant is the training-set mean of the standardized vectors,
    used by constant-gate video-only inference.
    """

    def __init__(
        self,
        backbone_config: BackboneConfig | None = None,
        fusion_kind: str = "hadamard",
        marker_dim: int = MARKER_DIM_DEFAULT,
        fused_width: int = 128,
        inference_mode: str = "constant-gate",
        seed: int = 0,
    ):
        check_kind(fusion_kind, allow_baseline=True)
        if inference_mode not in INFERENCE_MODES:
            raise InvalidConfigError(
                f"inference_mode must be one of {INFERENCE_MODES}, got {inference_mode!r}"
            )
        self.backbone_config = (backbone_config or BackboneConfig()).validate()
        self.fusion_kind = fusion_kind
        self.marker_dim = marker_dim
        self.fused_width = fused_width
        self.inference_mode = inference_mode
        self.seed = int(seed)

        # Stream 0 of the model seed; training uses streams 1 (shuffling)
        # and 2 (dropout) so the three never collide.
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, 0)))
        self._registry = _ParamRegistry()
        self.backbone = Backbone(self.backbone_config, rng, self._registry)
        self.fusion = FusionLayer(
            fusion_kind,
            in_learned=self.backbone_config.embed_dim,
            in_marker=marker_dim,
            width=fused_width,
            heads=self.backbone_config.heads,
            rng=rng,
        )
        for p in self.fusion.parameters():
            self._registry.adopt(p)
        self.classifier = ClassifierHead(self.fusion.output_width, rng, self._registry)

        self.marker_mean: np.ndarray | None = None
        self.marker_std: np.ndarray | None = None
        self.marker_constant: np.ndarray | None = None

    # -- parameters ------------------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self._registry.by_name.values())

    def parameter_groups(self) -> dict[str, list[Parameter]]:
        groups = {
            "frame_encoder": [],
            "temporal": [],
            "pool": [],
            "fusion_projections": [],
            "fusion_extras": [],
            "classifier": [],
        }
        for p in self.parameters():
            if p.name.startswith("backbone.frame."):
                groups["frame_encoder"].append(p)
            elif p.name.startswith("backbone.pool."):
                groups["pool"].append(p)
            elif p.name.startswith("backbone."):
                groups["temporal"].append(p)
            elif p.name.startswith("fusion.proj_"):
                groups["fusion_projections"].append(p)
            elif p.name.startswith("fusion."):
                groups["fusion_extras"].append(p)
            else:
                groups["classifier"].append(p)
        return {k: v for k, v in groups.items() if v}

    def count_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    # -- marker handling ---------------------------------------------------------

    def set_marker_stats(self, mean: np.ndarray, std: np.ndarray) -> None:
        mean = np.asarray(mean, dtype=np.float64)
        std = np.asarray(std, dtype=np.float64)
        if mean.shape != (self.marker_dim,) or std.shape != (self.marker_dim,):
            raise ShapeMismatchError(
                f"marker stats must have shape ({self.marker_dim},)"
            )
        self.marker_mean = mean
        self.marker_std = std

    def standardize_markers(self, raw: np.ndarray) -> np.ndarray:
        if self.marker_mean is None or self.marker_std is None:
            raise InvalidConfigError("marker statistics not set; train or load first")
        return (np.asarray(raw, dtype=np.float64) - self.marker_mean) / self.marker_std

    # -- forward paths -------------------------------------------------------------

    def video_representation(self, x, train: bool = False, rng=None) -> Tensor:
        encoded = self.backbone.encode_frames(x)
        temporal = self.backbone.encode_temporal(encoded, train=train, rng=rng)
        return self.backbone.pool_project(temporal)

    def forward(self, x, markers, train: bool = False, rng=None) -> Tensor:
        """Probability per sequence, from video plus standardized markers."""
        rep = self.video_representation(x, train=train, rng=rng)
        fused = self.fusion.fuse(rep, markers)
        return self.classifier.classify(fused)

    def forward_inference(self, x) -> Tensor:
        """Video-only probability, honoring the recorded inference mode."""
        rep = self.video_representation(x, train=False)
        if self.fusion.kind == BASELINE_KIND:
            return self.classifier.classify(self.fusion.fuse(rep))
        if self.inference_mode == "strict":
            raise UnsupportedInferenceModeError(
                f"fusion kind {self.fusion.kind!r} was trained in strict mode and "
                "requires marker input at test time"
            )
        if self.marker_constant is None:
            raise UnsupportedInferenceModeError(
                "constant-gate inference needs the stored training-set marker mean; "
                "train the model or load a trained checkpoint"
            )
        batch = 1 if rep.ndim == 1 else rep.shape[0]
        constant = np.broadcast_to(self.marker_constant, (batch, self.marker_dim)).copy()
        markers = Tensor(constant if rep.ndim > 1 else constant[0])
        fused = self.fusion.fuse(rep, markers)
        return self.classifier.classify(fused)

    def predict_proba(self, x, markers=None) -> np.ndarray:
        """Eval-mode probabilities as a plain array; video-only when no
        markers are given (subject to the inference mode)."""
        if markers is None:
            return np.atleast_1d(self.forward_inference(x).data)
        return np.atleast_1d(self.forward(x, markers).data)


# -- parameter accounting ---------------------------------------------------------


def backbone_parameter_count(cfg: BackboneConfig) -> int:
    ds, ff = cfg.spatial_dim, cfg.spatial_dim * cfg.ff_multiple
    frame = ds * 3 * cfg.input_points + ds + ds * ds + ds
    block = (
        4 * ds  # two affine layer norms
        + 4 * ds * ds + 3 * ds  # q/k/v/out projections, no key bias
        + ff * ds + ff + ds * ff + ds  # feed-forward
    )
    positional = cfg.seq_len * ds if cfg.positional else 0
    pool = cfg.embed_dim * ds + cfg.embed_dim
    return frame + cfg.temporal_blocks * block + positional + pool


def fusion_parameter_count(kind: str, embed_dim: int, marker_dim: int, width: int, heads: int) -> int:
    from .fusion import extra_parameter_count

    shared = width * embed_dim + width
    if kind != BASELINE_KIND:
        shared += width * marker_dim + width
    return shared + extra_parameter_count(kind, width, heads)


def classifier_parameter_count(width: int) -> int:
    return 2 * width + width + 1


def model_parameter_count(
    cfg: BackboneConfig, fusion_kind: str, marker_dim: int, width: int
) -> int:
    """Closed-form total; must match SmileModel.count_parameters exactly."""
    from .fusion import output_width

    return (
        backbone_parameter_count(cfg)
        + fusion_parameter_count(fusion_kind, cfg.embed_dim, marker_dim, width, cfg.heads)
        + classifier_parameter_count(output_width(fusion_kind, width))
    )


def auxiliary_head_parameter_count(embed_dim: int = 256, head_out: int = 216) -> int:
    """A marker-regression head: linear embed->head_out plus an affine
    layer norm on the embedding. At the defaults this is exactly 56,024."""
    return embed_dim * head_out + head_out + 2 * embed_dim


# -- checkpoints --------------------------------------------------------------------


def save_checkpoint(model: SmileModel, path) -> None:
    manifest = {
        "backbone_config": asdict(model.backbone_config),
        "fusion_kind": model.fusion_kind,
        "marker_dim": model.marker_dim,
        "fused_width": model.fused_width,
        "inference_mode": model.inference_mode,
        "seed": model.seed,
        "marker_mean": None if model.marker_mean is None else model.marker_mean.tolist(),
        "marker_std": None if model.marker_std is None else model.marker_std.tolist(),
        "marker_constant": (
            None if model.marker_constant is None else model.marker_constant.tolist()
        ),
    }
    save_params(model.parameters(), path, extra={"manifest": manifest})


def load_checkpoint(path) -> SmileModel:
    params, extra = load_params(path)
    manifest = extra.get("manifest")
    if manifest is None:
        raise InvalidConfigError(f"checkpoint {path} has no manifest")
    model = SmileModel(
        backbone_config=BackboneConfig(**manifest["backbone_config"]),
        fusion_kind=manifest["fusion_kind"],
        marker_dim=manifest["marker_dim"],
        fused_width=manifest["fused_width"],
        inference_mode=manifest["inference_mode"],
        seed=manifest.get("seed", 0),
    )
    by_name = {p.name: p for p in model.parameters()}
    loaded = {p.name: p for p in params}
    missing = sorted(set(by_name) - set(loaded))
    extra_names = sorted(set(loaded) - set(by_name))
    if missing or extra_names:
        raise InvalidConfigError(
            f"checkpoint mismatch: missing {missing[:3]}, unexpected {extra_names[:3]}"
        )
    for name, p in by_name.items():
        src = loaded[name].data
        if src.shape != p.data.shape:
            raise ShapeMismatchError(
                f"checkpoint param {name}: shape {src.shape} != {p.data.shape}"
            )
        p.data[...] = src
    for key in ("marker_mean", "marker_std", "marker_constant"):
        value = manifest.get(key)
        if value is not None:
            setattr(model, key, np.asarray(value, dtype=np.float64))
    return model


def checkpoint_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)["manifest"]
