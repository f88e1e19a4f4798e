"""The fifteen feature-fusion strategies.

Every strategy first projects the learned video representation (width D)
and the handcrafted marker vector (width k) to a common width Q through two
shared affine maps, then combines the projected pair. Combination formulas
(fixed here, tested literally):

* concat:            [Hs ; Zs]                                   width 2Q
* gated-concat:      [g .* Hs ; (1-g) .* Zs],
                     g = sigmoid(Wg [Hs;Zs] + bg)                width 2Q
* additive:          Hs + Zs
* hadamard:          Hs .* Zs                      (no extra parameters)
* gated-hadamard:    g .* (Hs .* Zs) + (1-g) .* Hs, same gate form
* attention:         softmax over two scores (one shared linear scorer,
                     per-stream biases), convex combination a1 Hs + a2 Zs
* multi-head-attention: the same per Q/heads slice with per-head scorers
* cross-attention:   q from Hs, key/value from Zs (learned projections);
                     per-dimension scaled product q .* k / sqrt(d),
                     softmax over the slice, output a .* v  (single slice)
* multi-head-cross-attention: same with Q/heads slices
* film:              (Wg Zs + bg) .* Hs + (Wb Zs + bb)
* film-hadamard:     film output .* Zs
* bilinear:          F_q = Hs^T B_q Zs over Q learned QxQ cores
* bilinear-hadamard: bilinear output .* (Hs .* Zs)
* factorized-bilinear: (U Hs) .* (V Zs), U and V unbiased QxQ factors
* factorized-hadamard: factorized-bilinear output .* (Hs .* Zs)

A sixteenth pseudo-kind, ``none``, is the no-fusion baseline: it returns
the projected video vector untouched (width Q) and is deliberately not a
member of FUSION_KINDS.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatchError, UnknownFusionError
from .tensor import Parameter, Tensor, concat

FUSION_KINDS = (
    "concat",
    "gated-concat",
    "additive",
    "hadamard",
    "gated-hadamard",
    "attention",
    "multi-head-attention",
    "cross-attention",
    "multi-head-cross-attention",
    "film",
    "film-hadamard",
    "bilinear",
    "bilinear-hadamard",
    "factorized-bilinear",
    "factorized-hadamard",
)

BASELINE_KIND = "none"

_GATED = ("gated-concat", "gated-hadamard")
_CROSS = ("cross-attention", "multi-head-cross-attention")
_FILM = ("film", "film-hadamard")
_BILINEAR = ("bilinear", "bilinear-hadamard")
_FACTORIZED = ("factorized-bilinear", "factorized-hadamard")


def check_kind(kind: str, allow_baseline: bool = False) -> str:
    valid = FUSION_KINDS + ((BASELINE_KIND,) if allow_baseline else ())
    if kind not in valid:
        raise UnknownFusionError(
            f"unknown fusion kind {kind!r}; valid kinds: {', '.join(FUSION_KINDS)}"
        )
    return kind


def output_width(kind: str, width: int) -> int:
    """Fused vector width: concat variants double Q, the rest keep it."""
    check_kind(kind, allow_baseline=True)
    return 2 * width if kind in ("concat", "gated-concat") else width


def extra_parameter_count(kind: str, width: int, heads: int = 4) -> int:
    """Trainable scalars a kind adds beyond the two shared projections."""
    check_kind(kind, allow_baseline=True)
    q = width
    if kind in _GATED:
        return q * 2 * q + q
    if kind == "attention":
        return q + 2
    if kind == "multi-head-attention":
        return q + 2 * heads
    if kind in _CROSS:
        return 3 * (q * q + q)
    if kind in _FILM:
        return 2 * (q * q + q)
    if kind in _BILINEAR:
        return q * q * q
    if kind in _FACTORIZED:
        return 2 * q * q
    return 0  # concat, additive, hadamard, none


def he_init(rng: np.random.Generator, shape) -> np.ndarray:
    """He-normal weights: std = sqrt(2 / fan_in), fan_in = trailing dims."""
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def _linear(x: Tensor, w: Parameter, b: Parameter | None) -> Tensor:
    out = x.matmul(w.transpose())
    return out + b if b is not None else out


class FusionLayer:
    """One fusion strategy with its shared projections and extras.

    fuse() accepts single vectors or batches (leading batch axis); the
    marker argument may be omitted only for the `none` baseline.
    """

    def __init__(
        self,
        kind: str,
        in_learned: int,
        in_marker: int,
        width: int = 128,
        heads: int = 4,
        rng: np.random.Generator | None = None,
        prefix: str = "fusion",
    ):
        check_kind(kind, allow_baseline=True)
        if kind in ("multi-head-attention", "multi-head-cross-attention") and width % heads:
            raise ShapeMismatchError(
                f"width {width} not divisible by {heads} heads for {kind}"
            )
        if rng is None:
            rng = np.random.default_rng(0)
        self.kind = kind
        self.in_learned = in_learned
        self.in_marker = in_marker
        self.width = width
        self.heads = heads
        self.params: dict[str, Parameter] = {}

        q = width
        add = self._add_param
        add(prefix, "proj_h_weight", he_init(rng, (q, in_learned)))
        add(prefix, "proj_h_bias", np.zeros(q))
        if kind != BASELINE_KIND:
            # The baseline never sees markers, so it owns no marker projection.
            add(prefix, "proj_z_weight", he_init(rng, (q, in_marker)))
            add(prefix, "proj_z_bias", np.zeros(q))

        if kind in _GATED:
            add(prefix, "gate_weight", he_init(rng, (q, 2 * q)))
            add(prefix, "gate_bias", np.zeros(q))
        elif kind == "attention":
            add(prefix, "score_weight", he_init(rng, (q,)))
            # one bias per stream; a bias shared by both scores would cancel
            # inside the softmax and could never train
            add(prefix, "score_bias", np.zeros(2))
        elif kind == "multi-head-attention":
            add(prefix, "score_weight", he_init(rng, (heads, q // heads)))
            add(prefix, "score_bias", np.zeros((heads, 2)))
        elif kind in _CROSS:
            for name in ("query", "key", "value"):
                add(prefix, f"{name}_weight", he_init(rng, (q, q)))
                add(prefix, f"{name}_bias", np.zeros(q))
        elif kind in _FILM:
            add(prefix, "scale_weight", he_init(rng, (q, q)))
            add(prefix, "scale_bias", np.ones(q))
            add(prefix, "shift_weight", he_init(rng, (q, q)))
            add(prefix, "shift_bias", np.zeros(q))
        elif kind in _BILINEAR:
            add(prefix, "core", he_init(rng, (q, q, q)))
        elif kind in _FACTORIZED:
            add(prefix, "left_factor", he_init(rng, (q, q)))
            add(prefix, "right_factor", he_init(rng, (q, q)))

    def _add_param(self, prefix: str, name: str, data: np.ndarray) -> None:
        full = f"{prefix}.{name}"
        self.params[name] = Parameter(full, data)

    # -- public surface -----------------------------------------------------

    @property
    def output_width(self) -> int:
        return output_width(self.kind, self.width)

    def extra_parameter_count(self) -> int:
        return extra_parameter_count(self.kind, self.width, self.heads)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def project(self, learned: Tensor, marker: Tensor) -> tuple[Tensor, Tensor]:
        """The two shared affine maps onto the common width."""
        if self.kind == BASELINE_KIND:
            raise ShapeMismatchError("the `none` baseline has no marker projection")
        learned, lifted = _ensure_batch(learned)
        marker, _ = _ensure_batch(marker)
        p = self.params
        hs = _linear(learned, p["proj_h_weight"], p["proj_h_bias"])
        zs = _linear(marker, p["proj_z_weight"], p["proj_z_bias"])
        if lifted:
            return hs.reshape(self.width), zs.reshape(self.width)
        return hs, zs

    def project_learned(self, learned: Tensor) -> Tensor:
        learned, lifted = _ensure_batch(learned)
        p = self.params
        hs = _linear(learned, p["proj_h_weight"], p["proj_h_bias"])
        return hs.reshape(self.width) if lifted else hs

    def project_marker(self, marker: Tensor) -> Tensor:
        if self.kind == BASELINE_KIND:
            raise ShapeMismatchError("the `none` baseline has no marker projection")
        marker, lifted = _ensure_batch(marker)
        p = self.params
        zs = _linear(marker, p["proj_z_weight"], p["proj_z_bias"])
        return zs.reshape(self.width) if lifted else zs

    def fuse(self, learned: Tensor, marker: Tensor | None = None) -> Tensor:
        """Project and combine. Returns width output_width (per batch row)."""
        if self.kind == BASELINE_KIND:
            return self.project_learned(learned)
        if marker is None:
            raise ShapeMismatchError(f"fusion kind {self.kind!r} requires a marker input")
        learned, lifted = _ensure_batch(learned)
        marker, _ = _ensure_batch(marker)
        hs, zs = self.project(learned, marker)
        out = self.combine(hs, zs)
        return out.reshape(out.shape[-1]) if lifted else out

    def fuse_projected_marker(self, learned: Tensor, zs: Tensor) -> Tensor:
        """Combine with an already-projected marker (constant-gate inference)."""
        if self.kind == BASELINE_KIND:
            return self.project_learned(learned)
        learned, lifted = _ensure_batch(learned)
        zs, _ = _ensure_batch(zs)
        hs = _linear(learned, self.params["proj_h_weight"], self.params["proj_h_bias"])
        out = self.combine(hs, zs)
        return out.reshape(out.shape[-1]) if lifted else out

    # -- combination rules ---------------------------------------------------

    def combine(self, hs: Tensor, zs: Tensor) -> Tensor:
        """Apply the kind's formula to projected batches [B, Q]."""
        kind = self.kind
        if kind == "concat":
            return concat([hs, zs], axis=1)
        if kind == "gated-concat":
            g = self._gate(hs, zs)
            return concat([g * hs, (1.0 - g) * zs], axis=1)
        if kind == "additive":
            return hs + zs
        if kind == "hadamard":
            return hs * zs
        if kind == "gated-hadamard":
            g = self._gate(hs, zs)
            return g * (hs * zs) + (1.0 - g) * hs
        if kind == "attention":
            a = self._pair_weights(hs, zs)
            return a[:, 0:1] * hs + a[:, 1:2] * zs
        if kind == "multi-head-attention":
            return self._multi_head_pair(hs, zs)
        if kind in _CROSS:
            return self._cross_attention(hs, zs)
        if kind in _FILM:
            p = self.params
            gamma = _linear(zs, p["scale_weight"], p["scale_bias"])
            beta = _linear(zs, p["shift_weight"], p["shift_bias"])
            out = gamma * hs + beta
            return out * zs if kind == "film-hadamard" else out
        if kind in _BILINEAR:
            out = self._bilinear(hs, zs)
            return out * (hs * zs) if kind == "bilinear-hadamard" else out
        if kind in _FACTORIZED:
            p = self.params
            out = _linear(hs, p["left_factor"], None) * _linear(zs, p["right_factor"], None)
            return out * (hs * zs) if kind == "factorized-hadamard" else out
        if kind == BASELINE_KIND:
            return hs
        raise UnknownFusionError(kind)  # unreachable: kind checked at init

    def _gate(self, hs: Tensor, zs: Tensor) -> Tensor:
        p = self.params
        both = concat([hs, zs], axis=1)
        return _linear(both, p["gate_weight"], p["gate_bias"]).sigmoid()

    def _pair_weights(self, hs: Tensor, zs: Tensor) -> Tensor:
        """[B, 2] convex weights from the shared scorer."""
        p = self.params
        w, b = p["score_weight"], p["score_bias"]
        score_h = (hs * w).sum(axis=1, keepdims=True)
        score_z = (zs * w).sum(axis=1, keepdims=True)
        scores = concat([score_h, score_z], axis=1) + b
        return scores.softmax_over_axis(1)

    def _multi_head_pair(self, hs: Tensor, zs: Tensor) -> Tensor:
        p = self.params
        batch = hs.shape[0]
        h, dh = self.heads, self.width // self.heads
        hs3 = hs.reshape(batch, h, dh)
        zs3 = zs.reshape(batch, h, dh)
        w, b = p["score_weight"], p["score_bias"]
        score_h = (hs3 * w).sum(axis=2, keepdims=True)
        score_z = (zs3 * w).sum(axis=2, keepdims=True)
        a = (concat([score_h, score_z], axis=2) + b).softmax_over_axis(2)
        out = a[:, :, 0:1] * hs3 + a[:, :, 1:2] * zs3
        return out.reshape(batch, self.width)

    def _cross_attention(self, hs: Tensor, zs: Tensor) -> Tensor:
        p = self.params
        batch = hs.shape[0]
        n_slices = self.heads if self.kind == "multi-head-cross-attention" else 1
        dh = self.width // n_slices
        q = _linear(hs, p["query_weight"], p["query_bias"]).reshape(batch, n_slices, dh)
        k = _linear(zs, p["key_weight"], p["key_bias"]).reshape(batch, n_slices, dh)
        v = _linear(zs, p["value_weight"], p["value_bias"]).reshape(batch, n_slices, dh)
        weights = (q * k).scale(1.0 / np.sqrt(dh)).softmax_over_axis(2)
        return (weights * v).reshape(batch, self.width)

    def _bilinear(self, hs: Tensor, zs: Tensor) -> Tensor:
        core = self.params["core"]
        q = self.width
        batch = hs.shape[0]
        # F[b, q] = sum_ij Hs[b, i] core[q, i, j] Zs[b, j]
        core_mat = core.transpose(1, 0, 2).reshape(q, q * q)
        mixed = hs.matmul(core_mat).reshape(batch, q, q)
        return (mixed * zs.reshape(batch, 1, q)).sum(axis=2)


def _ensure_batch(x: Tensor) -> tuple[Tensor, bool]:
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.ndim == 1:
        return x.reshape(1, x.shape[0]), True
    if x.ndim == 2:
        return x, False
    raise ShapeMismatchError(f"expected vector or batch of vectors, got {x.shape}")
