"""Helpers shared across test modules (kept out of conftest so tests can
import them explicitly)."""

import numpy as np

from smilefusion.data import (
    SyntheticConfig,
    _subject_template,
    synth_clip,
    trapezoid_envelope,
)


def random_valid_sequence(rng, noise=1e-3):
    """A noisy landmark clip in generic position: a jittered face animated
    through a random trapezoid, plus independent coordinate noise so no
    first difference or sign margin sits exactly at zero."""
    cfg = SyntheticConfig()
    face = _subject_template(rng, cfg.subject_sigma)
    env = trapezoid_envelope(
        int(rng.integers(3, 7)), int(rng.integers(2, 6)), int(rng.integers(3, 7))
    )
    label = int(rng.integers(0, 2))
    amplitude = 1.0 + cfg.amplitude_jitter * float(rng.uniform(-1.0, 1.0))
    pts = synth_clip(face, label, env, amplitude, cfg)
    return pts + rng.normal(0.0, noise, size=pts.shape)


def brute_force_phases(values):
    """Exhaustive re-derivation of the segmentation policy with plain
    loops: enumerate every maximal same-sign run of first differences,
    pick the earliest longest increasing run as onset, the earliest
    longest decreasing run at or after it as offset, and fill the
    documented fallbacks. Returns (onset, apex, offset) half-open pairs
    or raises ValueError for a constant signal."""
    diffs = [float(values[i + 1]) - float(values[i]) for i in range(len(values) - 1)]
    runs = []
    i = 0
    while i < len(diffs):
        if diffs[i] == 0.0:
            i += 1
            continue
        sign = 1 if diffs[i] > 0 else -1
        j = i
        while j < len(diffs) and diffs[j] != 0.0 and (diffs[j] > 0) == (sign > 0):
            j += 1
        runs.append((i, j, sign))
        i = j
    if not runs:
        raise ValueError("constant signal")

    def earliest_longest(candidates):
        best = None
        for s, e, _ in candidates:
            if best is None or e - s > best[1] - best[0]:
                best = (s, e)
        return best

    onset = earliest_longest([r for r in runs if r[2] > 0])
    if onset is None:
        onset = (0, 1)
    offset = earliest_longest([r for r in runs if r[2] < 0 and r[0] >= onset[1]])
    if offset is None:
        offset = (len(values) - 1, len(values))
    if offset[0] > onset[1]:
        apex = (onset[1], offset[0])
    else:
        apex = (onset[1], onset[1] + 1)
    return onset, apex, offset


def phase_features_oracle(seg, left, right, fps):
    """Independent straight-line reimplementation of the 25 per-phase
    dynamics features, written with plain python loops so it shares no
    code path with the package. Returns a list of 25 floats in the
    canonical feature order."""
    seg = [float(v) for v in seg]
    left = [float(v) for v in left]
    right = [float(v) for v in right]
    n = len(seg)

    diffs = [seg[i + 1] - seg[i] for i in range(n - 1)]
    d_plus = [d for d in diffs if d > 0]
    d_minus = [d for d in diffs if d < 0]
    vels = [d * fps for d in diffs]
    v_plus = [v for v in vels if v > 0]
    v_minus = [v for v in vels if v < 0]
    accs = [(diffs[i + 1] - diffs[i]) * fps * fps for i in range(len(diffs) - 1)]
    a_plus = [a for a in accs if a > 0]
    a_minus = [a for a in accs if a < 0]

    def ratio(num, den):
        return num / den if den else 0.0

    sum_plus = sum(d_plus)
    sum_minus_abs = -sum(d_minus)
    mean = sum(seg) / n
    var = sum((v - mean) ** 2 for v in seg) / n

    return [
        len(d_plus) / fps,
        len(d_minus) / fps,
        n / fps,
        len(d_plus) / n,
        len(d_minus) / n,
        max(seg),
        mean,
        ratio(sum_plus, len(d_plus)),
        ratio(sum_minus_abs, len(d_minus)),
        var ** 0.5,
        sum_plus,
        sum_minus_abs,
        sum_plus - sum_minus_abs,
        ratio(sum_plus, sum_plus + sum_minus_abs),
        ratio(sum_minus_abs, sum_plus + sum_minus_abs),
        max(v_plus) if v_plus else 0.0,
        max(-v for v in v_minus) if v_minus else 0.0,
        ratio(sum(v_plus), len(v_plus)),
        ratio(-sum(v_minus), len(v_minus)),
        max(a_plus) if a_plus else 0.0,
        max(-a for a in a_minus) if a_minus else 0.0,
        ratio(sum(a_plus), len(a_plus)),
        ratio(-sum(a_minus), len(a_minus)),
        (sum_plus - sum_minus_abs) * fps / n,
        abs(sum(left) - sum(right)) / n,
    ]
