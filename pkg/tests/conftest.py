"""Shared fixtures for the test suite.

The synthetic corpus fixtures are session-scoped because generation and
marker extraction dominate test time; every consumer treats them as
read-only.
"""

import numpy as np
import pytest

from smilefusion.data import SyntheticConfig, synth_generate


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A clean 16-clip corpus (4 subjects x 4 clips), no pose jitter."""
    root = tmp_path_factory.mktemp("corpus_small")
    cfg = SyntheticConfig(n_subjects=4, clips_per_subject=4, seed=7, pose_jitter=False)
    return synth_generate(cfg, root)


@pytest.fixture(scope="session")
def jittered_corpus(tmp_path_factory):
    """A clean 16-clip corpus with per-clip rigid pose jitter."""
    root = tmp_path_factory.mktemp("corpus_jitter")
    cfg = SyntheticConfig(n_subjects=4, clips_per_subject=4, seed=11, pose_jitter=True)
    return synth_generate(cfg, root)
