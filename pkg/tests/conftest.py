"""Shared fixtures: a tiny on-disk corpus, rngs, and thread pinning.

Thread pinning happens before numpy is imported anywhere in the test
process: bit-reproducibility claims only hold single-threaded.
"""

import os

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest

from psanet import data


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """6+6 train, 4+4 dev, 4+4 eval clips; enough for plumbing tests."""
    root = str(tmp_path_factory.mktemp("corpus"))
    data.synth_dataset(6, 101, root, split="train")
    data.synth_dataset(4, 102, root, split="dev")
    data.synth_dataset(4, 103, root, split="eval")
    return data.load_manifest(root)


@pytest.fixture(scope="session")
def clip_bank():
    """A handful of in-memory clips spanning both classes, no disk."""
    from psanet.audio import AudioClip, biquad_filter, codec_proxy

    clips = []
    for i in range(4):
        rng = np.random.default_rng([7, i])
        x = data._synth_voiced(64000, 16000, rng)
        clips.append(AudioClip(x, 16000))
    spoofed = [codec_proxy(biquad_filter(c, "lowpass", 3400.0),
                           bit_depth=8, downrate_factor=2) for c in clips[:2]]
    return clips + spoofed
