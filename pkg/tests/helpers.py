"""Small builders shared by the test modules."""

import numpy as np

from acnet.data import GroundingSample, prepare
from acnet.nacs import CaptionCandidate
from acnet.temporal import ClipSequence, candidate_interval


def random_interval(rng, n_clips, duration):
    i = int(rng.integers(0, n_clips))
    j = int(rng.integers(i, n_clips))
    return candidate_interval(i, j, n_clips, duration)


def make_sample(config, n_aux=2, seed=0, d_v=6, d_s=5, duration=None, sample_id="s0", video_id="v0"):
    rng = np.random.default_rng(seed)
    n = config.n_clips
    duration = float(duration or n)
    aux = [CaptionCandidate(rng.normal(size=d_s), random_interval(rng, n, duration), 0.9, 0.9)
           for _ in range(n_aux)]
    return GroundingSample(sample_id, video_id, ClipSequence(rng.normal(size=(n, d_v)), duration),
                           rng.normal(size=d_s), random_interval(rng, n, duration), aux)


def make_prepared(config, n_aux=2, seed=0, **kw):
    return prepare(make_sample(config, n_aux, seed, **kw), config)


def make_batch(config, size, n_aux=2, seed=0, **kw):
    return [make_prepared(config, n_aux, seed + k, sample_id=f"s{k}", video_id=f"v{k}", **kw)
            for k in range(size)]

