import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from voxgan.models import ScaleProfile

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# Narrow networks for fast unit tests; same topology as the tiny profile.
MICRO = ScaleProfile("micro", resolution=16, latent_dim=8, base_channels=4, image_size=64)
MICRO8 = ScaleProfile("micro8", resolution=8, latent_dim=6, base_channels=3, image_size=64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def nested_conv3d(x, w, stride, pad):
    """Direct summation oracle for 3-d cross-correlation."""
    n, cin, d, h, wd = x.shape
    cout, _, kd, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
    od = (d + 2 * pad - kd) // stride + 1
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, od, oh, ow))
    for b in range(n):
        for o in range(cout):
            for z in range(od):
                for y in range(oh):
                    for xx in range(ow):
                        acc = 0.0
                        for c in range(cin):
                            for a in range(kd):
                                for bb in range(kh):
                                    for e in range(kw):
                                        acc += xp[b, c, z * stride + a, y * stride + bb, xx * stride + e] * w[o, c, a, bb, e]
                        out[b, o, z, y, xx] = acc
    return out
