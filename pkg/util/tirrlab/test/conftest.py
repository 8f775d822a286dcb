# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0

import numpy as np
import pytest
import torch

from tirrlab.core import PROV_FULL, UserId, parse_event_lines, validate_events
from tirrlab.imgproc import ImageStore
from tirrlab.synthgen import generate_world, render_traits, sample_events


@pytest.fixture
def make_log():
    """Build a validated log from `ts actor target kind` lines."""
    def make(*lines, provenance=PROV_FULL):
        text = ["\t".join(line.split()) for line in lines]
        return validate_events(parse_event_lines(text), provenance)
    return make


@pytest.fixture
def uid():
    return UserId.parse


@pytest.fixture(scope="session")
def small_world():
    return generate_world(3, 30, 30, d_traits=4, drift_rate=0.0, render_noise=0.0)


@pytest.fixture(scope="session")
def small_log(small_world):
    return validate_events(sample_events(small_world, 1000, 5))


@pytest.fixture(scope="session")
def small_images(small_world):
    return ImageStore.from_world(small_world)


class TinyImages(object):
    """8x8 renderings for the miniature encoder."""
    def __init__(self, world):
        self.world = world
        self._cache = dict()

    def __getitem__(self, uid):
        if uid not in self._cache:
            pixels, _ = render_traits(self.world[uid].trait, 0, 0.0, size=8)
            self._cache[uid] = pixels.astype(np.float32)
        return self._cache[uid]

    def batch(self, uids):
        arr = np.stack([self[u] for u in uids])
        return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


@pytest.fixture(scope="session")
def tiny_images(small_world):
    return TinyImages(small_world)
