# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0

import json
import logging as log
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .core import HISTORY_CAP
from .errors import DegenerateBbox, IoFailure, MissingImage, SequenceTooLong
from .synthgen import load_png, profile_variant, render_face

TENSOR_SIZE = 100
STEP_DIM = 128


@dataclass(frozen=True, eq=False)
class PaddedSequence:
    steps: np.ndarray
    mask: np.ndarray


def to_image_tensor(values):
    """Clamp to [0, 1] and check the 100x100x3 RGB shape."""
    values = np.clip(np.asarray(values, dtype=np.float32), 0.0, 1.0)
    if values.shape != (TENSOR_SIZE, TENSOR_SIZE, 3):
        raise ValueError("Image tensor has shape {}".format(values.shape))
    return values


def crop_and_scale(image, face_bbox):
    """
    Expand the face box to a square around its center, crop it and resize
    bilinearly to 100x100. Square regions reaching past the border are
    shifted back inside; if the image is too small they are zero padded.
    """
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape[:2]
    x0, y0, x1, y1 = (float(v) for v in face_bbox)
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        raise DegenerateBbox("Face box {} has zero area".format(face_bbox))
    if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
        raise DegenerateBbox("Face box {} exceeds the {}x{} image".format(face_bbox, w, h))

    side = int(round(max(x1 - x0, y1 - y0)))
    side = max(side, 1)
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    left = int(round(cx - side / 2.0))
    top = int(round(cy - side / 2.0))
    left = min(max(left, 0), max(w - side, 0))
    top = min(max(top, 0), max(h - side, 0))
    crop = np.zeros((side, side, 3), dtype=np.float32)
    patch = image[top:top + side, left:left + side]
    crop[:patch.shape[0], :patch.shape[1]] = patch

    if side != TENSOR_SIZE:
        t = torch.from_numpy(crop).permute(2, 0, 1).unsqueeze(0)
        t = F.interpolate(t, size=(TENSOR_SIZE, TENSOR_SIZE), mode="bilinear",
                          align_corners=False)
        crop = t.squeeze(0).permute(1, 2, 0).numpy()
    return to_image_tensor(crop)


def pad_and_mask(vectors, length=HISTORY_CAP, dim=STEP_DIM):
    """Prepend zero steps up to `length`; the mask is true on real steps."""
    if len(vectors) > length:
        raise SequenceTooLong("{} steps exceed the sequence length {}".format(
            len(vectors), length))
    steps = np.zeros((length, dim), dtype=np.float32)
    mask = np.zeros(length, dtype=bool)
    n = len(vectors)
    if n:
        steps[length - n:] = np.stack([np.asarray(v, dtype=np.float32) for v in vectors])
        mask[length - n:] = True
    return PaddedSequence(steps, mask)


class ImageStore(object):
    """
    Encoder-ready profile images by user. `loader(uid)` returns raw pixels and
    the face box, or None when the user has no image. Results are cached.
    """
    def __init__(self, loader):
        self.loader = loader
        self._cache = dict()

    def __getitem__(self, uid):
        if uid not in self._cache:
            raw = self.loader(uid)
            if raw is None:
                raise MissingImage("No image for user {}".format(uid))
            pixels, bbox = raw
            self._cache[uid] = crop_and_scale(pixels, bbox)
        return self._cache[uid]

    def __contains__(self, uid):
        try:
            self[uid]
        except MissingImage:
            return False
        return True

    def batch(self, uids):
        """Stack images as an NCHW float tensor."""
        arr = np.stack([self[u] for u in uids])
        return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()

    @classmethod
    def from_world(cls, world):
        def loader(uid):
            if uid not in world.users:
                return None
            img = render_face(world, uid, profile_variant(uid))
            return img.pixels, img.face_bbox
        return cls(loader)

    @classmethod
    def from_directory(cls, image_dir):
        """Load PNGs named in the directory's `index.json`."""
        try:
            with open(image_dir / "index.json", "r") as f:
                index = json.load(f)
        except OSError as e:
            raise IoFailure("Unable to read image index: {}".format(e))

        def loader(uid):
            entry = index.get(str(uid))
            if entry is None:
                return None
            return load_png(image_dir / entry["file"]), entry["bbox"]
        log.debug("Image index lists %d users", len(index))
        return cls(loader)