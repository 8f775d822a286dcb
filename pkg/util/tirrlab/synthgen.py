# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0
#
# Synthetic dating world: users with latent traits and drifting tastes,
# schematic face renderings and an exact preference oracle.

import logging as log
from dataclasses import asdict, dataclass, fields
from typing import Tuple

import hjson
import numpy as np
from PIL import Image
from scipy.special import ndtri

from .config import SchemaValidator
from .core import YEAR_TICKS, Kind, PreferenceEvent, Side, UserId
from .errors import IoFailure, UnsupportedVersion

MANIFEST_VERSION = 1

IMAGE_SIZE = 100

# Number of visual parameters a trait vector is rendered into.
VISUAL_PARAMS = 8
# Gain of the trait -> visual parameter map before squashing.
VISUAL_GAIN = 2.5


@dataclass(frozen=True)
class WorldParams:
    seed: int = 1
    n_x: int = 200
    n_y: int = 200
    d_traits: int = 8
    drift_rate: float = 0.0
    like_scale: float = 4.0
    popularity_weight: float = 0.5
    year_ticks: int = YEAR_TICKS
    render_noise: float = 0.01
    attributes_from_traits: bool = False
    attribute_buckets: int = 4

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SyntheticUser:
    id: UserId
    trait: np.ndarray
    taste: np.ndarray
    drift: np.ndarray
    popularity: float
    profile: np.ndarray

    @property
    def side(self):
        return self.id.side


@dataclass(frozen=True, eq=False)
class RenderedImage:
    pixels: np.ndarray
    # (x0, y0, x1, y1) in pixel coordinates.
    face_bbox: Tuple[float, float, float, float]
    source_user: UserId
    variant_seed: int

    @property
    def filename(self):
        return "{}_{}.png".format(self.source_user, self.variant_seed)


def _normalize_rows(m):
    return m / np.linalg.norm(m, axis=-1, keepdims=True)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


class SyntheticWorld(object):
    """
    A population of users on both sides plus the ground-truth oracle.
    Use `generate_world` to construct one.
    """
    def __init__(self, params, users):
        self.params = params
        self.users = users
        self.x_ids = [u for u in users if u.side is Side.X]
        self.y_ids = [u for u in users if u.side is Side.Y]
        self._edges = ndtri(np.arange(1, params.attribute_buckets) /
                            params.attribute_buckets) / np.sqrt(params.d_traits)

    def ids(self, side):
        return self.x_ids if side is Side.X else self.y_ids

    def __getitem__(self, uid):
        return self.users[uid]

    def taste_at(self, uid, t):
        u = self.users[uid]
        if self.params.drift_rate == 0:
            return u.taste
        v = u.taste + t * u.drift
        return v / np.linalg.norm(v)

    def like_logit(self, actor, target, t):
        return (self.params.like_scale *
                float(np.dot(self.taste_at(actor, t), self.users[target].trait)) +
                self.params.popularity_weight * self.users[target].popularity)

    def oracle_like_prob(self, actor, target, t):
        return oracle_like_prob(self, actor, target, t)

    def oracle_match_prob(self, x, y, t):
        return oracle_match_prob(self, x, y, t)

    def like_matrix(self, judge_side, t):
        """Exhaustive oracle: probabilities of every judge on `judge_side` liking every target."""
        judges = self.ids(judge_side)
        targets = self.ids(judge_side.other())
        tastes = np.stack([self.taste_at(j, t) for j in judges])
        traits = np.stack([self.users[c].trait for c in targets])
        pop = np.array([self.users[c].popularity for c in targets])
        return sigmoid(self.params.like_scale * tastes @ traits.T +
                       self.params.popularity_weight * pop[None, :])

    def attributes(self, uid):
        """Quantized categorical attributes of a user."""
        u = self.users[uid]
        src = u.trait if self.params.attributes_from_traits else u.profile
        return tuple(int(b) for b in np.digitize(src, self._edges))

    def manifest(self, events_cfg=None, event_log_digest=None):
        m = {
            "version": MANIFEST_VERSION,
            "world": self.params.as_dict(),
            "events": dict(events_cfg or {"n_events": 0, "seed": 0, "respond_prob": 0.5}),
        }
        if event_log_digest is not None:
            m["event_log_digest"] = event_log_digest
        return m


def generate_world(seed, n_x, n_y, d_traits=8, drift_rate=0.0, **kwargs):
    """
    Draw a world. Traits, tastes and drift directions are isotropic Gaussian
    draws normalized to unit length; drift is then scaled to `drift_rate`.
    """
    params = WorldParams(seed=seed, n_x=n_x, n_y=n_y, d_traits=d_traits,
                         drift_rate=drift_rate, **kwargs)
    if n_x < 1 or n_y < 1:
        raise ValueError("Both sides need at least one user")
    rng = np.random.default_rng(seed)
    users = dict()
    for side, n in ((Side.X, n_x), (Side.Y, n_y)):
        traits = _normalize_rows(rng.standard_normal((n, d_traits)))
        tastes = _normalize_rows(rng.standard_normal((n, d_traits)))
        drifts = _normalize_rows(rng.standard_normal((n, d_traits))) * drift_rate
        popularity = rng.standard_normal(n)
        profiles = _normalize_rows(rng.standard_normal((n, d_traits)))
        for i in range(n):
            uid = UserId(side, i)
            users[uid] = SyntheticUser(uid, traits[i], tastes[i], drifts[i],
                                       float(popularity[i]), profiles[i])
    log.debug("Generated world with %d + %d users (seed %d)", n_x, n_y, seed)
    return SyntheticWorld(params, users)


def load_world(manifest):
    """Regenerate a world exactly from a manifest document."""
    manifest = SchemaValidator("world_manifest.schema.json").validate(manifest)
    if manifest["version"] != MANIFEST_VERSION:
        raise UnsupportedVersion("World manifest version {} is not supported".format(
            manifest["version"]))
    params = WorldParams.from_dict(manifest["world"])
    kwargs = params.as_dict()
    return generate_world(kwargs.pop("seed"), kwargs.pop("n_x"), kwargs.pop("n_y"),
                          kwargs.pop("d_traits"), kwargs.pop("drift_rate"), **kwargs)


def write_manifest(manifest, path):
    try:
        with open(path, "w") as f:
            hjson.dump(manifest, f)
            f.write("\n")
    except OSError as e:
        raise IoFailure("Unable to write manifest {}: {}".format(path, e))


def read_manifest(path):
    try:
        with open(path, "r") as f:
            return hjson.load(f)
    except OSError as e:
        raise IoFailure("Unable to read manifest {}: {}".format(path, e))


def oracle_like_prob(world, actor, target, t):
    return float(sigmoid(world.like_logit(actor, target, t)))


def oracle_match_prob(world, x, y, t):
    return oracle_like_prob(world, x, y, t) * oracle_like_prob(world, y, x, t)


# -------------------- Rendering --------------------

def _visual_basis(d):
    """Fixed map from trait space to the visual parameters."""
    if d == VISUAL_PARAMS:
        return np.eye(VISUAL_PARAMS)
    rng = np.random.default_rng(20211)
    basis = rng.standard_normal((VISUAL_PARAMS, d))
    if d < VISUAL_PARAMS:
        basis, _ = np.linalg.qr(basis)
    return basis


def _coverage(signed_dist):
    """Anti-aliased coverage from a signed distance in pixels."""
    return np.clip(0.5 - signed_dist, 0.0, 1.0)[..., None]


def _paint(canvas, alpha, color):
    return canvas * (1.0 - alpha) + alpha * np.asarray(color)


def render_traits(trait, variant_seed, noise=0.0, size=IMAGE_SIZE):
    """
    Render a schematic face. Every visual parameter is a smooth function of
    the trait vector; `variant_seed` shifts pose and lighting slightly.
    Returns `(pixels, face_bbox)`.
    """
    u = np.tanh(VISUAL_GAIN * _visual_basis(len(trait)) @ np.asarray(trait))
    rng = np.random.default_rng(variant_seed)
    dx, dy = rng.uniform(-0.02, 0.02, size=2)
    brightness = rng.uniform(0.95, 1.05)

    coords = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    px = float(size)

    cx, cy = 0.5 + dx, 0.52 + dy
    a = 0.40 + 0.04 * u[1]
    b = 0.44 + 0.03 * u[2]

    # Background field.
    bg = np.array([0.5 + 0.3 * u[7], 0.45, 0.5 - 0.3 * u[7]])
    canvas = np.broadcast_to(bg * (0.8 + 0.2 * yy[..., None]), (size, size, 3)).copy()

    # Face outline.
    r = np.sqrt(((xx - cx) / a)**2 + ((yy - cy) / b)**2) - 1.0
    skin = np.array([0.85 + 0.12 * u[0], 0.68 + 0.08 * u[0], 0.58 - 0.1 * u[0]])
    canvas = _paint(canvas, _coverage(r * min(a, b) * px), skin)

    # Eyes: white, then pupil.
    ex = 0.15 + 0.05 * u[3]
    er = 0.055 + 0.02 * u[4]
    for side in (-1.0, 1.0):
        d = np.sqrt((xx - cx - side * ex)**2 + (yy - cy + 0.1)**2)
        canvas = _paint(canvas, _coverage((d - er) * px), (0.97, 0.97, 0.97))
        canvas = _paint(canvas, _coverage((d - 0.5 * er) * px), (0.1, 0.1, 0.15))

    # Mouth: a parabolic band, smiling for positive curvature.
    mw = 0.16 + 0.06 * u[5]
    mc = 0.08 * u[6]
    my = cy + 0.2
    t = np.clip((xx - cx) / mw, -1.0, 1.0)
    curve = my + mc * (t**2 - 1.0)
    band = np.maximum(np.abs(yy - curve) - 0.015, np.abs(xx - cx) - mw)
    canvas = _paint(canvas, _coverage(band * px), (0.6, 0.15, 0.2))

    canvas = canvas * brightness
    if noise > 0:
        canvas = canvas + rng.normal(0.0, noise, size=canvas.shape)
    pixels = np.clip(canvas, 0.0, 1.0)
    bbox = ((cx - a) * px, (cy - b) * px, (cx + a) * px, (cy + b) * px)
    bbox = (max(bbox[0], 0.0), max(bbox[1], 0.0), min(bbox[2], px), min(bbox[3], px))
    return pixels, bbox


def render_face(world, uid, variant_seed):
    user = world[uid]
    pixels, bbox = render_traits(user.trait, variant_seed, world.params.render_noise)
    return RenderedImage(pixels, bbox, uid, variant_seed)


def profile_variant(uid):
    """Variant seed of a user's profile photo."""
    return 2 * uid.key + (0 if uid.side is Side.X else 1)


def save_png(image, path):
    data = np.round(image.pixels * 255.0).astype(np.uint8)
    try:
        Image.fromarray(data).save(path, format="PNG")
    except OSError as e:
        raise IoFailure("Unable to write image {}: {}".format(path, e))


def load_png(path):
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as e:
        raise IoFailure("Unable to read image {}: {}".format(path, e))


# -------------------- Event simulation --------------------

def sample_events(world, n_events, seed, respond_prob=0.5):
    """
    Simulate browsing. Every tick either a pending Like is answered or a
    random user views a random user of the other side and Likes with the
    oracle probability; a view without a Like emits nothing. Dislikes only
    ever answer a received Like.
    """
    rng = np.random.default_rng(seed)
    everyone = world.x_ids + world.y_ids
    events = list()
    pending = list()
    pending_set = set()
    expressed = set()
    t = 0
    max_ticks = 100 * n_events + 1000

    def respond(liker, liked):
        pending_set.discard((liker, liked))
        expressed.add((liked, liker))
        p = world.oracle_like_prob(liked, liker, t)
        kind = Kind.RECIPROCATE if rng.random() < p else Kind.DISLIKE
        events.append(PreferenceEvent(t, len(events), liked, liker, kind))

    while len(events) < n_events and t < max_ticks:
        t += 1
        if pending and rng.random() < respond_prob:
            liker, liked = pending.pop(int(rng.integers(len(pending))))
            respond(liker, liked)
            continue
        actor = everyone[int(rng.integers(len(everyone)))]
        pool = world.ids(actor.side.other())
        target = pool[int(rng.integers(len(pool)))]
        if (actor, target) in expressed:
            continue
        if (target, actor) in pending_set:
            pending.remove((target, actor))
            respond(target, actor)
            continue
        if rng.random() < world.oracle_like_prob(actor, target, t):
            expressed.add((actor, target))
            pending.append((actor, target))
            pending_set.add((actor, target))
            events.append(PreferenceEvent(t, len(events), actor, target, Kind.LIKE))

    if len(events) < n_events:
        log.warning("Simulation stopped after %d ticks with %d of %d events",
                    t, len(events), n_events)
    return events
