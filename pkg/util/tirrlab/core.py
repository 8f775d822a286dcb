# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0
#
# Domain types shared by every other module: users, preference events,
# validated logs, histories, labelled pairs and the three-way split.

import hashlib
import logging as log
import re
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Tuple

import numpy as np

from .errors import (BipartitenessViolation, DanglingReciprocation,
                     DuplicateEvent, EmptySplit, EventLogFormatError,
                     IoFailure, SplitContamination)

HISTORY_CAP = 15
# One simulated year; histories ignore anything older by default.
YEAR_TICKS = 50000

# Provenance tags of validated logs.
PROV_FULL = "full"
PROV_SIAMESE = "siamese"
PROV_MATCH = "match"
PROV_EVAL = "eval"
SPLIT_NAMES = (PROV_SIAMESE, PROV_MATCH, PROV_EVAL)

MATCH = 1
LIKE_DISLIKE = 0


class Side(str, Enum):
    X = "x"
    Y = "y"

    def other(self):
        return Side.Y if self is Side.X else Side.X


class Kind(str, Enum):
    LIKE = "LIKE"
    DISLIKE = "DISLIKE"
    RECIPROCATE = "RECIPROCATE"

    @property
    def polarity(self):
        return -1 if self is Kind.DISLIKE else 1


@dataclass(frozen=True, order=True)
class UserId:
    """A user, identified by side and an integer key (`x17`, `y3`)."""
    side: Side
    key: int

    _re = re.compile(r"^([xy])(\d+)$")

    def __str__(self):
        return "{}{}".format(self.side.value, self.key)

    @classmethod
    def parse(cls, s):
        m = cls._re.match(s)
        if not m:
            raise ValueError("Illegal user id {!r}".format(s))
        return cls(Side(m.group(1)), int(m.group(2)))


@dataclass(frozen=True, order=True)
class PreferenceEvent:
    """One timestamped directed expression; `seq` breaks timestamp ties."""
    ts: int
    seq: int
    actor: UserId
    target: UserId
    kind: Kind

    def to_line(self):
        return "{}\t{}\t{}\t{}".format(self.ts, self.actor, self.target,
                                       self.kind.value)


@dataclass(frozen=True)
class HistoryItem:
    target: UserId
    polarity: int
    ts: int


@dataclass(frozen=True)
class PreferenceHistory:
    owner: UserId
    items: Tuple[HistoryItem, ...] = ()

    def __len__(self):
        return len(self.items)


@dataclass(frozen=True)
class LabeledPair:
    x: UserId
    y: UserId
    label: int
    reference_time: int


@dataclass(frozen=True, eq=False)
class ValidatedEventLog:
    """
    An event log that passed `validate_events`. Events are sorted by
    `(ts, seq)`; `by_actor` maps every actor to the indices of its events.
    """
    events: Tuple[PreferenceEvent, ...]
    by_actor: Dict[UserId, Tuple[int, ...]]
    provenance: str = PROV_FULL
    _digest: List[str] = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def users(self):
        users = set(self.by_actor)
        users.update(e.target for e in self.events)
        return users

    def to_text(self):
        return "".join(e.to_line() + "\n" for e in self.events)

    def digest(self):
        if not self._digest:
            self._digest.append(
                hashlib.sha256(self.to_text().encode("utf-8")).hexdigest())
        return self._digest[0]

    def require_training_split(self, consumer):
        """Refuse to let `consumer` fit on evaluation events."""
        if self.provenance == PROV_EVAL:
            raise SplitContamination(
                "{} was handed events of the evaluation split".format(consumer))


@dataclass(frozen=True)
class DatasetBundle:
    siamese_set: ValidatedEventLog
    match_set: ValidatedEventLog
    eval_set: ValidatedEventLog

    def splits(self):
        return dict(zip(SPLIT_NAMES, (self.siamese_set, self.match_set, self.eval_set)))


def validate_events(events, provenance=PROV_FULL):
    """
    Check bipartiteness, reciprocation order and duplicates, and return an
    immutable log with a per-actor ordering index.
    """
    ordered = sorted(events)
    seen = set()
    # (liker, liked) -> None while unanswered, the response kind afterwards.
    likes = dict()
    by_actor = defaultdict(list)
    for idx, e in enumerate(ordered):
        if e.actor.side == e.target.side:
            raise BipartitenessViolation(
                "Event {} links two users on side {}".format(
                    e.to_line(), e.actor.side.value))
        key = (e.ts, e.actor, e.target, e.kind)
        if key in seen:
            raise DuplicateEvent("Event {} occurs twice".format(e.to_line()))
        seen.add(key)
        if e.kind is Kind.LIKE:
            if (e.actor, e.target) in likes:
                raise DuplicateEvent("{} liked {} twice".format(e.actor, e.target))
            likes[(e.actor, e.target)] = None
        else:
            liked = (e.target, e.actor)
            if liked in likes:
                if likes[liked] is not None:
                    raise DuplicateEvent("Like {} -> {} answered twice".format(
                        e.target, e.actor))
                likes[liked] = e.kind
            elif e.kind is Kind.RECIPROCATE:
                raise DanglingReciprocation(
                    "Event {} reciprocates a Like that never happened".format(
                        e.to_line()))
        by_actor[e.actor].append(idx)
    return ValidatedEventLog(
        events=tuple(ordered),
        by_actor={a: tuple(ix) for a, ix in by_actor.items()},
        provenance=provenance)


def _pair_key(e):
    return (e.actor, e.target) if e.actor < e.target else (e.target, e.actor)


def _count_matches(events):
    return sum(1 for e in events if e.kind is Kind.RECIPROCATE)


def split_three_way(log_, fractions, seed):
    """
    Partition a validated log into Siamese, match and evaluation splits.

    All events between the same two users stay in one split. Groups are
    shuffled deterministically and handed out until each split reaches its
    share of events.
    """
    fractions = [float(f) for f in fractions]
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError("Expected three non-negative fractions, got {}".format(fractions))
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("Split fractions must sum to 1, got {}".format(sum(fractions)))

    groups = defaultdict(list)
    for e in log_.events:
        groups[_pair_key(e)].append(e)
    keys = sorted(groups)
    order = np.random.default_rng(seed).permutation(len(keys))

    total = len(log_.events)
    bounds = np.cumsum(fractions) * total
    parts = ([], [], [])
    assigned = 0
    split = 0
    for i in order:
        group = groups[keys[i]]
        while split < 2 and assigned >= bounds[split]:
            split += 1
        parts[split].extend(group)
        assigned += len(group)

    logs = list()
    for name, part in zip(SPLIT_NAMES, parts):
        if _count_matches(part) == 0:
            raise EmptySplit("The {} split received no match pairs".format(name))
        logs.append(validate_events(part, provenance=name))
        log.debug("Split %s: %d events, %d matches", name, len(part),
                  _count_matches(part))
    return DatasetBundle(*logs)


def build_history(user, log_, reference_time, cap=HISTORY_CAP, max_age=YEAR_TICKS,
                  exclude=None):
    """
    The user's most recent expressions strictly before `reference_time`,
    no older than `max_age` ticks, oldest first and at most `cap` long.
    `max_age=None` lifts the age limit.
    Expressions about `exclude` are dropped before capping.
    """
    items = list()
    for idx in log_.by_actor.get(user, ()):
        e = log_.events[idx]
        if e.ts >= reference_time:
            break
        if max_age is not None and reference_time - e.ts > max_age:
            continue
        if exclude is not None and e.target == exclude:
            continue
        items.append(HistoryItem(e.target, e.kind.polarity, e.ts))
    return PreferenceHistory(user, tuple(items[-cap:] if cap > 0 else ()))


def extract_labeled_pairs(log_):
    """
    One pair per answered Like: a reciprocation gives a match, a dislike a
    like-dislike tuple. Unanswered Likes are dropped.
    """
    pending = dict()
    pairs = list()
    for e in log_.events:
        if e.kind is Kind.LIKE:
            pending[(e.actor, e.target)] = e
            continue
        like = pending.pop((e.target, e.actor), None)
        if like is None:
            continue
        label = MATCH if e.kind is Kind.RECIPROCATE else LIKE_DISLIKE
        pairs.append(LabeledPair(like.actor, like.target, label, e.ts))
    return pairs


def write_event_log(log_, path):
    try:
        with open(path, "w") as f:
            f.write("# ts\tactor\ttarget\tkind\n")
            f.write(log_.to_text())
    except OSError as e:
        raise IoFailure("Unable to write event log {}: {}".format(path, e))


def parse_event_lines(lines, origin="<lines>"):
    events = list()
    for line_no, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise EventLogFormatError(origin, line_no, "expected 4 fields")
        try:
            events.append(PreferenceEvent(int(fields[0]), line_no,
                                          UserId.parse(fields[1]),
                                          UserId.parse(fields[2]),
                                          Kind(fields[3])))
        except ValueError as e:
            raise EventLogFormatError(origin, line_no, str(e))
    return events


def read_event_log(path, provenance=PROV_FULL):
    try:
        with open(path, "r") as f:
            lines = f.readlines()
    except OSError as e:
        raise IoFailure("Unable to read event log {}: {}".format(path, e))
    return validate_events(parse_event_lines(lines, str(path)), provenance)
