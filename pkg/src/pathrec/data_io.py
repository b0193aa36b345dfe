"""Raw interaction parsing, sessionization, splitting and training-instance generation."""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400
SPLIT_FRACTIONS = (0.75, 0.10, 0.15)


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    timestamp: int


@dataclass(frozen=True)
class Session:
    user: str
    items: tuple[str, ...]
    day: int

    def to_json(self) -> dict:
        return {"user": self.user, "day": self.day, "items": list(self.items)}

    @classmethod
    def from_json(cls, obj: dict) -> "Session":
        return cls(user=obj["user"], items=tuple(obj["items"]), day=int(obj["day"]))


@dataclass(frozen=True)
class TrainInstance:
    prefix: tuple[str, ...]
    t_list: tuple[str, ...]
    user: str

    @property
    def target(self) -> str:
        return self.t_list[0]

    def to_json(self) -> dict:
        return {"prefix": list(self.prefix), "t_list": list(self.t_list), "user": self.user}

    @classmethod
    def from_json(cls, obj: dict) -> "TrainInstance":
        return cls(prefix=tuple(obj["prefix"]), t_list=tuple(obj["t_list"]), user=obj["user"])


@dataclass
class SessionReport:
    n_events: int = 0
    n_items_dropped: int = 0
    n_events_dropped: int = 0
    n_sessions_raw: int = 0
    n_sessions_short: int = 0
    n_sessions: int = 0
    extra: dict = field(default_factory=dict)


def load_interactions(path) -> list[Interaction]:
    """Read a (user, item, timestamp) TSV; blank lines are skipped."""
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(cols)}")
            user, item, ts = (c.strip() for c in cols)
            if not user or not item:
                raise DataFormatError(f"{path}:{lineno}: empty user or item id")
            try:
                timestamp = int(ts)
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: unparsable timestamp {ts!r}") from None
            if timestamp < 0:
                raise DataFormatError(f"{path}:{lineno}: negative timestamp {timestamp}")
            events.append(Interaction(user, item, timestamp))
    return events


def build_sessions(events: list[Interaction], min_item_count: int = 5, report: SessionReport | None = None) -> list[Session]:
    """Group events into per-user UTC days, drop rare items, then drop sessions shorter than 2.

    Both filters run once, in that order. Sessions come back ordered by (user, day) and
    items inside a session by timestamp with input order breaking ties.
    """
    if min_item_count < 1:
        raise ValueError("min_item_count must be >= 1")
    report = report if report is not None else SessionReport()
    report.n_events = len(events)

    counts = Counter(e.item_id for e in events)
    rare = {item for item, c in counts.items() if c < min_item_count}
    report.n_items_dropped = len(rare)

    buckets: dict[tuple[str, int], list[tuple[int, int, str]]] = defaultdict(list)
    for order, e in enumerate(events):
        buckets[(e.user_id, e.timestamp // SECONDS_PER_DAY)].append((e.timestamp, order, e.item_id))
    report.n_sessions_raw = len(buckets)

    sessions = []
    for (user, day) in sorted(buckets):
        entries = sorted(buckets[(user, day)])
        items = tuple(item for _, _, item in entries if item not in rare)
        report.n_events_dropped += len(entries) - len(items)
        if len(items) < 2:
            report.n_sessions_short += 1
            continue
        sessions.append(Session(user=user, items=items, day=day))
    report.n_sessions = len(sessions)
    logger.info(
        "sessions: %d kept of %d (%d rare items removed, %d short sessions dropped)",
        report.n_sessions, report.n_sessions_raw, report.n_items_dropped, report.n_sessions_short,
    )
    return sessions


def split_sizes(n: int) -> tuple[int, int, int]:
    # valid/test rounded half-up, train takes the remainder: 4 -> (3, 0, 1), 100 -> (75, 10, 15)
    n_valid = int(np.floor(n * SPLIT_FRACTIONS[1] + 0.5))
    n_test = int(np.floor(n * SPLIT_FRACTIONS[2] + 0.5))
    return n - n_valid - n_test, n_valid, n_test


def split_corpus(sessions: list[Session], seed: int) -> tuple[list[Session], list[Session], list[Session]]:
    """Random 75/10/15 partition by session, deterministic under ``seed``."""
    if len(sessions) < 4:
        raise ValueError(f"need at least 4 sessions to split, got {len(sessions)}")
    n_train, n_valid, _ = split_sizes(len(sessions))
    perm = np.random.default_rng(seed).permutation(len(sessions))
    # keep each part in corpus order so outputs do not depend on permutation order
    train_idx = sorted(perm[:n_train])
    valid_idx = sorted(perm[n_train:n_train + n_valid])
    test_idx = sorted(perm[n_train + n_valid:])
    return (
        [sessions[i] for i in train_idx],
        [sessions[i] for i in valid_idx],
        [sessions[i] for i in test_idx],
    )


def user_streams(sessions: list[Session]) -> dict[str, list[Session]]:
    streams: dict[str, list[Session]] = defaultdict(list)
    for s in sessions:
        streams[s.user].append(s)
    for user in streams:
        streams[user].sort(key=lambda s: s.day)
    return streams


def make_instances(sessions: list[Session], T: int, stream_sessions: list[Session] | None = None) -> list[TrainInstance]:
    """One instance per session position p >= 1.

    The target list continues across session boundaries through the user's chronological
    stream. ``stream_sessions`` defines that stream (defaults to ``sessions`` itself); pass the
    full corpus to let targets run into sessions that landed in another split.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    streams = user_streams(stream_sessions if stream_sessions is not None else sessions)
    offsets: dict[tuple[str, int], int] = {}
    flat: dict[str, list[str]] = {}
    for user, user_sessions in streams.items():
        items: list[str] = []
        for s in user_sessions:
            offsets[(user, s.day)] = len(items)
            items.extend(s.items)
        flat[user] = items

    instances = []
    for s in sessions:
        stream = flat[s.user]
        base = offsets[(s.user, s.day)]
        for p in range(1, len(s.items)):
            start = base + p
            instances.append(TrainInstance(prefix=s.items[:p], t_list=tuple(stream[start:start + T]), user=s.user))
    return instances


def write_jsonl(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True, ensure_ascii=False))
            fh.write("\n")


def read_sessions(path) -> list[Session]:
    with open(path, encoding="utf-8") as fh:
        return [Session.from_json(json.loads(line)) for line in fh if line.strip()]


def read_instances(path) -> list[TrainInstance]:
    with open(path, encoding="utf-8") as fh:
        return [TrainInstance.from_json(json.loads(line)) for line in fh if line.strip()]
