"""Velocity-propagating tracker over fused reference points, plus
CLEAR-style counting metrics.

The tracker is deliberately plain: constant-velocity prediction, gated
one-to-one association (the same matcher as cross-agent fusion) and
outright adoption of the matched detection's state.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from refpts.core import AgentFrame, MatchingPolicy, match_points
from refpts.geometry import Point3, Size3, Velocity2


@dataclass(frozen=True)
class Track:
    track_id: int
    position: Point3
    velocity: Optional[Velocity2] = None
    size: Optional[Size3] = None
    confidence: float = 1.0
    age_frames: int = 1
    misses: int = 0
    source: str = "ego"

    def __post_init__(self) -> None:
        if self.age_frames < 1 or self.misses < 0:
            raise ValueError("age_frames must be >= 1 and misses >= 0")


@dataclass(frozen=True)
class TrackerConfig:
    gate_distance: float = 2.0
    max_misses: int = 3
    confidence_decay: float = 0.9
    matching_policy: MatchingPolicy = MatchingPolicy.GREEDY

    def __post_init__(self) -> None:
        object.__setattr__(self, "matching_policy", MatchingPolicy(self.matching_policy))
        if not self.gate_distance > 0:
            raise ValueError("gate_distance must be positive")
        if self.max_misses < 0:
            raise ValueError("max_misses must be non-negative")
        if not 0 < self.confidence_decay <= 1:
            raise ValueError("confidence_decay must lie in (0, 1]")


@dataclass
class FrameEvents:
    frame_index: int
    matches: list[tuple[int, int, float]] = field(default_factory=list)
    births: list[int] = field(default_factory=list)
    deaths: list[int] = field(default_factory=list)
    # (track_id, x, y, z) of every live track after the update
    tracks: list[tuple[int, float, float, float]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))


def predict(tracks: Sequence[Track], dt: float) -> list[Track]:
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = []
    for t in tracks:
        if t.velocity is None:
            out.append(t)
            continue
        x, y, z = t.position
        out.append(replace(t, position=Point3(x + dt * t.velocity[0], y + dt * t.velocity[1], z)))
    return out


def update(
    tracks: Sequence[Track],
    fused: AgentFrame,
    cfg: TrackerConfig,
    ids: Iterator[int],
) -> tuple[list[Track], FrameEvents]:
    """Associate predicted tracks with fused detections and manage lifecycles.

    ``ids`` supplies identifiers for newborn tracks.
    """
    ev = FrameEvents(fused.frame_index)
    tpos = np.array([t.position for t in tracks], dtype=float).reshape(-1, 3)
    pairs, _ = match_points(tpos, fused.positions(), cfg.gate_distance, cfg.matching_policy)
    by_track = {m: (n, d) for m, n, d in pairs}
    used = {n for _, n, _ in pairs}

    out: list[Track] = []
    for i, t in enumerate(tracks):
        if i in by_track:
            n, d = by_track[i]
            det = fused.points[n]
            out.append(
                replace(
                    t,
                    position=det.position,
                    velocity=det.velocity,
                    size=det.size,
                    confidence=det.confidence,
                    age_frames=t.age_frames + 1,
                    misses=0,
                )
            )
            ev.matches.append((t.track_id, n, d))
        elif t.misses + 1 > cfg.max_misses:
            ev.deaths.append(t.track_id)
        else:
            out.append(
                replace(
                    t,
                    confidence=t.confidence * cfg.confidence_decay,
                    age_frames=t.age_frames + 1,
                    misses=t.misses + 1,
                )
            )
    for n, det in enumerate(fused.points):
        if n in used:
            continue
        tid = next(ids)
        out.append(
            Track(
                track_id=tid,
                position=det.position,
                velocity=det.velocity,
                size=det.size,
                confidence=det.confidence,
                source="ego" if det.source_agent is None else "sender",
            )
        )
        ev.births.append(tid)
    ev.tracks = [(t.track_id, *t.position) for t in out]
    return out, ev


class Tracker:
    """Stateful wrapper owning the live tracks and the id counter."""

    def __init__(self, cfg: TrackerConfig | None = None) -> None:
        self.cfg = cfg or TrackerConfig()
        self.tracks: list[Track] = []
        self._ids = itertools.count(1)

    def step(self, fused: AgentFrame, dt: float | None) -> FrameEvents:
        if dt is not None and self.tracks:
            self.tracks = predict(self.tracks, dt)
        self.tracks, ev = update(self.tracks, fused, self.cfg, self._ids)
        return ev


@dataclass
class TrackingMetrics:
    recall: float = 0.0
    precision: float = 0.0
    id_switches: int = 0
    mean_track_persistence: float = 0.0
    fused_detection_recall: float = 0.0
    gt_total: int = 0
    gt_matched: int = 0
    track_total: int = 0
    per_object: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_object"] = {str(k): v for k, v in sorted(self.per_object.items())}
        return d


# ground truth per frame: (gt_id, x, y, z)
GTFrame = Sequence[tuple[int, float, float, float]]


def _runs(seq: list[Optional[int]]) -> list[int]:
    """Lengths of maximal runs of equal, non-None consecutive entries."""
    out = []
    for key, grp in itertools.groupby(seq):
        if key is not None:
            out.append(sum(1 for _ in grp))
    return out


def evaluate(
    events: Sequence[FrameEvents],
    ground_truth: Sequence[GTFrame],
    gate_distance: float = 2.0,
    fused_frames: Optional[Sequence[AgentFrame]] = None,
    policy: MatchingPolicy = MatchingPolicy.OPTIMAL,
) -> TrackingMetrics:
    """Gated one-to-one matching of reported tracks to ground truth per frame.

    Persistence counts consecutive frames in which a ground-truth object stays
    matched to the same track id; a miss or an id change ends the run.
    """
    if len(events) != len(ground_truth):
        raise ValueError("events and ground truth must cover the same frames")
    history: dict[int, list[Optional[int]]] = {}
    gt_total = gt_matched = trk_total = 0
    for k, (ev, gt) in enumerate(zip(events, ground_truth)):
        gpos = np.array([g[1:] for g in gt], dtype=float).reshape(-1, 3)
        tpos = np.array([t[1:] for t in ev.tracks], dtype=float).reshape(-1, 3)
        pairs, _ = match_points(gpos, tpos, gate_distance, policy)
        gt_total += len(gt)
        trk_total += len(ev.tracks)
        gt_matched += len(pairs)
        assigned = {gt[m][0]: ev.tracks[n][0] for m, n, _ in pairs}
        for g in gt:
            history.setdefault(g[0], [None] * k)
        for gid, hist in history.items():
            hist.append(assigned.get(gid))

    switches = 0
    runs: list[int] = []
    per_object = {}
    for gid, hist in history.items():
        matched = [h for h in hist if h is not None]
        sw = sum(1 for a, b in zip(matched, matched[1:]) if a != b)
        r = _runs(hist)
        switches += sw
        runs.extend(r)
        per_object[gid] = {
            "id_switches": sw,
            "persistence": float(np.mean(r)) if r else 0.0,
            "matched_frames": len(matched),
        }

    m = TrackingMetrics(
        recall=gt_matched / gt_total if gt_total else 0.0,
        precision=gt_matched / trk_total if trk_total else 0.0,
        id_switches=switches,
        mean_track_persistence=float(np.mean(runs)) if runs else 0.0,
        gt_total=gt_total,
        gt_matched=gt_matched,
        track_total=trk_total,
        per_object=per_object,
    )
    if fused_frames is not None:
        m.fused_detection_recall = fused_recall(fused_frames, ground_truth, gate_distance, policy)
    return m


def fused_recall(
    frames: Iterable[AgentFrame],
    ground_truth: Iterable[GTFrame],
    gate_distance: float = 2.0,
    policy: MatchingPolicy = MatchingPolicy.OPTIMAL,
) -> float:
    hit = total = 0
    for fr, gt in zip(frames, ground_truth):
        gpos = np.array([g[1:] for g in gt], dtype=float).reshape(-1, 3)
        pairs, _ = match_points(gpos, fr.positions(), gate_distance, policy)
        hit += len(pairs)
        total += len(gt)
    return hit / total if total else 0.0
