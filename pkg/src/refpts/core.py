"""Cross-agent association and fusion of reference-point sets."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from refpts.geometry import (
    Point3,
    Size3,
    TransformSE3,
    Velocity2,
    check_point,
    check_size,
    check_velocity,
    transform_point,
    transform_velocity,
)

InstanceId = Union[int, str]

QUERY_CAPACITY = 900
DEFAULT_TAU_D = 2.0
DEFAULT_VISIBLE_RANGE = (-51.2, 51.2, -51.2, 51.2)


@dataclass(frozen=True)
class ReferencePoint:
    position: Point3
    velocity: Optional[Velocity2] = None
    size: Optional[Size3] = None
    confidence: float = 1.0
    class_label: int = 0
    instance_id: InstanceId = 0
    # set on points a fusion step appended from another agent
    source_agent: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", check_point(Point3(*map(float, self.position))))
        if self.velocity is not None:
            object.__setattr__(
                self, "velocity", check_velocity(Velocity2(*map(float, self.velocity)))
            )
        if self.size is not None:
            object.__setattr__(self, "size", check_size(Size3(*map(float, self.size))))
        c = float(self.confidence)
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {c}")
        object.__setattr__(self, "confidence", c)


@dataclass(frozen=True)
class AgentFrame:
    """Detections of one agent at one timestamp.

    ``in_ego_frame`` records whether positions are already expressed in the
    receiving agent's coordinates. ``to_ego`` is the sender-to-ego calibration
    when it is known.
    """

    agent_id: int
    frame_index: int
    timestamp: float
    points: tuple[ReferencePoint, ...] = ()
    to_ego: Optional[TransformSE3] = None
    in_ego_frame: bool = False
    capacity: int = QUERY_CAPACITY

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(self.points))
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")
        if len(self.points) > self.capacity:
            raise ValueError(
                f"{len(self.points)} points exceed the query capacity of {self.capacity}"
            )
        ids = [p.instance_id for p in self.points]
        if len(set(ids)) != len(ids):
            raise ValueError("instance_id values must be unique within a frame")

    def __len__(self) -> int:
        return len(self.points)

    def positions(self) -> np.ndarray:
        if not self.points:
            return np.zeros((0, 3))
        return np.array([p.position for p in self.points], dtype=float)


class MatchingPolicy(str, Enum):
    GREEDY = "greedy_distance"
    OPTIMAL = "optimal_assignment"


@dataclass(frozen=True)
class FusionConfig:
    tau_d: float = DEFAULT_TAU_D
    visible_range: tuple[float, float, float, float] = DEFAULT_VISIBLE_RANGE
    use_velocity: bool = True
    use_size: bool = True
    matching_policy: MatchingPolicy = MatchingPolicy.GREEDY
    planar_distance: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "matching_policy", MatchingPolicy(self.matching_policy))
        object.__setattr__(self, "visible_range", tuple(float(v) for v in self.visible_range))
        if not self.tau_d > 0:
            raise ValueError("tau_d must be positive")
        x0, x1, y0, y1 = self.visible_range
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate visible range {self.visible_range}")

    def in_range(self, p: Point3) -> bool:
        x0, x1, y0, y1 = self.visible_range
        return x0 <= p[0] <= x1 and y0 <= p[1] <= y1


@dataclass(frozen=True)
class MatchSet:
    """One-to-one pairing between ego and sender points.

    ``absorbed_sender`` lists sender points that found no partner but lie
    within the threshold of some ego point; they describe an instance the ego
    already holds and are never added as new candidates. ``unmatched_sender``
    holds only points with no ego point inside the threshold.
    """

    pairs: tuple[tuple[int, int, float], ...] = ()
    unmatched_sender: tuple[int, ...] = ()
    unmatched_ego: tuple[int, ...] = ()
    absorbed_sender: tuple[int, ...] = field(default=())


def distance_matrix(a: np.ndarray, b: np.ndarray, planar: bool = False) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if planar:
        a, b = a[:, :2], b[:, :2]
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))


def greedy_pairs(dist: np.ndarray, tau: float) -> list[tuple[int, int, float]]:
    """Ascending-distance greedy one-to-one pairing below ``tau``.

    Ties on distance resolve to the lexicographically smaller index pair.
    """
    rows, cols = np.nonzero(dist < tau)
    cand = sorted(zip(dist[rows, cols].tolist(), rows.tolist(), cols.tolist()))
    used_r: set[int] = set()
    used_c: set[int] = set()
    out = []
    for d, r, c in cand:
        if r in used_r or c in used_c:
            continue
        used_r.add(r)
        used_c.add(c)
        out.append((r, c, d))
    return out


def optimal_pairs(dist: np.ndarray, tau: float) -> list[tuple[int, int, float]]:
    """Maximum-cardinality pairing below ``tau`` with minimal total distance."""
    if dist.size == 0:
        return []
    ok = dist < tau
    if not ok.any():
        return []
    # a forbidden pair must cost more than any feasible matching's total
    big = tau * (min(dist.shape) + 1)
    cost = np.where(ok, dist, big)
    rows, cols = linear_sum_assignment(cost)
    out = [(int(r), int(c), float(dist[r, c])) for r, c in zip(rows, cols) if ok[r, c]]
    out.sort()
    return out


def match_points(
    a: np.ndarray,
    b: np.ndarray,
    tau: float,
    policy: MatchingPolicy = MatchingPolicy.GREEDY,
    planar: bool = False,
) -> tuple[list[tuple[int, int, float]], np.ndarray]:
    """Pair rows of ``a`` with rows of ``b``; also returns the distance matrix."""
    dist = distance_matrix(a, b, planar)
    if dist.size == 0:
        return [], dist
    if MatchingPolicy(policy) is MatchingPolicy.OPTIMAL:
        return optimal_pairs(dist, tau), dist
    return greedy_pairs(dist, tau), dist


def align_sender_frame(sender: AgentFrame, t: TransformSE3) -> AgentFrame:
    """Express every sender point in ego coordinates.

    Positions get the full rigid transform, velocities the rotation only,
    sizes are copied.
    """
    pts = tuple(
        replace(
            p,
            position=transform_point(t, p.position),
            velocity=None if p.velocity is None else transform_velocity(t, p.velocity),
        )
        for p in sender.points
    )
    return replace(sender, points=pts, to_ego=t, in_ego_frame=True)


def associate(ego: AgentFrame, sender_aligned: AgentFrame, cfg: FusionConfig) -> MatchSet:
    n_ego, n_snd = len(ego.points), len(sender_aligned.points)
    if n_ego == 0 or n_snd == 0:
        return MatchSet(
            unmatched_sender=tuple(range(n_snd)), unmatched_ego=tuple(range(n_ego))
        )
    pairs, dist = match_points(
        ego.positions(),
        sender_aligned.positions(),
        cfg.tau_d,
        cfg.matching_policy,
        cfg.planar_distance,
    )
    paired_e = {m for m, _, _ in pairs}
    paired_s = {n for _, n, _ in pairs}
    near_ego = (dist < cfg.tau_d).any(axis=0)
    free_s = [n for n in range(n_snd) if n not in paired_s]
    return MatchSet(
        pairs=tuple(pairs),
        unmatched_sender=tuple(n for n in free_s if not near_ego[n]),
        unmatched_ego=tuple(m for m in range(n_ego) if m not in paired_e),
        absorbed_sender=tuple(n for n in free_s if near_ego[n]),
    )


def _fresh_id(agent_id: int, iid: InstanceId, taken: set) -> str:
    base = f"{agent_id}/{iid}"
    new, k = base, 1
    while new in taken:
        new = f"{base}#{k}"
        k += 1
    return new


def fuse(
    ego: AgentFrame, sender_aligned: AgentFrame, matches: MatchSet, cfg: FusionConfig
) -> AgentFrame:
    """Ego points verbatim, then each unmatched in-range sender point."""
    out = list(ego.points)
    taken = {p.instance_id for p in out}
    for n in sorted(matches.unmatched_sender):
        sp = sender_aligned.points[n]
        if not cfg.in_range(sp.position):
            continue
        iid = _fresh_id(sender_aligned.agent_id, sp.instance_id, taken)
        taken.add(iid)
        out.append(
            ReferencePoint(
                position=sp.position,
                velocity=sp.velocity if cfg.use_velocity else None,
                size=sp.size if cfg.use_size else None,
                confidence=sp.confidence,
                class_label=sp.class_label,
                instance_id=iid,
                source_agent=sender_aligned.agent_id,
            )
        )
    return replace(
        ego,
        points=tuple(out),
        in_ego_frame=True,
        capacity=max(ego.capacity, len(out)),
    )


def fuse_pair(
    ego: AgentFrame, sender: AgentFrame, t: TransformSE3, cfg: FusionConfig
) -> tuple[AgentFrame, MatchSet]:
    """Align, associate and fuse one sender frame into the ego frame."""
    aligned = align_sender_frame(sender, t)
    ms = associate(ego, aligned, cfg)
    return fuse(ego, aligned, ms, cfg), ms


def fuse_many(
    ego: AgentFrame,
    senders: Sequence[tuple[AgentFrame, TransformSE3]],
    cfg: FusionConfig,
) -> AgentFrame:
    """Sequential pairwise folding of several senders, in the given order."""
    fused = ego
    for frame, t in senders:
        fused, _ = fuse_pair(fused, frame, t, cfg)
    return fused


def point_in_rect(p, rect) -> bool:
    x0, x1, y0, y1 = rect
    return x0 <= p[0] <= x1 and y0 <= p[1] <= y1
