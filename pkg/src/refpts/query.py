"""Selective Top-K query fusion for senders that share the ego's backbone.

The sender ranks its queries by confidence and ships only the best ``k``.
On the ego side, each received query is paired with an ego query through
reference-point association; the pair's semantic halves are summed with a
scaling coefficient while the ego's positional half is left untouched.
Received queries with no ego partner fall back to plain reference points.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from refpts.core import (
    AgentFrame,
    FusionConfig,
    InstanceId,
    MatchSet,
    ReferencePoint,
    associate,
)
from refpts.geometry import Point3, TransformSE3, check_point, transform_point

DEFAULT_K = 10
DEFAULT_LAMBDA = 0.5
DEFAULT_EMBED_DIM = 128


class DimensionMismatchError(ValueError):
    """Raised when ego and sender embeddings disagree in width."""


@dataclass(frozen=True, eq=False)
class Query:
    pos_embed: np.ndarray
    sem_embed: np.ndarray
    confidence: float
    reference_point: Point3
    instance_id: InstanceId = 0

    def __post_init__(self) -> None:
        pos = np.array(self.pos_embed, dtype=float).reshape(-1)
        sem = np.array(self.sem_embed, dtype=float).reshape(-1)
        if pos.size == 0 or pos.shape != sem.shape:
            raise DimensionMismatchError(
                f"positional ({pos.size}) and semantic ({sem.size}) halves must share a width d > 0"
            )
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(sem))):
            raise ValueError("query embeddings must be finite")
        if not 0.0 <= float(self.confidence) <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        pos.flags.writeable = False
        sem.flags.writeable = False
        object.__setattr__(self, "pos_embed", pos)
        object.__setattr__(self, "sem_embed", sem)
        object.__setattr__(self, "confidence", float(self.confidence))
        object.__setattr__(
            self, "reference_point", check_point(Point3(*map(float, self.reference_point)))
        )

    @property
    def dim(self) -> int:
        return int(self.sem_embed.size)


@dataclass(frozen=True)
class QueryFusionConfig:
    k: int = DEFAULT_K
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self) -> None:
        if int(self.k) < 1:
            raise ValueError("k must be at least 1")
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("lambda must lie in (0, 1]")


def _id_key(iid: InstanceId):
    # ints sort before strings so mixed id types still order deterministically
    return (0, iid, "") if isinstance(iid, int) else (1, 0, str(iid))


def select_top_k(sender_queries: Sequence[Query], k: int) -> list[Query]:
    if k < 1:
        raise ValueError("k must be at least 1")
    ranked = sorted(sender_queries, key=lambda q: (-q.confidence, _id_key(q.instance_id)))
    return ranked[:k]


def align_queries(queries: Sequence[Query], t: TransformSE3) -> list[Query]:
    """Move reference points into ego coordinates; embeddings are unchanged."""
    return [replace(q, reference_point=transform_point(t, q.reference_point)) for q in queries]


def queries_as_frame(queries: Sequence[Query], agent_id: int = 0, frame_index: int = 0,
                     timestamp: float = 0.0, in_ego_frame: bool = True) -> AgentFrame:
    pts = [
        ReferencePoint(position=q.reference_point, confidence=q.confidence, instance_id=q.instance_id)
        for q in queries
    ]
    return AgentFrame(agent_id, frame_index, timestamp, tuple(pts), in_ego_frame=in_ego_frame,
                      capacity=max(len(pts), 1))


def pair_queries(ego_queries: Sequence[Query], selected: Sequence[Query],
                 cfg: FusionConfig) -> MatchSet:
    """Associate selected sender queries with ego queries by reference point."""
    return associate(queries_as_frame(ego_queries), queries_as_frame(selected), cfg)


def fuse_queries(
    ego_queries: Sequence[Query],
    selected: Sequence[Query],
    pairing: MatchSet,
    cfg: QueryFusionConfig,
) -> list[Query]:
    out = list(ego_queries)
    for m, n, _ in pairing.pairs:
        e, s = ego_queries[m], selected[n]
        if e.sem_embed.shape != s.sem_embed.shape or e.pos_embed.shape != s.pos_embed.shape:
            raise DimensionMismatchError(
                f"ego query {e.instance_id!r} has d={e.dim}, sender query "
                f"{s.instance_id!r} has d={s.dim}; refusing to fuse heterogeneous embeddings"
            )
        out[m] = replace(e, sem_embed=e.sem_embed + cfg.lam * s.sem_embed)
    return out


def unpaired_sender_queries(selected: Sequence[Query], pairing: MatchSet) -> list[Query]:
    # absorbed queries sit on an ego instance already and are not fallbacks
    return [selected[n] for n in pairing.unmatched_sender]


def query_fusion_step(
    ego_queries: Sequence[Query],
    sender_aligned: Sequence[Query],
    fusion_cfg: FusionConfig,
    cfg: QueryFusionConfig,
    preselected: bool = False,
) -> tuple[list[Query], AgentFrame]:
    """Top-K selection, geometric pairing and additive fusion in one call.

    Returns the fused ego queries and a frame holding the selected sender
    queries that found no ego partner, ready for reference-point fusion.
    """
    selected = list(sender_aligned) if preselected else select_top_k(sender_aligned, cfg.k)
    pairing = pair_queries(ego_queries, selected, fusion_cfg)
    fused = fuse_queries(ego_queries, selected, pairing, cfg)
    leftovers = queries_as_frame(unpaired_sender_queries(selected, pairing))
    return fused, leftovers
