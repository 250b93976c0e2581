"""Seeded multi-agent world, detector model, lossy V2V channel and the
per-frame scenario loop."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from refpts import wire
from refpts.core import (
    QUERY_CAPACITY,
    AgentFrame,
    FusionConfig,
    MatchingPolicy,
    ReferencePoint,
    align_sender_frame,
    associate,
    distance_matrix,
    fuse,
    match_points,
    point_in_rect,
)
from refpts.geometry import (
    Point3,
    Size3,
    TransformSE3,
    Velocity2,
    compose,
    inverse,
    transform_points,
)
from refpts.query import Query, QueryFusionConfig, align_queries, query_fusion_step, select_top_k
from refpts.tracking import FrameEvents, Tracker, TrackerConfig, evaluate, fused_recall

Rect = tuple[float, float, float, float]


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- world


@dataclass(frozen=True)
class GroundTruthObject:
    gt_id: int
    position: Point3
    velocity: Velocity2
    size: Size3
    class_label: int = 0

    def __post_init__(self) -> None:
        if not all(s > 0 for s in self.size):
            raise ValueError("object size must be positive")


@dataclass(frozen=True)
class PoseTrajectory:
    """Planar constant-velocity, constant-yaw-rate agent motion."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    yaw_rate: float = 0.0

    def pose_at(self, t: float) -> TransformSE3:
        """Agent-to-world transform at time ``t``."""
        return TransformSE3.from_yaw(
            self.yaw + self.yaw_rate * t, (self.x + self.vx * t, self.y + self.vy * t, 0.0)
        )


@dataclass(frozen=True)
class WorldState:
    time: float
    frame_index: int
    objects: tuple[GroundTruthObject, ...]


def step_world(state: WorldState, dt: float, wrap: Optional[Rect] = None) -> WorldState:
    """Constant-velocity advance of every object.

    Agent poses are closed-form functions of ``time`` so advancing the clock
    moves them too. With ``wrap`` set, objects leaving the rectangle re-enter
    on the opposite side.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    objs = []
    for o in state.objects:
        x = o.position.x + dt * o.velocity.vx
        y = o.position.y + dt * o.velocity.vy
        if wrap is not None:
            x0, x1, y0, y1 = wrap
            x = x0 + (x - x0) % (x1 - x0)
            y = y0 + (y - y0) % (y1 - y0)
        objs.append(replace(o, position=Point3(x, y, o.position.z)))
    return WorldState(state.time + dt, state.frame_index + 1, tuple(objs))


@dataclass(frozen=True)
class WorldConfig:
    n_objects: int = 30
    spawn_area: Rect = (-60.0, 60.0, -60.0, 60.0)
    speed_range: tuple[float, float] = (0.0, 12.0)
    length_range: tuple[float, float] = (3.5, 5.0)
    width_range: tuple[float, float] = (1.6, 2.1)
    height_range: tuple[float, float] = (1.4, 1.9)
    n_classes: int = 3
    wrap: bool = False
    # explicit objects replace random spawning when given
    objects: tuple[GroundTruthObject, ...] = ()


def spawn_world(cfg: WorldConfig, rng: np.random.Generator) -> WorldState:
    if cfg.objects:
        return WorldState(0.0, 0, tuple(cfg.objects))
    x0, x1, y0, y1 = cfg.spawn_area
    objs = []
    for i in range(cfg.n_objects):
        x, y = rng.uniform(x0, x1), rng.uniform(y0, y1)
        heading = rng.uniform(-math.pi, math.pi)
        speed = rng.uniform(*cfg.speed_range)
        size = Size3(
            rng.uniform(*cfg.length_range), rng.uniform(*cfg.width_range),
            rng.uniform(*cfg.height_range),
        )
        objs.append(
            GroundTruthObject(
                gt_id=i,
                position=Point3(float(x), float(y), size.height / 2),
                velocity=Velocity2(speed * math.cos(heading), speed * math.sin(heading)),
                size=size,
                class_label=int(rng.integers(cfg.n_classes)),
            )
        )
    return WorldState(0.0, 0, tuple(objs))


# ------------------------------------------------------------- detector


@dataclass(frozen=True)
class DetectorProfile:
    fov_range: Rect = (-50.0, 50.0, -50.0, 50.0)
    position_noise_sigma: float = 0.3
    fn_rate: float = 0.0
    fp_rate: float = 0.0
    fp_confidence_range: tuple[float, float] = (0.1, 0.5)
    tp_confidence_range: tuple[float, float] = (0.5, 1.0)
    provides_velocity: bool = True
    provides_size: bool = True
    # scripted misses: (gt_id, first_frame, last_frame), inclusive
    forced_misses: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self) -> None:
        if not (0.0 <= self.fn_rate <= 1.0 and 0.0 <= self.fp_rate <= 1.0):
            raise ConfigError("fn_rate and fp_rate must lie in [0, 1]")
        if self.position_noise_sigma < 0:
            raise ConfigError("position_noise_sigma must be non-negative")
        for lo, hi in (self.fp_confidence_range, self.tp_confidence_range):
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError("confidence ranges must satisfy 0 <= lo <= hi <= 1")
        x0, x1, y0, y1 = self.fov_range
        if not (x0 < x1 and y0 < y1):
            raise ConfigError("degenerate fov_range")

    def forced_miss(self, gt_id: int, frame: int) -> bool:
        return any(g == gt_id and a <= frame <= b for g, a, b in self.forced_misses)


def fp_count(fp_rate: float, n_candidates: int) -> int:
    # rounding guards against 0.3 * 10 == 3.0000000000000004
    return math.ceil(round(fp_rate * n_candidates, 9))


def simulate_detector(
    world: WorldState,
    agent_pose: TransformSE3,
    profile: DetectorProfile,
    rng: np.random.Generator,
    agent_id: int = 0,
    size_ranges: Optional[WorldConfig] = None,
) -> AgentFrame:
    """Detections of one agent in its own coordinates.

    Per-candidate random draws are made for every in-FoV object whether or not
    it survives, so two profiles differing only in ``fn_rate`` see the same
    noise and confidences (the higher rate drops a superset).
    """
    to_local = inverse(agent_pose)
    objs = world.objects
    local = transform_points(to_local, [o.position for o in objs]) if objs else np.zeros((0, 3))
    cand = [i for i in range(len(objs)) if point_in_rect(local[i], profile.fov_range)]
    n = len(cand)
    u_drop = rng.random(n)
    noise = rng.normal(0.0, 1.0, (n, 3)) * profile.position_noise_sigma
    conf = rng.uniform(*profile.tp_confidence_range, n)

    rot = to_local.rotation
    pts = []
    for j, i in enumerate(cand):
        o = objs[i]
        if u_drop[j] < profile.fn_rate or profile.forced_miss(o.gt_id, world.frame_index):
            continue
        vel = None
        if profile.provides_velocity:
            vx, vy, _ = rot @ np.array([o.velocity.vx, o.velocity.vy, 0.0])
            vel = Velocity2(float(vx), float(vy))
        pts.append(
            ReferencePoint(
                position=Point3(*(local[i] + noise[j]).tolist()),
                velocity=vel,
                size=o.size if profile.provides_size else None,
                confidence=float(conf[j]),
                class_label=o.class_label,
                instance_id=o.gt_id,
            )
        )

    wc = size_ranges or WorldConfig()
    x0, x1, y0, y1 = profile.fov_range
    for k in range(fp_count(profile.fp_rate, n)):
        x, y = rng.uniform(x0, x1), rng.uniform(y0, y1)
        c = rng.uniform(*profile.fp_confidence_range)
        size = Size3(
            rng.uniform(*wc.length_range), rng.uniform(*wc.width_range),
            rng.uniform(*wc.height_range),
        )
        v = rng.normal(0.0, 3.0, 2)
        label = int(rng.integers(wc.n_classes))
        pts.append(
            ReferencePoint(
                position=Point3(float(x), float(y), size.height / 2),
                velocity=Velocity2(*v.tolist()) if profile.provides_velocity else None,
                size=size if profile.provides_size else None,
                confidence=float(c),
                class_label=label,
                instance_id=f"fp{k}",
            )
        )
    return AgentFrame(agent_id, world.frame_index, world.time, tuple(pts),
                      capacity=max(len(pts), QUERY_CAPACITY))


# -------------------------------------------------------------- channel


@dataclass(frozen=True)
class ChannelModel:
    drop_probability: float = 0.0
    latency_frames: int = 0
    fps: float = 5.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ConfigError("drop_probability must lie in [0, 1]")
        if self.latency_frames < 0:
            raise ConfigError("latency_frames must be non-negative")
        if not self.fps > 0:
            raise ConfigError("fps must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.fps


@dataclass
class BandwidthLedger:
    """Bytes handed to the channel, keyed by send frame.

    ``body`` follows the per-frame payload convention (records only);
    ``header`` tracks the fixed 32-byte message headers separately.
    """

    body: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    header: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    by_kind: dict[str, dict[int, int]] = field(default_factory=dict)
    messages: int = 0
    delivered: int = 0
    dropped: int = 0

    def record(self, frame: int, n_body: int, kind: str = "refpts") -> None:
        self.body[frame] += n_body
        self.header[frame] += wire.HEADER_SIZE
        per = self.by_kind.setdefault(kind, defaultdict(int))
        per[frame] += n_body
        self.messages += 1

    @property
    def total_body(self) -> int:
        return sum(self.body.values())

    @property
    def total_header(self) -> int:
        return sum(self.header.values())


@dataclass(frozen=True)
class Delivery:
    payload: bytes
    sent_frame: int
    deliver_frame: Optional[int]
    body_bytes: int
    tag: object = None

    @property
    def dropped(self) -> bool:
        return self.deliver_frame is None


def transmit(
    payload: bytes,
    channel: ChannelModel,
    rng: np.random.Generator,
    ledger: BandwidthLedger,
    frame_index: int,
    tag: object = None,
) -> Delivery:
    """Hand one encoded message to the channel.

    Bytes are charged to the ledger whether or not the message survives.
    """
    msg = wire.decode(payload)
    body = wire.payload_bytes(msg.count, msg.flags, msg.embed_dim)
    kind = tag[0] if isinstance(tag, tuple) and tag else "refpts"
    ledger.record(frame_index, body, kind)
    # one draw per message keeps the stream aligned across drop settings
    lost = rng.random() < channel.drop_probability
    if lost:
        ledger.dropped += 1
        return Delivery(payload, frame_index, None, body, tag)
    ledger.delivered += 1
    return Delivery(payload, frame_index, frame_index + channel.latency_frames, body, tag)


# ------------------------------------------------------------- scenario


@dataclass(frozen=True)
class AgentSpec:
    agent_id: int
    trajectory: PoseTrajectory = PoseTrajectory()
    detector: DetectorProfile = DetectorProfile()
    role: str = "sender"

    def __post_init__(self) -> None:
        if self.role not in ("ego", "sender"):
            raise ConfigError(f"unknown agent role {self.role!r}")


@dataclass(frozen=True)
class QuerySimConfig:
    """Query-mode settings: Top-K fusion plus how sender queries are faked."""

    fusion: QueryFusionConfig = QueryFusionConfig()
    embed_dim: int = 128
    background_confidence: tuple[float, float] = (0.0, 0.3)

    def __post_init__(self) -> None:
        if not 1 <= self.embed_dim <= 0xFFFF:
            raise ConfigError("embed_dim must lie in [1, 65535]")


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    duration_frames: int = 50
    agents: tuple[AgentSpec, ...] = (
        AgentSpec(0, role="ego"),
        AgentSpec(1, PoseTrajectory(x=20.0, y=10.0, yaw=math.pi / 2), role="sender"),
    )
    world: WorldConfig = WorldConfig()
    fusion: FusionConfig = FusionConfig()
    query_fusion: Optional[QuerySimConfig] = None
    channel: ChannelModel = ChannelModel()
    tracker: TrackerConfig = TrackerConfig()
    attrs: str = "pvs"
    transmit_confidence: bool = False
    capacity: int = 900

    def __post_init__(self) -> None:
        if self.duration_frames < 0:
            raise ConfigError("duration_frames must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        egos = [a for a in self.agents if a.role == "ego"]
        if len(egos) != 1:
            raise ConfigError("exactly one ego agent is required")
        ids = [a.agent_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ConfigError("agent ids must be unique")
        if not 1 <= self.capacity <= wire.MAX_COUNT:
            raise ConfigError("capacity must lie in [1, 65535]")
        wire.PayloadFlags.from_attrs(self.attrs)

    @property
    def ego(self) -> AgentSpec:
        return next(a for a in self.agents if a.role == "ego")

    @property
    def senders(self) -> list[AgentSpec]:
        return [a for a in self.agents if a.role == "sender"]


def sender_flags(cfg: ScenarioConfig, agent: AgentSpec) -> wire.PayloadFlags:
    f = wire.PayloadFlags.from_attrs(cfg.attrs, confidence=cfg.transmit_confidence)
    return replace(
        f,
        has_velocity=f.has_velocity and agent.detector.provides_velocity,
        has_size=f.has_size and agent.detector.provides_size,
    )


def make_sender_queries(
    det: AgentFrame, profile: DetectorProfile, qcfg: QuerySimConfig, capacity: int,
    rng: np.random.Generator, keep: Optional[int] = None,
) -> list[Query]:
    """One query per detection, padded with low-confidence background queries.

    With ``keep`` set, only the ``keep`` best-ranked queries are materialised;
    the draws are identical either way.
    """
    d = qcfg.embed_dim
    n_det = len(det.points)
    n_bg = max(capacity - n_det, 0)
    sem = rng.normal(0.0, 1.0, (n_det + n_bg, d))
    pos = rng.normal(0.0, 1.0, (n_det + n_bg, d))
    x0, x1, y0, y1 = profile.fov_range
    bg_xy = rng.uniform((x0, y0), (x1, y1), (n_bg, 2))
    bg_conf = rng.uniform(*qcfg.background_confidence, n_bg)
    conf = np.concatenate([[p.confidence for p in det.points], bg_conf])
    idx = np.arange(n_det + n_bg)
    if keep is not None:
        # same order as select_top_k: confidence descending, then id ascending
        idx = np.lexsort((idx, -conf))[:keep]
    out = []
    for i in idx.tolist():
        if i < n_det:
            p = det.points[i]
            out.append(Query(pos[i], sem[i], p.confidence, p.position, instance_id=i))
        else:
            j = i - n_det
            out.append(Query(pos[i], sem[i], float(bg_conf[j]),
                             Point3(float(bg_xy[j, 0]), float(bg_xy[j, 1]), 0.0), instance_id=i))
    return out


def make_ego_queries(det: AgentFrame, dim: int, rng: np.random.Generator) -> list[Query]:
    sem = rng.normal(0.0, 1.0, (len(det.points), dim))
    pos = rng.normal(0.0, 1.0, (len(det.points), dim))
    return [
        Query(pos[i], sem[i], p.confidence, p.position, instance_id=i)
        for i, p in enumerate(det.points)
    ]


def _gt_match_count(points: np.ndarray, gt_local: np.ndarray, gate: float) -> int:
    pairs, _ = match_points(gt_local, points, gate, MatchingPolicy.OPTIMAL)
    return len(pairs)


def run_scenario(cfg: ScenarioConfig):
    """Execute the per-frame loop and return a :class:`ScenarioReport`."""
    from refpts.report import ScenarioReport

    ss = np.random.SeedSequence(cfg.seed)
    world_ss, chan_ss, query_ss, *agent_ss = ss.spawn(2 + 1 + len(cfg.agents))
    world_rng = np.random.default_rng(world_ss)
    chan_rng = np.random.default_rng(chan_ss)
    query_rng = np.random.default_rng(query_ss)
    det_rng = {a.agent_id: np.random.default_rng(s) for a, s in zip(cfg.agents, agent_ss)}

    dt = cfg.channel.dt
    wrap = cfg.world.spawn_area if cfg.world.wrap else None
    state = spawn_world(cfg.world, world_rng)
    ego = cfg.ego
    tracker = Tracker(cfg.tracker)
    ledger = BandwidthLedger()
    inbox: dict[int, list[Delivery]] = defaultdict(list)
    poses: dict[int, dict[int, TransformSE3]] = defaultdict(dict)

    series: list[dict] = []
    events: list[FrameEvents] = []
    gt_frames: list[list[tuple]] = []
    fused_frames: list[AgentFrame] = []
    tx_hist: dict[int, int] = defaultdict(int)
    valid_hist: dict[int, int] = defaultdict(int)
    gate = cfg.fusion.tau_d

    for f in range(cfg.duration_frames):
        if f > 0:
            state = step_world(state, dt, wrap)
        for a in cfg.agents:
            poses[a.agent_id][f] = a.trajectory.pose_at(state.time)
        ego_pose = poses[ego.agent_id][f]
        ego_det = simulate_detector(state, ego_pose, ego.detector, det_rng[ego.agent_id],
                                    ego.agent_id, cfg.world)
        row: dict = {"frame": f, "ego_points": len(ego_det)}

        tx_points = tx_valid = fp_near = fp_added = 0
        q_gt_all = q_gt_sel = 0
        for a in cfg.senders:
            pose = poses[a.agent_id][f]
            det = simulate_detector(state, pose, a.detector, det_rng[a.agent_id], a.agent_id,
                                    cfg.world)
            det = replace(det, points=det.points[: cfg.capacity])
            gt_local = transform_points(inverse(pose), [o.position for o in state.objects]) \
                if state.objects else np.zeros((0, 3))
            valid = _gt_match_count(det.positions(), gt_local, gate) if len(det) else 0
            tx_points += len(det)
            tx_valid += valid
            payload = wire.encode_frame(det, sender_flags(cfg, a))
            dl = transmit(payload, cfg.channel, chan_rng, ledger, f, tag=("refpts", a.agent_id, det))
            if not dl.dropped:
                inbox[dl.deliver_frame].append(dl)
            if cfg.query_fusion is not None:
                qc = cfg.query_fusion
                queries = make_sender_queries(det, a.detector, qc, cfg.capacity, query_rng,
                                              keep=qc.fusion.k)
                sel = select_top_k(queries, qc.fusion.k)
                q_gt_all += valid
                sel_det = [q.instance_id for q in sel if q.instance_id < len(det)]
                q_gt_sel += _gt_match_count(
                    np.array([det.points[i].position for i in sel_det]).reshape(-1, 3),
                    gt_local, gate,
                ) if sel_det else 0
                qmsg = wire.message_from_queries(sel, a.agent_id, f, state.time,
                                                 confidence=True)
                dl = transmit(wire.encode(qmsg), cfg.channel, chan_rng, ledger, f,
                              tag=("query", a.agent_id, None))
                if not dl.dropped:
                    inbox[dl.deliver_frame].append(dl)
        tx_hist[tx_points] += 1
        valid_hist[tx_valid] += 1

        fused = replace(ego_det, to_ego=None, in_ego_frame=True)
        n_query_merged = 0
        ego_queries = None
        for dl in sorted(inbox.pop(f, []), key=lambda d: (d.sent_frame, d.tag[1], d.tag[0])):
            kind, sender_id, truth = dl.tag
            t = compose(inverse(ego_pose), poses[sender_id][dl.sent_frame])
            msg = wire.decode(dl.payload)
            if kind == "refpts":
                aligned = align_sender_frame(
                    replace(wire.frame_from_message(msg), agent_id=sender_id), t
                )
                ms = associate(fused, aligned, cfg.fusion)
                fp_near_now, fp_added_now = _fp_containment(
                    ego_det, aligned, ms, truth, cfg.fusion
                )
                fp_near += fp_near_now
                fp_added += fp_added_now
                fused = fuse(fused, aligned, ms, cfg.fusion)
            else:
                qc = cfg.query_fusion
                if ego_queries is None:
                    ego_queries = make_ego_queries(ego_det, qc.embed_dim, query_rng)
                recv = align_queries(wire.queries_from_message(msg), t)
                ego_queries, leftovers = query_fusion_step(
                    ego_queries, recv, cfg.fusion, qc.fusion, preselected=True
                )
                n_query_merged += len(recv) - len(leftovers)
                leftovers = replace(leftovers, agent_id=sender_id)
                fused = fuse(fused, leftovers, associate(fused, leftovers, cfg.fusion), cfg.fusion)

        # track in world coordinates so ego motion does not masquerade as object motion
        world_fused = align_sender_frame(fused, ego_pose)
        ev = tracker.step(world_fused, dt if f > 0 else None)
        events.append(ev)

        gt_ego = transform_points(inverse(ego_pose), [o.position for o in state.objects]) \
            if state.objects else np.zeros((0, 3))
        gt_world = [
            (o.gt_id, *map(float, o.position))
            for o, p in zip(state.objects, gt_ego)
            if cfg.fusion.in_range(p)
        ]
        gt_frames.append(gt_world)
        fused_frames.append(world_fused)
        frame_recall = fused_recall([world_fused], [gt_world], gate)

        row.update(
            fused_points=len(fused),
            gt_in_range=len(gt_world),
            fused_recall=frame_recall,
            tx_points=tx_points,
            tx_valid=tx_valid,
            tx_body_bytes=ledger.body.get(f, 0),
            fp_near_ego=fp_near,
            fp_near_ego_added=fp_added,
            tracks=len(tracker.tracks),
        )
        if cfg.query_fusion is not None:
            row.update(queries_merged=n_query_merged, sender_gt_total=q_gt_all,
                       sender_gt_selected=q_gt_sel)
        series.append(row)

    metrics = evaluate(events, gt_frames, cfg.tracker.gate_distance, fused_frames)
    return ScenarioReport.build(cfg, series, metrics, ledger, dict(tx_hist), dict(valid_hist),
                                events)


def _fp_containment(ego_det, aligned, ms, truth, fcfg) -> tuple[int, int]:
    """Count sender false positives near an ego detection and how many got added."""
    if truth is None or not len(aligned) or not len(ego_det):
        return 0, 0
    is_fp = [isinstance(p.instance_id, str) and p.instance_id.startswith("fp")
             for p in truth.points]
    d = distance_matrix(ego_det.positions(), aligned.positions(), fcfg.planar_distance)
    near = (d < fcfg.tau_d).any(axis=0)
    added = set(ms.unmatched_sender)
    n_near = n_added = 0
    for n, fp in enumerate(is_fp):
        if fp and near[n]:
            n_near += 1
            if n in added and fcfg.in_range(aligned.points[n].position):
                n_added += 1
    return n_near, n_added
