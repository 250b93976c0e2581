import copy
import math

import numpy as np
import pytest

from helpers import make_frame
from refpts import wire
from refpts.core import FusionConfig, associate, fuse
from refpts.config import apply_overrides, config_from_dict, config_to_dict, load_config
from refpts.geometry import Point3, Size3, TransformSE3, Velocity2, inverse, transform_point
from refpts.sim import (
    BandwidthLedger,
    ChannelModel,
    ConfigError,
    DetectorProfile,
    GroundTruthObject,
    ScenarioConfig,
    WorldState,
    fp_count,
    run_scenario,
    simulate_detector,
    step_world,
    transmit,
)


def obj(i, x, y, vx=0.0, vy=0.0):
    return GroundTruthObject(i, Point3(x, y, 0.8), Velocity2(vx, vy), Size3(4.5, 1.8, 1.6))


def ten_object_world():
    return WorldState(0.0, 0, tuple(obj(i, -20 + 4 * i, 3.0 * (i % 3)) for i in range(10)))


SMALL = {
    "duration_frames": 2,
    "world": {"n_objects": 8, "spawn_area": [-30, 30, -30, 30]},
    "agents": [
        {"id": 0, "role": "ego", "detector": {"fov": [-30, 0, -30, 30], "fn_rate": 0.2}},
        {"id": 1, "role": "sender", "pose": {"yaw": "180deg"},
         "detector": {"fov": [-40, 40, -40, 40], "fn_rate": 0.1}},
    ],
    "fusion": {"visible_range": [-30, 30, -30, 30]},
}


def small_config(seed, **sender_detector):
    d = copy.deepcopy(SMALL)
    d["seed"] = seed
    d["agents"][1]["detector"].update(sender_detector)
    return config_from_dict(d)


# ---------------------------------------------------------------- world


def test_step_world_constant_velocity():
    s = WorldState(0.0, 0, (obj(0, 0, 0, 10, -2),))
    one = step_world(s, 1.0)
    many = s
    for _ in range(100):
        many = step_world(many, 0.01)
    assert one.objects[0].position == (10, -2, 0.8)
    assert np.allclose(many.objects[0].position, (10, -2, 0.8), atol=1e-9)
    assert many.frame_index == 100 and many.time == pytest.approx(1.0)


def test_step_world_wrap():
    s = WorldState(0.0, 0, (obj(0, 9, 0, 2, 0),))
    out = step_world(s, 1.0, wrap=(-10, 10, -10, 10))
    assert out.objects[0].position.x == pytest.approx(-9.0)


def test_step_world_rejects_bad_dt():
    with pytest.raises(ValueError):
        step_world(ten_object_world(), 0.0)


# ------------------------------------------------------------- detector


def test_perfect_detector_returns_fov_gt():
    world = ten_object_world()
    pose = TransformSE3.from_yaw(0.4, (2, -1, 0))
    prof = DetectorProfile(fov_range=(-15, 15, -15, 15), position_noise_sigma=0.0)
    det = simulate_detector(world, pose, prof, np.random.default_rng(0))
    to_local = inverse(pose)
    expected = {}
    for o in world.objects:
        p = transform_point(to_local, o.position)
        if -15 <= p.x <= 15 and -15 <= p.y <= 15:
            expected[o.gt_id] = p
    assert {p.instance_id for p in det.points} == set(expected)
    for p in det.points:
        assert np.allclose(p.position, expected[p.instance_id], atol=1e-12)
        assert p.size == world.objects[p.instance_id].size


def test_velocity_expressed_in_agent_axes():
    world = WorldState(0.0, 0, (obj(0, 5, 0, 3, 0),))
    det = simulate_detector(world, TransformSE3.from_yaw(math.pi / 2),
                            DetectorProfile(position_noise_sigma=0.0), np.random.default_rng(0))
    assert np.allclose(det.points[0].velocity, (0, -3), atol=1e-12)


def test_all_missed_leaves_only_false_positives():
    prof = DetectorProfile(fov_range=(-50, 50, -50, 50), fn_rate=1.0, fp_rate=0.3)
    det = simulate_detector(ten_object_world(), TransformSE3.identity(), prof,
                            np.random.default_rng(1))
    assert len(det) == 3
    assert all(str(p.instance_id).startswith("fp") for p in det.points)


def test_fp_count_rounding():
    assert fp_count(0.3, 10) == 3
    assert fp_count(0.1, 0) == 0
    assert fp_count(0.1, 11) == 2
    assert fp_count(0.0, 50) == 0


def test_fn_rate_binomial_mean():
    # 10 in-FoV objects at 40% misses: mean 6.0 detections
    world = ten_object_world()
    prof = DetectorProfile(fov_range=(-50, 50, -50, 50), fn_rate=0.4)
    rng = np.random.default_rng(2024)
    counts = [len(simulate_detector(world, TransformSE3.identity(), prof, rng)) for _ in range(10_000)]
    assert abs(np.mean(counts) - 6.0) < 0.1


def test_forced_misses():
    prof = DetectorProfile(position_noise_sigma=0.0, forced_misses=((3, 0, 0),))
    det = simulate_detector(ten_object_world(), TransformSE3.identity(), prof,
                            np.random.default_rng(0))
    assert 3 not in {p.instance_id for p in det.points}
    assert len(det) == 9


def test_detector_fn_coupling():
    # the same generator state yields nested detection sets as fn_rate rises
    world = ten_object_world()
    for seed in range(200):
        ids = []
        for fn in (0.1, 0.3, 0.6):
            prof = DetectorProfile(fn_rate=fn)
            det = simulate_detector(world, TransformSE3.identity(), prof, np.random.default_rng(seed))
            ids.append({p.instance_id for p in det.points})
        assert ids[0] >= ids[1] >= ids[2]


@pytest.mark.parametrize("kw", [{"fn_rate": 1.5}, {"fp_rate": -0.1}, {"position_noise_sigma": -1},
                                {"fov_range": (1, 0, 0, 1)}, {"tp_confidence_range": (0.9, 0.1)}])
def test_detector_profile_validation(kw):
    with pytest.raises(ConfigError):
        DetectorProfile(**kw)


# -------------------------------------------------------------- channel


def payload(n=3):
    msg = wire.WireMessage(1, 0, 0, wire.PayloadFlags(), np.zeros((n, 3)))
    return wire.encode(msg)


def test_transmit_lossless_same_frame():
    ledger = BandwidthLedger()
    dl = transmit(payload(), ChannelModel(), np.random.default_rng(0), ledger, 4)
    assert dl.deliver_frame == 4 and not dl.dropped
    assert ledger.body[4] == 36 and ledger.header[4] == 32


def test_transmit_latency():
    dl = transmit(payload(), ChannelModel(latency_frames=2), np.random.default_rng(0),
                  BandwidthLedger(), 4)
    assert dl.deliver_frame == 6


def test_transmit_total_loss_still_counted():
    ledger = BandwidthLedger()
    rng = np.random.default_rng(0)
    for f in range(10):
        assert transmit(payload(), ChannelModel(drop_probability=1.0), rng, ledger, f).dropped
    assert ledger.total_body == 360 and ledger.dropped == 10 and ledger.delivered == 0


def test_transmit_bernoulli_rate():
    ledger = BandwidthLedger()
    rng = np.random.default_rng(77)
    ch = ChannelModel(drop_probability=0.3)
    data = payload(1)
    for _ in range(10_000):
        transmit(data, ch, rng, ledger, 0)
    assert abs(ledger.delivered - 7000) <= 100


def test_channel_validation():
    with pytest.raises(ConfigError):
        ChannelModel(drop_probability=2)
    with pytest.raises(ConfigError):
        ChannelModel(latency_frames=-1)
    with pytest.raises(ConfigError):
        ChannelModel(fps=0)


# ------------------------------------------------------------- scenario


def test_duration_zero_gives_empty_report():
    r = run_scenario(ScenarioConfig(duration_frames=0))
    assert r.series == [] and r.events == []
    assert r.bandwidth["total_body_bytes"] == 0


def test_determinism():
    cfg = apply_overrides(load_config("builtin:canonical"), duration=10)
    assert run_scenario(cfg).to_json() == run_scenario(cfg).to_json()


def test_different_seeds_differ():
    cfg = apply_overrides(load_config("builtin:canonical"), duration=5)
    assert run_scenario(cfg).to_json() != run_scenario(apply_overrides(cfg, seed=1)).to_json()


def test_ledger_exactness():
    cfg = apply_overrides(load_config("builtin:canonical"), duration=10)
    r = run_scenario(cfg)
    flags = wire.PayloadFlags.from_attrs("pvs")
    expected = sum(wire.payload_bytes(row["tx_points"], flags) for row in r.series)
    assert r.bandwidth["total_body_bytes"] == expected
    assert [row["tx_body_bytes"] for row in r.series] == r.bandwidth["bytes_per_frame"]
    assert r.bandwidth["total_header_bytes"] == 32 * r.bandwidth["messages"]
    assert r.bandwidth["messages"] == r.bandwidth["delivered"] + r.bandwidth["dropped"]


def test_query_mode_ledger():
    cfg = apply_overrides(load_config("builtin:canonical"), duration=4, k=10)
    r = run_scenario(cfg)
    by_kind = r.bandwidth["mean_bytes_per_frame_by_kind"]
    # reference point + confidence + 128 float semantics per query
    assert by_kind["query"] == 10 * (12 + 4 + 128 * 4)


def test_fn_monotonicity_over_seeds():
    # ego detector fixed, sender fn_rate raised; one-sided check on the mean
    rates = (0.1, 0.3, 0.6)
    recall = {fn: [] for fn in rates}
    for seed in range(1000):
        for fn in rates:
            r = run_scenario(small_config(seed, fn_rate=fn))
            recall[fn].append(r.metrics["fused_detection_recall"])
    means = [np.mean(recall[fn]) for fn in rates]
    sems = [np.std(recall[fn]) / math.sqrt(1000) for fn in rates]
    for a, b, sa, sb in zip(means, means[1:], sems, sems[1:]):
        assert b <= a + 3 * math.hypot(sa, sb)


def test_fp_containment():
    # every sender FP within tau_d of an ego detection is absorbed, never appended
    near = added = 0
    for seed in range(30):
        r = run_scenario(small_config(seed, fp_rate=0.6, fn_rate=0.0))
        near += sum(row["fp_near_ego"] for row in r.series)
        added += sum(row["fp_near_ego_added"] for row in r.series)
    assert near > 0 and added == 0


def test_fp_containment_by_construction(rng):
    # FPs dropped within tau_d of ego detections never reach the fused set
    cfg = FusionConfig()
    for _ in range(200):
        ego_xy = rng.uniform(-40, 40, (int(rng.integers(1, 15)), 3))
        fps = ego_xy[rng.integers(0, len(ego_xy), 5)] + rng.uniform(-1.4, 1.4, (5, 3)) * [1, 1, 0]
        tps = rng.uniform(-40, 40, (5, 3))
        ego = make_frame([tuple(p) for p in ego_xy])
        snd = make_frame([tuple(p) for p in np.vstack([fps, tps])], agent_id=1)
        ms = associate(ego, snd, cfg)
        out = fuse(ego, snd, ms, cfg)
        added = {p.instance_id for p in out.points[len(ego):]}
        assert not added & {f"1/{i}" for i in range(5)}


def test_config_round_trip():
    cfg = load_config("builtin:canonical")
    assert config_from_dict(config_to_dict(cfg)) == cfg


@pytest.mark.parametrize(
    "patch",
    [
        {"bogus": 1},
        {"agents": [{"id": 0, "role": "sender"}]},
        {"agents": [{"id": 0, "role": "ego"}, {"id": 0, "role": "sender"}]},
        {"agents": [{"id": 0, "role": "pilot"}]},
        {"duration_frames": -1},
        {"fusion": {"tau_d": 0}},
        {"channel": {"drop_probability": 1.5}},
        {"transmit": {"attrs": "vs"}},
        {"transmit": {"capacity": 0}},
        {"world": {"speed": "fast"}},
    ],
)
def test_config_validation(patch):
    d = copy.deepcopy(SMALL)
    d.update(patch)
    with pytest.raises(ConfigError):
        config_from_dict(d)
