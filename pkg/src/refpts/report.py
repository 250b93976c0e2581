"""Scenario reports: JSON serialisation, CSV series export, event logs."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from refpts import wire
from refpts.config import config_from_dict, config_to_dict
from refpts.sim import BandwidthLedger, ScenarioConfig, sender_flags
from refpts.tracking import FrameEvents, TrackingMetrics

REPORT_VERSION = 1


def _max_payload(cfg: ScenarioConfig) -> int:
    """Per-frame record body when every sender fills its query capacity."""
    total = 0
    for a in cfg.senders:
        total += wire.payload_bytes(cfg.capacity, sender_flags(cfg, a))
        if cfg.query_fusion is not None:
            q = cfg.query_fusion
            qflags = wire.PayloadFlags(has_confidence=True, has_semantics=True)
            total += wire.payload_bytes(min(q.fusion.k, cfg.capacity), qflags, q.embed_dim)
    return total


@dataclass
class ScenarioReport:
    config: dict
    seed: int
    series: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    bandwidth: dict = field(default_factory=dict)
    effective_points: dict = field(default_factory=dict)
    valid_points: dict = field(default_factory=dict)
    events: list[FrameEvents] = field(default_factory=list, repr=False, compare=False)

    @classmethod
    def build(
        cls,
        cfg: ScenarioConfig,
        series: list[dict],
        metrics: TrackingMetrics,
        ledger: BandwidthLedger,
        tx_hist: dict[int, int],
        valid_hist: dict[int, int],
        events: Sequence[FrameEvents] = (),
    ) -> ScenarioReport:
        n = cfg.duration_frames
        per_frame = [ledger.body.get(f, 0) for f in range(n)]
        mean = sum(per_frame) / n if n else 0.0
        bw = {
            "fps": cfg.channel.fps,
            "frames": n,
            "messages": ledger.messages,
            "delivered": ledger.delivered,
            "dropped": ledger.dropped,
            "total_body_bytes": ledger.total_body,
            "total_header_bytes": ledger.total_header,
            "bytes_per_frame": per_frame,
            "mean_bytes_per_frame": mean,
            "mean_bytes_per_second": mean * cfg.channel.fps,
            "mean_bytes_per_frame_by_kind": {
                k: (sum(v.values()) / n if n else 0.0) for k, v in sorted(ledger.by_kind.items())
            },
            "peak_bytes_per_frame": max(per_frame, default=0),
            "max_payload_per_frame": _max_payload(cfg),
            "max_bandwidth": wire.bandwidth_at_fps(_max_payload(cfg), cfg.channel.fps),
        }
        return cls(
            config=config_to_dict(cfg),
            seed=cfg.seed,
            series=series,
            metrics=metrics.to_dict(),
            bandwidth=bw,
            effective_points={str(k): v for k, v in sorted(tx_hist.items())},
            valid_points={str(k): v for k, v in sorted(valid_hist.items())},
            events=list(events),
        )

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "seed": self.seed,
            "config": self.config,
            "metrics": self.metrics,
            "bandwidth": self.bandwidth,
            "effective_points": self.effective_points,
            "valid_points": self.valid_points,
            "series": self.series,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> ScenarioReport:
        d = json.loads(text)
        if d.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('version')}")
        return cls(
            config=d["config"], seed=d["seed"], series=d["series"], metrics=d["metrics"],
            bandwidth=d["bandwidth"], effective_points=d["effective_points"],
            valid_points=d["valid_points"],
        )

    def scenario_config(self) -> ScenarioConfig:
        return config_from_dict(self.config)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def series_csv(self) -> str:
        if not self.series:
            return ""
        keys = list(self.series[0])
        for row in self.series[1:]:
            keys.extend(k for k in row if k not in keys)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        w.writerows(self.series)
        return buf.getvalue()

    def events_jsonl(self) -> str:
        return "".join(ev.to_json() + "\n" for ev in self.events)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "report": out / "report.json",
            "series": out / "series.csv",
            "events": out / "events.jsonl",
        }
        paths["report"].write_text(self.to_json())
        paths["series"].write_text(self.series_csv())
        paths["events"].write_text(self.events_jsonl())
        return paths


def summary_row(report: ScenarioReport, extra: Optional[dict] = None) -> dict:
    m, b = report.metrics, report.bandwidth
    row = dict(extra or {})
    row.update(
        seed=report.seed,
        fused_recall=round(m["fused_detection_recall"], 6),
        recall=round(m["recall"], 6),
        precision=round(m["precision"], 6),
        id_switches=m["id_switches"],
        persistence=round(m["mean_track_persistence"], 6),
        mean_bytes_per_frame=round(b["mean_bytes_per_frame"], 3),
        mean_bytes_per_second=round(b["mean_bytes_per_second"], 3),
        query_bytes_per_frame=round(b["mean_bytes_per_frame_by_kind"].get("query", 0.0), 3),
        max_payload_per_frame=b["max_payload_per_frame"],
    )
    return row
