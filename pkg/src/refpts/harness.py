"""Parameter sweeps and the payload/bandwidth comparison table."""

from __future__ import annotations

import csv
import io
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from refpts import wire
from refpts.config import apply_overrides, config_from_dict, config_to_dict, load_yaml
from refpts.report import summary_row
from refpts.sim import ConfigError, ScenarioConfig, run_scenario

log = logging.getLogger(__name__)

# sweep axis name -> apply_overrides keyword
AXES = {
    "fn_rate": "fn_rate",
    "fp_rate": "fp_rate",
    "k": "k",
    "lambda": "lam",
    "tau_d": "tau_d",
    "attrs": "attrs",
    "fps": "fps",
    "points": "points",
    "duration": "duration",
}


def sub_seed(master: int, index: int) -> int:
    """Seed of sweep cell ``index``; depends on nothing else."""
    return int(np.random.SeedSequence([master, index]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class GridSpec:
    base: ScenarioConfig
    axes: dict[str, list]
    master_seed: int
    repeats: int = 1

    def cells(self) -> list[dict]:
        names = list(self.axes)
        combos = itertools.product(*(self.axes[n] for n in names)) if names else iter(())
        out = []
        for params in combos:
            for rep in range(self.repeats):
                out.append({**dict(zip(names, params)), "repeat": rep})
        return out


def load_grid(path) -> GridSpec:
    """Grid file: ``base`` (inline config or path), ``axes``, ``seed``, ``repeats``."""
    d = load_yaml(path) or {}
    if not isinstance(d, dict):
        raise ConfigError("grid file must be a mapping")
    base = d.get("base", {})
    if isinstance(base, str):
        base = load_yaml(base) or {}
    axes = d.get("axes") or {}
    unknown = set(axes) - set(AXES)
    if unknown:
        raise ConfigError(f"unknown sweep axes {sorted(unknown)}")
    for name, vals in axes.items():
        if not isinstance(vals, list):
            raise ConfigError(f"axis {name!r} must list its values")
    cfg = config_from_dict(base)
    return GridSpec(cfg, dict(axes), int(d.get("seed", cfg.seed)), int(d.get("repeats", 1)))


def _run_cell(args: tuple[dict, dict, int]) -> dict:
    base_dict, params, seed = args
    row = {k: v for k, v in params.items()}
    try:
        cfg = config_from_dict(base_dict)
        kw = {AXES[k]: v for k, v in params.items() if k in AXES}
        cfg = apply_overrides(cfg, seed=seed, **kw)
        report = run_scenario(cfg)
        row = summary_row(report, row)
        row["status"] = "ok"
    except Exception as exc:  # one failed cell must not sink the sweep
        row.update(seed=seed, status=f"error: {type(exc).__name__}: {exc}")
    return row


def run_sweep(grid: GridSpec, workers: int = 1) -> list[dict]:
    cells = grid.cells()
    base = config_to_dict(grid.base)
    jobs = [(base, params, sub_seed(grid.master_seed, i)) for i, params in enumerate(cells)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_run_cell, jobs))
    else:
        rows = [_run_cell(j) for j in jobs]
    for i, r in enumerate(rows):
        r["cell"] = i
    return rows


def rows_to_csv(rows: Sequence[dict], delimiter: str = ",") -> str:
    if not rows:
        return ""
    keys = ["cell"]
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, delimiter=delimiter, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


# ----------------------------------------------------------- bandwidth


@dataclass(frozen=True)
class BandwidthRow:
    method: str
    bytes_per_frame: int
    fps: float

    @property
    def kib_per_frame(self) -> float:
        return wire.to_kib(self.bytes_per_frame)

    @property
    def kib_per_second(self) -> float:
        return wire.to_kib(wire.bandwidth_at_fps(self.bytes_per_frame, self.fps))


VARIANTS = (
    ("RefPtsFusion", "p"),
    ("RefPtsFusion + V.", "pv"),
    ("RefPtsFusion + S.", "ps"),
    ("RefPtsFusion + V.S.", "pvs"),
)


def bandwidth_rows(fps: float = 5.0, points: int = 900) -> list[BandwidthRow]:
    rows = [BandwidthRow(b.name, b.bytes_per_frame, fps) for b in wire.baseline_payloads().values()]
    for name, attrs in VARIANTS:
        rows.append(
            BandwidthRow(name, wire.payload_bytes(points, wire.PayloadFlags.from_attrs(attrs)), fps)
        )
    return rows


def fmt_kib(v: float) -> str:
    if v >= 1000 or float(v).is_integer():
        return f"{v:,.0f}"
    return f"{v:.1f}"


def format_bandwidth_table(rows: Sequence[BandwidthRow]) -> str:
    lines = [f"{'Fusion method':<22}{'Max. payload/frame':>20}{'Bandwidth':>16}"]
    for r in rows:
        lines.append(
            f"{r.method:<22}{fmt_kib(r.kib_per_frame) + ' KB':>20}"
            f"{fmt_kib(r.kib_per_second) + ' KB/s':>16}"
        )
    return "\n".join(lines)


def effective_traffic(n_points: int, flags: Optional[wire.PayloadFlags] = None,
                      fps: float = 5.0, include_header: bool = False) -> float:
    """Bytes per second for ``n_points`` transmitted records per frame."""
    flags = flags or wire.PayloadFlags(True, True, True)
    return wire.bandwidth_at_fps(wire.payload_bytes(n_points, flags, include_header=include_header), fps)


def reduction_factor(n_points: int, flags: Optional[wire.PayloadFlags] = None,
                     fps: float = 5.0, include_header: bool = False) -> float:
    base = wire.bandwidth_at_fps(wire.baseline_payloads()["M3CAD"].bytes_per_frame, fps)
    return base / effective_traffic(n_points, flags, fps, include_header)
