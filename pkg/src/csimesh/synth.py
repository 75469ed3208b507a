"""Synthetic multi-day occupancy and CSI generation.

The world model is deliberately minimal: human presence multiplies a link's
per-subcarrier baseline by (1 + m(t)) where m is a band-limited sinusoid,
but only while the occupant stands inside that link's first Fresnel zone.
Sampling happens exclusively at TDMA slot instants, so sub-Nyquist aliasing
of the 1-3 Hz motion band emerges on its own.  Everything is a pure function
of (config, seed) via counter-based random streams.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator

import numpy as np

from . import geometry
from .geometry import (
    BoxRegion,
    CorridorRegion,
    LinkGeometry,
    Point3,
    RoomModel,
    Scenario,
    load_scenario,
    points_in_zone,
)
from .protocol import MAGIC, CsiPacket, TdmaSchedule
from .rng import stream

US_PER_S = 1_000_000


class OccState(Enum):
    EMPTY = "empty"
    SEDENTARY = "sedentary"
    AMBULATORY = "ambulatory"


@dataclass(frozen=True)
class Segment:
    """One contiguous occupancy bout; segments never span day boundaries."""

    index: int
    day: int
    start_us: int
    end_us: int
    state: OccState
    region_label: str = ""

    def __post_init__(self) -> None:
        if self.end_us <= self.start_us:
            raise ValueError("segment end must be after start")

    @property
    def duration_s(self) -> float:
        return (self.end_us - self.start_us) / US_PER_S


@dataclass
class OccupancyTimeline:
    """Ground-truth occupancy schedule over the simulated days."""

    day_count: int
    day_length_us: int
    segments: tuple[Segment, ...]
    walking_speed_mps: tuple[float, float] = (0.8, 1.5)

    def __post_init__(self) -> None:
        expected_start = 0
        for seg in self.segments:
            if seg.start_us != expected_start:
                raise ValueError("segments must be contiguous and cover each day")
            expected_start = seg.end_us
            day_end = seg.day * self.day_length_us
            if seg.end_us > day_end:
                raise ValueError("segment crosses a day boundary")
        if self.segments and expected_start != self.day_count * self.day_length_us:
            raise ValueError("segments do not cover the full span")
        self._starts = np.array([s.start_us for s in self.segments], dtype=np.int64)

    @property
    def span_us(self) -> int:
        return self.day_count * self.day_length_us

    def segment_at(self, t_us: int) -> Segment:
        if not 0 <= t_us < self.span_us:
            raise ValueError(f"t={t_us}us outside simulated span")
        idx = int(np.searchsorted(self._starts, t_us, side="right")) - 1
        return self.segments[idx]

    def segment_indices(self, t_us: np.ndarray) -> np.ndarray:
        t = np.asarray(t_us, dtype=np.int64)
        if t.size and (t.min() < 0 or t.max() >= self.span_us):
            raise ValueError("query times outside simulated span")
        return np.searchsorted(self._starts, t, side="right") - 1

    def empty_fraction(self) -> float:
        empty = sum(s.end_us - s.start_us for s in self.segments if s.state is OccState.EMPTY)
        return empty / self.span_us

    def state_codes(self, t_us: np.ndarray) -> np.ndarray:
        """State of each query time as an index into list(OccState)."""
        order = list(OccState)
        codes = np.array([order.index(s.state) for s in self.segments], dtype=np.int8)
        return codes[self.segment_indices(t_us)]


@dataclass(frozen=True)
class PerturberModel:
    """Human dielectric perturber: modulation depth and motion band."""

    relative_permittivity: float = 50.0
    perturbation_gain: float = 0.35
    motion_band: tuple[float, float] = (1.0, 3.0)
    sedentary_gain_factor: float = 0.1
    sedentary_burst_period_s: float = 120.0
    sedentary_burst_duration_s: float = 2.0

    def __post_init__(self) -> None:
        if self.relative_permittivity <= 1:
            raise ValueError("relative_permittivity must be > 1")
        if self.perturbation_gain < 0:
            raise ValueError("perturbation_gain must be >= 0")
        lo, hi = self.motion_band
        if not lo < hi:
            raise ValueError("motion_band lower bound must be below upper")
        if self.sedentary_burst_duration_s > self.sedentary_burst_period_s:
            raise ValueError("burst duration exceeds burst period")


@dataclass(frozen=True)
class ChannelModel:
    """Static multipath baseline plus thermal noise, per link and subcarrier."""

    subcarrier_count: int = 52
    thermal_noise_sigma: float = 0.05
    baseline_range: tuple[float, float] = (0.5, 2.0)
    iq_scale: float = 32.0

    def __post_init__(self) -> None:
        if not 1 <= self.subcarrier_count <= 52:
            raise ValueError("subcarrier_count must be in [1, 52]")
        lo, hi = self.baseline_range
        if not 0 < lo <= hi:
            raise ValueError("baseline_range must be positive and ordered")
        if self.thermal_noise_sigma < 0:
            raise ValueError("thermal_noise_sigma must be >= 0")
        if self.iq_scale <= 0:
            raise ValueError("iq_scale must be > 0")


class ChannelState:
    """Per-link baseline amplitudes and quantizer phases, drawn once per seed."""

    def __init__(self, links: list[LinkGeometry], channel: ChannelModel, seed: int):
        self.channel = channel
        self.seed = seed
        k = channel.subcarrier_count
        lo, hi = channel.baseline_range
        self._baseline: dict[tuple[int, int], np.ndarray] = {}
        self._phase: dict[tuple[int, int], np.ndarray] = {}
        for link in links:
            rng = stream(seed, "channel", link.tx, link.rx)
            self._baseline[link.key] = np.exp(
                rng.uniform(math.log(lo), math.log(hi), size=k)
            )
            self._phase[link.key] = rng.uniform(0.0, 2.0 * math.pi, size=k)

    @property
    def subcarrier_count(self) -> int:
        return self.channel.subcarrier_count

    @property
    def noise_sigma(self) -> float:
        return self.channel.thermal_noise_sigma

    def baseline(self, key: tuple[int, int]) -> np.ndarray:
        return self._baseline[key]

    def phase(self, key: tuple[int, int]) -> np.ndarray:
        return self._phase[key]


@dataclass(frozen=True)
class TimelineParams:
    """Day structure and occupant behaviour knobs."""

    day_length_s: float = 1440.0
    empty_target: float = 0.65
    sedentary_share: float = 0.55
    empty_segment_s: tuple[float, float] = (90.0, 300.0)
    sedentary_segment_s: tuple[float, float] = (60.0, 180.0)
    ambulatory_segment_s: tuple[float, float] = (25.0, 60.0)
    walking_speed_mps: tuple[float, float] = (0.8, 1.5)
    region_drift_contrast: float = 6.0

    def __post_init__(self) -> None:
        if self.day_length_s <= 0:
            raise ValueError("day_length_s must be > 0")
        if not 0.0 <= self.empty_target <= 1.0 or not 0.0 <= self.sedentary_share <= 1.0:
            raise ValueError("infeasible mix: state fractions must lie in [0, 1]")
        for rng_ in (self.empty_segment_s, self.sedentary_segment_s, self.ambulatory_segment_s):
            if not 0 < rng_[0] <= rng_[1]:
                raise ValueError("segment duration ranges must be positive and ordered")
        if not 0 < self.walking_speed_mps[0] <= self.walking_speed_mps[1]:
            raise ValueError("walking speed range must be positive and ordered")
        if self.region_drift_contrast < 1.0:
            raise ValueError("region_drift_contrast must be >= 1")


@dataclass
class SimConfig:
    """Everything a simulation run depends on; runs are pure in (config)."""

    scenario: Scenario | str = "table1_livingroom"
    days: int = 12
    timeline: TimelineParams = field(default_factory=TimelineParams)
    perturber: PerturberModel = field(default_factory=PerturberModel)
    channel: ChannelModel = field(default_factory=ChannelModel)
    slot_ms: float = 80.0
    seed: int = 42

    def __post_init__(self) -> None:
        if self.days < 0:
            raise ValueError("days must be >= 0")
        if self.slot_ms <= 0:
            raise ValueError("slot_ms must be > 0")

    def resolve_scenario(self) -> Scenario:
        if isinstance(self.scenario, Scenario):
            return self.scenario
        return load_scenario(self.scenario)


def _pick_weighted(rng: np.random.Generator, weights: np.ndarray) -> int:
    return int(rng.choice(len(weights), p=weights / weights.sum()))


def _day_region_weights(
    seed: int, day: int, kind: str, count: int, contrast: float
) -> np.ndarray:
    """Per-day preference over regions of one kind; the favourite rotates.

    This is what makes the identity of the informative links drift across
    days the way occupant routines do between weekdays and weekends.
    """
    w = np.ones(count)
    if count > 1 and contrast > 1.0:
        favoured = int(stream(seed, "drift", day, kind).integers(count))
        w[favoured] = contrast
    return w


def generate_timeline(config: SimConfig) -> OccupancyTimeline:
    """Labelled segments for every simulated day, seeded and feedback-balanced.

    Within each day the next state is chosen to steer the realised empty-time
    fraction toward ``empty_target`` (and the sedentary share of occupied time
    toward ``sedentary_share``), so realised fractions land within a segment
    length of the targets.
    """
    scenario = config.resolve_scenario()
    p = config.timeline
    corridors = [r for r in scenario.room.regions if isinstance(r, CorridorRegion)]
    boxes = [r for r in scenario.room.regions if isinstance(r, BoxRegion)]
    if p.empty_target < 1.0:
        if p.sedentary_share > 0.0 and not boxes:
            raise ValueError("sedentary segments requested but scenario has no box regions")
        if p.sedentary_share < 1.0 and not corridors:
            raise ValueError("ambulatory segments requested but scenario has no corridors")

    day_us = int(round(p.day_length_s * US_PER_S))
    segments: list[Segment] = []
    index = 0
    for day in range(1, config.days + 1):
        rng = stream(config.seed, "timeline", day)
        corridor_w = _day_region_weights(
            config.seed, day, "corridor", len(corridors), p.region_drift_contrast
        )
        box_w = _day_region_weights(config.seed, day, "box", len(boxes), p.region_drift_contrast)
        t = 0
        empty_t = 0
        sed_t = 0
        amb_t = 0
        day_start = (day - 1) * day_us
        while t < day_us:
            if empty_t <= p.empty_target * t and p.empty_target > 0.0:
                state = OccState.EMPTY
                lo, hi = p.empty_segment_s
                region = ""
            else:
                occupied = sed_t + amb_t
                if sed_t <= p.sedentary_share * occupied and p.sedentary_share > 0.0:
                    state = OccState.SEDENTARY
                    lo, hi = p.sedentary_segment_s
                    region = boxes[_pick_weighted(rng, box_w)].label
                else:
                    state = OccState.AMBULATORY
                    lo, hi = p.ambulatory_segment_s
                    region = corridors[_pick_weighted(rng, corridor_w)].label
            dur = int(round(rng.uniform(lo, hi) * US_PER_S))
            dur = min(dur, day_us - t)
            seg = Segment(
                index=index,
                day=day,
                start_us=day_start + t,
                end_us=day_start + t + dur,
                state=state,
                region_label=region,
            )
            segments.append(seg)
            index += 1
            if state is OccState.EMPTY:
                empty_t += dur
            elif state is OccState.SEDENTARY:
                sed_t += dur
            else:
                amb_t += dur
            t += dur
    return OccupancyTimeline(
        day_count=config.days,
        day_length_us=day_us,
        segments=tuple(segments),
        walking_speed_mps=p.walking_speed_mps,
    )


def _pingpong(s: np.ndarray, length: float) -> np.ndarray:
    """Reflect arc-length positions into [0, length] (walker bounces back)."""
    if length <= 0:
        return np.zeros_like(s)
    m = np.mod(s, 2.0 * length)
    return np.where(m <= length, m, 2.0 * length - m)


def occupant_positions(
    timeline: OccupancyTimeline, t_us: np.ndarray, room: RoomModel, seed: int
) -> np.ndarray:
    """Occupant position at each query time; NaN rows while the room is empty.

    Sedentary segments pin a single in-region point for their whole duration;
    ambulatory segments advance along the corridor centerline at a constant
    per-segment walking speed, bouncing at the ends.
    """
    t = np.asarray(t_us, dtype=np.int64)
    out = np.full((t.size, 3), np.nan)
    seg_idx = timeline.segment_indices(t.reshape(-1))
    flat_t = t.reshape(-1)
    for idx in np.unique(seg_idx):
        seg = timeline.segments[int(idx)]
        sel = seg_idx == idx
        if seg.state is OccState.EMPTY:
            continue
        region = room.region(seg.region_label)
        if seg.state is OccState.SEDENTARY:
            draw = stream(seed, "sed-point", seg.index).random(region.unit_dims)
            out[sel] = np.atleast_2d(region.sample_unit(draw))[0]
        else:
            if not isinstance(region, CorridorRegion):
                raise ValueError(f"ambulatory segment {seg.index} needs a corridor region")
            u = stream(seed, "walk", seg.index).random(3)
            lo, hi = timeline.walking_speed_mps
            speed = lo + u[0] * (hi - lo)
            s0 = u[1] * region.length
            direction = 1.0 if u[2] < 0.5 else -1.0
            dt_s = (flat_t[sel] - seg.start_us) / US_PER_S
            s = _pingpong(s0 + direction * speed * dt_s, region.length)
            out[sel] = region.point_at(s)
    return out.reshape(t.shape + (3,))


def occupant_position(
    timeline: OccupancyTimeline, t_us: int, room: RoomModel, seed: int
) -> Point3 | None:
    """Single-query variant of ``occupant_positions``."""
    pos = occupant_positions(timeline, np.array([t_us]), room, seed)[0]
    if np.any(np.isnan(pos)):
        return None
    return Point3(float(pos[0]), float(pos[1]), float(pos[2]))


@dataclass(frozen=True)
class MotionState:
    """Sinusoidal modulation parameters for one occupancy bout."""

    frequency_hz: float
    phase_rad: float
    gain: float
    start_s: float = 0.0
    burst_period_s: float | None = None
    burst_duration_s: float = 0.0

    def value_at(self, t_s: float | np.ndarray) -> np.ndarray:
        rel = np.asarray(t_s, dtype=np.float64) - self.start_s
        m = self.gain * np.sin(2.0 * math.pi * self.frequency_hz * rel + self.phase_rad)
        if self.burst_period_s is not None:
            m = m * (np.mod(rel, self.burst_period_s) < self.burst_duration_s)
        return m

    @classmethod
    def for_segment(cls, seed: int, segment: Segment, perturber: PerturberModel) -> "MotionState":
        rng = stream(seed, "motion", segment.index)
        lo, hi = perturber.motion_band
        freq = float(rng.uniform(lo, hi))
        phase = float(rng.uniform(0.0, 2.0 * math.pi))
        if segment.state is OccState.SEDENTARY:
            return cls(
                frequency_hz=freq,
                phase_rad=phase,
                gain=perturber.perturbation_gain * perturber.sedentary_gain_factor,
                start_s=segment.start_us / US_PER_S,
                burst_period_s=perturber.sedentary_burst_period_s,
                burst_duration_s=perturber.sedentary_burst_duration_s,
            )
        return cls(
            frequency_hz=freq,
            phase_rad=phase,
            gain=perturber.perturbation_gain,
            start_s=segment.start_us / US_PER_S,
        )


def synthesize_csi(
    link: LinkGeometry,
    channel_state: ChannelState,
    perturber: PerturberModel,
    occupant: Point3 | np.ndarray | None,
    t_s: float,
    rng: np.random.Generator | None = None,
    motion: MotionState | None = None,
) -> np.ndarray:
    """Amplitude vector for one link at one instant.

    The baseline is modulated only when the occupant stands inside the link's
    first Fresnel zone; otherwise the empty-room generating process applies.
    ``motion`` carries the bout's sinusoid; without it a steady mid-band walk
    at full perturbation gain is assumed.
    """
    base = channel_state.baseline(link.key)
    m = 0.0
    if occupant is not None and geometry.in_fresnel_zone(
        occupant if isinstance(occupant, Point3) else np.asarray(occupant), link, 1
    ):
        if motion is None:
            lo, hi = perturber.motion_band
            motion = MotionState(
                frequency_hz=(lo + hi) / 2.0,
                phase_rad=0.0,
                gain=perturber.perturbation_gain,
            )
        m = float(motion.value_at(t_s))
    amp = base * (1.0 + m)
    sigma = channel_state.noise_sigma
    if sigma > 0 and rng is not None:
        amp = amp + rng.normal(0.0, sigma, size=base.shape)
    return amp


def quantize_iq(amp: np.ndarray, phase: np.ndarray, scale: float) -> np.ndarray:
    """Map float amplitudes to signed 8-bit I/Q pairs at fixed phases.

    The decoder recovers sqrt(I^2+Q^2) ~= scale * amp, so downstream features
    see a consistently scaled (and slightly quantized) amplitude.
    """
    i = np.clip(np.rint(amp * scale * np.cos(phase)), -127, 127).astype(np.int8)
    q = np.clip(np.rint(amp * scale * np.sin(phase)), -127, 127).astype(np.int8)
    return np.stack([i, q], axis=-1)


@dataclass
class DayBlock:
    """All packets and per-cycle labels for one simulated day, canonical order."""

    day: int
    cycles: int
    cycle_us: int
    node_ids: np.ndarray  # (P,) uint16, receiving node per packet
    tx_ids: np.ndarray  # (P,) uint16, slot owner per packet
    ts64: np.ndarray  # (P,) int64 microseconds since run start
    iq: np.ndarray  # (P, K, 2) int8
    label_start_us: np.ndarray  # (C,)
    label_end_us: np.ndarray  # (C,)
    labels: np.ndarray  # (C,) int8, 1 = occupied
    states: np.ndarray  # (C,) int8 index into list(OccState)


class SimulationRun:
    """Lazy, deterministic view over a simulation: day blocks on demand."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.scenario = config.resolve_scenario()
        self.schedule = TdmaSchedule(
            node_count=len(self.scenario.nodes), slot_ms=config.slot_ms
        )
        self.links = self.scenario.links()
        self.channel_state = ChannelState(self.links, config.channel, config.seed)
        self.timeline = generate_timeline(config)
        self.node_order = self.scenario.node_ids  # ascending ids = slot order
        self.cycle_us = int(round(self.schedule.cycle_ms * 1000))
        self.slot_us = int(round(config.slot_ms * 1000))
        self.day_us = self.timeline.day_length_us
        self.cycles_per_day = int(self.day_us // self.cycle_us)

    def _motion_grid(self, t_us: np.ndarray) -> np.ndarray:
        """Bout modulation value at each time, before Fresnel-zone gating."""
        out = np.zeros(t_us.shape, dtype=np.float64)
        flat = t_us.reshape(-1)
        seg_idx = self.timeline.segment_indices(flat)
        flat_out = out.reshape(-1)
        for idx in np.unique(seg_idx):
            seg = self.timeline.segments[int(idx)]
            if seg.state is OccState.EMPTY:
                continue
            motion = MotionState.for_segment(self.config.seed, seg, self.config.perturber)
            sel = seg_idx == idx
            flat_out[sel] = motion.value_at(flat[sel] / US_PER_S)
        return out

    def day_block(self, day: int) -> DayBlock:
        if not 1 <= day <= self.config.days:
            raise ValueError(f"day {day} outside run")
        n = len(self.node_order)
        c = self.cycles_per_day
        k = self.channel_state.subcarrier_count
        day_start = (day - 1) * self.day_us
        cycle_starts = day_start + np.arange(c, dtype=np.int64) * self.cycle_us
        slot_times = cycle_starts[:, None] + np.arange(n, dtype=np.int64)[None, :] * self.slot_us

        positions = occupant_positions(
            self.timeline, slot_times, self.scenario.room, self.config.seed
        )  # (C, N, 3)
        m_grid = self._motion_grid(slot_times)  # (C, N)

        per_link = n - 1
        p = c * n * per_link
        iq = np.empty((p, k, 2), dtype=np.int8)
        rx_ids = np.empty(p, dtype=np.uint16)
        tx_ids = np.empty(p, dtype=np.uint16)
        stride = n * per_link

        links_by_key = {l.key: l for l in self.links}
        for s, tx in enumerate(self.node_order):
            rx_list = [nid for nid in self.node_order if nid != tx]
            for r_idx, rx in enumerate(rx_list):
                link = links_by_key[(tx, rx)]
                base = self.channel_state.baseline(link.key)
                phase = self.channel_state.phase(link.key)
                zone = points_in_zone(positions[:, s, :], link)  # NaN rows -> False
                m_link = m_grid[:, s] * zone
                amps = base[None, :] * (1.0 + m_link[:, None])
                sigma = self.channel_state.noise_sigma
                if sigma > 0:
                    noise = stream(self.config.seed, "noise", day, tx, rx).normal(
                        0.0, sigma, size=(c, k)
                    )
                    amps = amps + noise
                offset = s * per_link + r_idx
                iq[offset::stride] = quantize_iq(amps, phase, self.config.channel.iq_scale)
                rx_ids[offset::stride] = rx
                tx_ids[offset::stride] = tx

        ts64 = np.repeat(slot_times.reshape(-1), per_link)
        mid = cycle_starts + self.cycle_us // 2
        states = self.timeline.state_codes(mid)
        return DayBlock(
            day=day,
            cycles=c,
            cycle_us=self.cycle_us,
            node_ids=rx_ids,
            tx_ids=tx_ids,
            ts64=ts64,
            iq=iq,
            label_start_us=cycle_starts,
            label_end_us=cycle_starts + self.cycle_us,
            labels=(states != 0).astype(np.int8),
            states=states,
        )

    def packets(self) -> Iterator[CsiPacket]:
        """All packets in TDMA emission order (timestamps wrapped to 32 bits)."""
        for day in range(1, self.config.days + 1):
            block = self.day_block(day)
            ts32 = (block.ts64 % (1 << 32)).astype(np.uint32)
            for i in range(block.iq.shape[0]):
                yield CsiPacket(
                    node_id=int(block.node_ids[i]),
                    timestamp_us=int(ts32[i]),
                    iq=block.iq[i],
                )

    def labels(self) -> Iterator[tuple[int, int, int, int, int, str]]:
        """Rows (day, cycle_index, start_us, end_us, label, state)."""
        order = list(OccState)
        for day in range(1, self.config.days + 1):
            block = self.day_block(day)
            for i in range(block.cycles):
                yield (
                    day,
                    i,
                    int(block.label_start_us[i]),
                    int(block.label_end_us[i]),
                    int(block.labels[i]),
                    order[int(block.states[i])].value,
                )

    def encode_day(self, day: int) -> bytes:
        """Length-prefixed capture bytes for one day (fast vectorized writer)."""
        block = self.day_block(day)
        k = block.iq.shape[1]
        body_len = 7 + 2 * k
        total_len = body_len + 4
        dt = np.dtype(
            [
                ("prefix", "<u2"),
                ("magic", "u1"),
                ("node", "<u2"),
                ("ts", "<u4"),
                ("iq", "i1", (k, 2)),
                ("crc", "<u4"),
            ]
        )
        p = block.iq.shape[0]
        rec = np.zeros(p, dtype=dt)
        rec["prefix"] = total_len
        rec["magic"] = MAGIC
        rec["node"] = block.node_ids
        rec["ts"] = (block.ts64 % (1 << 32)).astype(np.uint32)
        rec["iq"] = block.iq
        buf = bytearray(rec.tobytes())
        item = dt.itemsize
        crc_off = 2 + body_len
        for i in range(p):
            start = i * item
            crc = zlib.crc32(buf[start + 2 : start + 2 + body_len])
            buf[start + crc_off : start + crc_off + 4] = crc.to_bytes(4, "little")
        return bytes(buf)

    def meta(self) -> dict:
        return {
            "scenario": self.scenario.name,
            "seed": self.config.seed,
            "days": self.config.days,
            "day_length_us": self.day_us,
            "slot_ms": self.config.slot_ms,
            "cycle_us": self.cycle_us,
            "cycles_per_day": self.cycles_per_day,
            "node_ids": list(self.node_order),
            "subcarrier_count": self.channel_state.subcarrier_count,
            "empty_fraction": self.timeline.empty_fraction(),
        }


def run_simulation(config: SimConfig) -> SimulationRun:
    """Build the deterministic packet and label streams for a config."""
    scenario = config.resolve_scenario()
    if len(scenario.nodes) < 2:
        raise ValueError("simulation needs at least 2 nodes")
    cfg = replace(config, scenario=scenario)
    return SimulationRun(cfg)
