"""Packet streams to per-link, per-window normalized feature vectors.

Stages mirror the collection backend: CRC-validated packets are aligned into
fixed frames (a link's transmitter is recovered from the TDMA slot its
timestamp falls in), per-link amplitude series are cut into sliding windows
of W packets, each window yields 11 statistical features, and a per-link
Z-score normalizer fitted on training data only is applied last.

All statistics are population statistics (divide by W, not W-1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .protocol import CsiPacket

DEFAULT_FRAME_MS = 50.0
DEFAULT_WINDOW = 50
DEFAULT_STRIDE = 5
LATE_FRAME_HORIZON = 2

FEATURE_NAMES = (
    "nbvi",
    "amp_variance",
    "mad",
    "iqr",
    "peak_to_peak",
    "spectral_entropy",
    "lag1_autocorr",
    "mean_subcarrier_corr",
    "snr_proxy",
    "mean_amplitude",
    "amp_skewness",
)
FEATURE_COUNT = len(FEATURE_NAMES)


@dataclass
class Frame:
    """One alignment interval: the newest packet per link inside it.

    ``timestamps`` holds the winning packet's (unwrapped) time per link;
    downstream windows use those rather than the coarse frame start.
    """

    index: int
    start_us: int
    duration_us: int
    packets: dict[tuple[int, int], CsiPacket]
    timestamps: dict[tuple[int, int], int]


def _tx_for_timestamp(ts_us: int, node_ids: Sequence[int], slot_us: int) -> int:
    return node_ids[(ts_us // slot_us) % len(node_ids)]


def synchronize(
    packets: Iterable[CsiPacket],
    node_ids: Sequence[int],
    slot_ms: float = 80.0,
    frame_ms: float = DEFAULT_FRAME_MS,
    timestamps: Sequence[int] | None = None,
) -> list[Frame]:
    """Batch frame alignment; a pure function of the packet multiset.

    Each packet lands in the half-open frame [i*frame, (i+1)*frame) its
    timestamp falls in; within a frame the newest packet per link wins.
    ``timestamps`` optionally supplies unwrapped 64-bit times (otherwise the
    raw 32-bit wire stamps are used).  Packets whose timestamp puts them in
    the transmitter's own slot are dropped.
    """
    frame_us = int(round(frame_ms * 1000))
    slot_us = int(round(slot_ms * 1000))
    best: dict[tuple[int, tuple[int, int]], tuple[int, bytes | None, CsiPacket]] = {}
    pkt_list = list(packets)
    ts_list = (
        [int(t) for t in timestamps]
        if timestamps is not None
        else [p.timestamp_us for p in pkt_list]
    )
    if len(ts_list) != len(pkt_list):
        raise ValueError("timestamps length must match packets")
    for pkt, ts in zip(pkt_list, ts_list):
        tx = _tx_for_timestamp(ts, node_ids, slot_us)
        rx = pkt.node_id
        if tx == rx:
            continue
        key = (ts // frame_us, (tx, rx))
        old = best.get(key)
        if old is None or ts > old[0]:
            best[key] = (ts, None, pkt)
        elif ts == old[0]:
            # deterministic winner independent of arrival order
            new_sig = pkt.iq.tobytes()
            old_sig = old[1] if old[1] is not None else old[2].iq.tobytes()
            if new_sig > old_sig:
                best[key] = (ts, new_sig, pkt)
            else:
                best[key] = (old[0], old_sig, old[2])
    frames: dict[int, Frame] = {}
    for (fidx, link), (ts, _, pkt) in best.items():
        frame = frames.setdefault(
            fidx,
            Frame(
                index=fidx,
                start_us=fidx * frame_us,
                duration_us=frame_us,
                packets={},
                timestamps={},
            ),
        )
        frame.packets[link] = pkt
        frame.timestamps[link] = ts
    return [frames[i] for i in sorted(frames)]


class FrameSynchronizer:
    """Streaming variant: emits frames in order, discarding very late packets.

    Packets older than ``LATE_FRAME_HORIZON`` frames behind the newest frame
    seen are counted and dropped rather than reopening emitted frames.
    """

    def __init__(
        self,
        node_ids: Sequence[int],
        slot_ms: float = 80.0,
        frame_ms: float = DEFAULT_FRAME_MS,
    ):
        self.node_ids = list(node_ids)
        self.slot_us = int(round(slot_ms * 1000))
        self.frame_us = int(round(frame_ms * 1000))
        self._pending: dict[int, Frame] = {}
        self._max_frame = -1
        self.late_discarded = 0
        self.self_slot_skipped = 0
        self.assigned = 0

    def push(self, packet: CsiPacket, ts64: int | None = None) -> list[Frame]:
        ts = packet.timestamp_us if ts64 is None else ts64
        tx = _tx_for_timestamp(ts, self.node_ids, self.slot_us)
        if tx == packet.node_id:
            self.self_slot_skipped += 1
            return []
        fidx = ts // self.frame_us
        if fidx < self._max_frame - LATE_FRAME_HORIZON:
            self.late_discarded += 1
            return []
        frame = self._pending.setdefault(
            fidx,
            Frame(
                index=fidx,
                start_us=fidx * self.frame_us,
                duration_us=self.frame_us,
                packets={},
                timestamps={},
            ),
        )
        link = (tx, packet.node_id)
        old_ts = frame.timestamps.get(link)
        if old_ts is None or ts >= old_ts:
            frame.packets[link] = packet
            frame.timestamps[link] = ts
        self.assigned += 1
        self._max_frame = max(self._max_frame, fidx)
        ready = [i for i in self._pending if i < self._max_frame - LATE_FRAME_HORIZON]
        return [self._pending.pop(i) for i in sorted(ready)]

    def flush(self) -> list[Frame]:
        out = [self._pending[i] for i in sorted(self._pending)]
        self._pending.clear()
        return out


@dataclass
class CsiWindow:
    """W consecutive amplitude vectors of one link."""

    tx: int
    rx: int
    start_us: int
    end_us: int
    amplitudes: np.ndarray  # (W, K)

    def __post_init__(self) -> None:
        a = np.asarray(self.amplitudes, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1:
            raise ValueError("amplitudes must be a (W, K) matrix")
        if np.any(a < 0):
            raise ValueError("amplitudes must be non-negative")
        if self.end_us < self.start_us:
            raise ValueError("window end precedes start")
        self.amplitudes = a

    @property
    def window_size(self) -> int:
        return int(self.amplitudes.shape[0])


def link_series_from_frames(
    frames: Iterable[Frame], link: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    """(timestamps, amplitude matrix) for one link across a frame stream."""
    ts: list[int] = []
    amps: list[np.ndarray] = []
    for frame in frames:
        pkt = frame.packets.get(link)
        if pkt is None:
            continue
        ts.append(frame.timestamps[link])
        amps.append(pkt.amplitudes())
    if not ts:
        return np.empty(0, dtype=np.int64), np.empty((0, 0))
    return np.array(ts, dtype=np.int64), np.stack(amps)


def sliding_windows(
    timestamps: np.ndarray,
    amplitudes: np.ndarray,
    window: int = DEFAULT_WINDOW,
    stride: int = DEFAULT_STRIDE,
) -> Iterator[tuple[int, int, int, np.ndarray]]:
    """Yield (window_index, start_us, end_us, (W, K) view) over a series."""
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    t = np.asarray(timestamps)
    n = len(t)
    widx = 0
    for start in range(0, n - window + 1, stride):
        stop = start + window
        yield widx, int(t[start]), int(t[stop - 1]), amplitudes[start:stop]
        widx += 1


@dataclass(frozen=True)
class FeatureVector:
    """The 11 per-window statistics, in the canonical column order."""

    nbvi: float
    amp_variance: float
    mad: float
    iqr: float
    peak_to_peak: float
    spectral_entropy: float
    lag1_autocorr: float
    mean_subcarrier_corr: float
    snr_proxy: float
    mean_amplitude: float
    amp_skewness: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES])

    @classmethod
    def from_array(cls, values: np.ndarray) -> "FeatureVector":
        return cls(**{name: float(v) for name, v in zip(FEATURE_NAMES, values)})


FLAG_MEAN_GUARD = "nbvi_mean_guard"
FLAG_DEGENERATE = "degenerate_window"

_FEATURE_EPS = 1e-12
_NORM_EPS = 1e-8


def _as_matrix(window: CsiWindow | np.ndarray) -> np.ndarray:
    if isinstance(window, CsiWindow):
        return window.amplitudes
    a = np.asarray(window, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("window must be a (W, K) matrix")
    return a


def nbvi(window: CsiWindow | np.ndarray, eps: float = _FEATURE_EPS) -> float:
    """Mean per-subcarrier coefficient of variation sigma_k / mu_k.

    Zero subcarrier means are replaced by ``eps``; extract_features flags
    windows where the guard fired.
    """
    a = _as_matrix(window)
    mu = a.mean(axis=0)
    sigma = a.std(axis=0)
    return float(np.mean(sigma / np.where(mu > 0, mu, eps)))


def amplitude_variance(window: CsiWindow | np.ndarray) -> float:
    """Mean per-subcarrier population variance of the amplitudes."""
    a = _as_matrix(window)
    return float(np.mean(a.var(axis=0)))


def _spectral_entropy(mean_series: np.ndarray) -> float:
    x = mean_series - mean_series.mean()
    power = np.abs(np.fft.rfft(x)) ** 2
    power = power[1:]  # DC removed with the mean
    total = power.sum()
    if total <= 0:
        return 0.0
    p = power / total
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def extract_features(
    window: CsiWindow | np.ndarray, eps: float = _FEATURE_EPS
) -> tuple[FeatureVector, frozenset[str]]:
    """Compute the 11-feature vector plus guard flags for one window.

    Degenerate (constant) windows take the documented conventions: zero for
    dispersion, correlation, entropy and skewness, and a flagged-max SNR.
    """
    a = _as_matrix(window)
    w, k = a.shape
    flags: set[str] = set()

    mu_k = a.mean(axis=0)
    sigma_k = a.std(axis=0)
    if np.any(mu_k <= 0):
        flags.add(FLAG_MEAN_GUARD)
    nbvi_v = float(np.mean(sigma_k / np.where(mu_k > 0, mu_k, eps)))
    var_v = float(np.mean(sigma_k**2))

    m = a.mean(axis=1)
    med = np.median(m)
    mad_v = float(np.median(np.abs(m - med)))
    q75, q25 = np.percentile(m, [75, 25], method="linear")
    iqr_v = float(q75 - q25)
    ptp_v = float(m.max() - m.min())
    ent_v = _spectral_entropy(m)

    mu = m.mean()
    d = m - mu
    denom = float((d**2).sum())
    lag1_v = float((d[:-1] * d[1:]).sum() / denom) if denom > 0 else 0.0

    if k < 2:
        corr_v = 0.0
    else:
        valid = sigma_k > 0
        z = np.where(valid, (a - mu_k) / np.where(valid, sigma_k, 1.0), 0.0)
        s = z.sum(axis=1)
        corr_v = float(((s**2).sum() / w - valid.sum()) / (k * (k - 1)))

    sigma_m = float(m.std())
    if sigma_m == 0.0:
        flags.add(FLAG_DEGENERATE)
    snr_v = float(mu / (sigma_m + eps))
    skew_v = float((d**3).mean() / sigma_m**3) if sigma_m > 0 else 0.0

    fv = FeatureVector(
        nbvi=nbvi_v,
        amp_variance=var_v,
        mad=mad_v,
        iqr=iqr_v,
        peak_to_peak=ptp_v,
        spectral_entropy=ent_v,
        lag1_autocorr=lag1_v,
        mean_subcarrier_corr=corr_v,
        snr_proxy=snr_v,
        mean_amplitude=float(mu),
        amp_skewness=skew_v,
    )
    return fv, frozenset(flags)


def extract_features_batch(
    amplitudes: np.ndarray,
    window: int = DEFAULT_WINDOW,
    stride: int = DEFAULT_STRIDE,
    eps: float = _FEATURE_EPS,
) -> tuple[np.ndarray, list[frozenset[str]]]:
    """Vectorized twin of extract_features over a whole (T, K) series.

    Returns an (n_windows, 11) matrix in FEATURE_NAMES order; asserted equal
    to the per-window path in the test suite.
    """
    a = np.asarray(amplitudes, dtype=np.float64)
    t, k = a.shape
    if t < window:
        return np.empty((0, FEATURE_COUNT)), []
    views = np.lib.stride_tricks.sliding_window_view(a, window, axis=0)[::stride]
    views = views.transpose(0, 2, 1)  # (n, W, K)
    n = views.shape[0]
    w = window

    mu_k = views.mean(axis=1)  # (n, K)
    sigma_k = views.std(axis=1)
    guard = np.any(mu_k <= 0, axis=1)
    nbvi_v = np.mean(sigma_k / np.where(mu_k > 0, mu_k, eps), axis=1)
    var_v = np.mean(sigma_k**2, axis=1)

    m = views.mean(axis=2)  # (n, W)
    med = np.median(m, axis=1, keepdims=True)
    mad_v = np.median(np.abs(m - med), axis=1)
    q = np.percentile(m, [25, 75], axis=1, method="linear")
    iqr_v = q[1] - q[0]
    ptp_v = m.max(axis=1) - m.min(axis=1)

    x = m - m.mean(axis=1, keepdims=True)
    power = np.abs(np.fft.rfft(x, axis=1)) ** 2
    power = power[:, 1:]
    total = power.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = power / total[:, None]
        logp = np.where(p > 0, np.log2(np.where(p > 0, p, 1.0)), 0.0)
    ent_v = np.where(total > 0, -(p * logp).sum(axis=1), 0.0)

    denom = (x**2).sum(axis=1)
    lag_num = (x[:, :-1] * x[:, 1:]).sum(axis=1)
    lag1_v = np.where(denom > 0, lag_num / np.where(denom > 0, denom, 1.0), 0.0)

    if k < 2:
        corr_v = np.zeros(n)
    else:
        valid = sigma_k > 0  # (n, K)
        z = np.where(
            valid[:, None, :],
            (views - mu_k[:, None, :]) / np.where(valid, sigma_k, 1.0)[:, None, :],
            0.0,
        )
        s = z.sum(axis=2)  # (n, W)
        corr_v = ((s**2).sum(axis=1) / w - valid.sum(axis=1)) / (k * (k - 1))

    sigma_m = m.std(axis=1)
    degenerate = sigma_m == 0.0
    snr_v = m.mean(axis=1) / (sigma_m + eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        skew_v = np.where(degenerate, 0.0, (x**3).mean(axis=1) / np.where(degenerate, 1.0, sigma_m) ** 3)

    feats = np.stack(
        [
            nbvi_v,
            var_v,
            mad_v,
            iqr_v,
            ptp_v,
            ent_v,
            lag1_v,
            corr_v,
            snr_v,
            m.mean(axis=1),
            skew_v,
        ],
        axis=1,
    )
    flags = []
    for i in range(n):
        f: set[str] = set()
        if guard[i]:
            f.add(FLAG_MEAN_GUARD)
        if degenerate[i]:
            f.add(FLAG_DEGENERATE)
        flags.append(frozenset(f))
    return feats, flags


class NotFittedError(ValueError):
    pass


@dataclass
class LinkStats:
    """Per-link Z-score parameters: x -> (x - mu) / (sigma + eps)."""

    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    eps: float = _NORM_EPS

    @property
    def fitted(self) -> bool:
        return self.mean is not None and self.std is not None

    @classmethod
    def fit(cls, features: np.ndarray, eps: float = _NORM_EPS) -> "LinkStats":
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("need an (n, F) feature matrix to fit")
        if eps <= 0:
            raise ValueError("eps must be > 0")
        return cls(mean=x.mean(axis=0), std=x.std(axis=0), eps=eps)


def normalize(features: np.ndarray, stats: LinkStats) -> np.ndarray:
    """Apply fitted Z-score parameters; fitting and applying stay separate."""
    if not stats.fitted:
        raise NotFittedError("LinkStats must be fitted before normalizing")
    x = np.asarray(features, dtype=np.float64)
    return (x - stats.mean) / (stats.std + stats.eps)
