"""Datasets: synthetic multi-domain generator, segment files, manifests.

Fault signatures follow the usual bearing kinematics: a fault on a race
produces an impulse train at the ball-pass frequency (a per-geometry
multiple of the shaft rate), each impact ringing the structure at its
resonance.  Inner-race impacts pass through the load zone once per
shaft turn, amplitude-modulating the train; outer-race impacts sit at a
fixed angle and stay unmodulated.  Each synthetic domain draws its own
geometry, resonance, damping, sensor tilt, and noise floor, so domains
differ the way different rigs differ while both fault classes keep
their physical signatures.

Segments are stored in a flat binary file ("YSEG1": u32 window, u32
count, float64 little-endian samples) with a JSON manifest listing byte
offsets, labels, and the source domain.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import seeds, signal
from .errors import ConfigError, DataError

SAMPLE_RATE = 25600
LABELS = {"inner": 0, "outer": 1}
LABEL_NAMES = {0: "inner", 1: "outer"}
SEGMENTS_MAGIC = b"YSEG1"
_HEADER_BYTES = len(SEGMENTS_MAGIC) + 8  # magic + window + count

# Published segment counts for the five public bearing datasets after
# resampling to 25.6 kHz and cutting 4096-sample windows (total, inner,
# outer).  Context for reports only; nothing validates against them.
REFERENCE_SEGMENT_COUNTS = {
    "CWRU": (6712, 2149, 4563),
    "MFPT": (363, 126, 237),
    "XJTU": (17040, 12528, 4512),
    "HUST": (1860, 930, 930),
    "OTTAWA": (1240, 620, 620),
}


@dataclass
class SignalSegment:
    """One fixed-length standardized window with its label and origin."""

    samples: np.ndarray
    sample_rate: int
    label: int
    domain: str


@dataclass
class SegmentRef:
    offset: int
    label: int
    domain: str


@dataclass
class DatasetManifest:
    """Index of one segments file; offsets must be strictly increasing."""

    name: str
    window: int
    created_with_seed: int
    segments: list[SegmentRef] = field(default_factory=list)

    def validate(self) -> None:
        last = -1
        for ref in self.segments:
            if ref.offset <= last:
                raise DataError(
                    f"manifest {self.name}: offsets not strictly increasing "
                    f"at {ref.offset}"
                )
            if ref.label not in LABEL_NAMES:
                raise DataError(f"manifest {self.name}: unknown label {ref.label}")
            last = ref.offset

    def counts(self) -> tuple[int, int, int]:
        inner = sum(1 for ref in self.segments if ref.label == LABELS["inner"])
        return len(self.segments), inner, len(self.segments) - inner

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "window": self.window,
            "created_with_seed": self.created_with_seed,
            "segments": [
                {"offset": r.offset, "label": r.label, "domain": r.domain}
                for r in self.segments
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            doc = json.loads(text)
            manifest = cls(
                name=doc["name"],
                window=int(doc["window"]),
                created_with_seed=int(doc["created_with_seed"]),
                segments=[
                    SegmentRef(int(s["offset"]), int(s["label"]), str(s["domain"]))
                    for s in doc["segments"]
                ],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed manifest: {exc}") from exc
        manifest.validate()
        return manifest


@dataclass
class SyntheticDomainSpec:
    """Generator knobs for one synthetic domain.

    decay is the ring-down rate in 1/s; snr_db may be inf for a clean
    signal; transfer_gain tilts the spectrum via one-tap pre-emphasis
    (positive favors highs); mod_depth sets the inner-race load-zone
    modulation; jitter is the impulse timing spread as a fraction of the
    fault period; speed_spread draws one segment-level speed factor in
    [1-s, 1+s], shifting shaft and fault rates together the way a loose
    speed setpoint would.
    """

    name: str
    shaft_hz: float
    bpfi_ratio: float
    bpfo_ratio: float
    resonance_hz: float
    decay: float
    snr_db: float
    transfer_gain: float
    seed: int
    mod_depth: float = 0.8
    jitter: float = 0.02
    speed_spread: float = 0.0

    def validate(self) -> None:
        if self.shaft_hz <= 0:
            raise ConfigError(f"{self.name}: shaft_hz must be positive")
        if not self.bpfi_ratio > self.bpfo_ratio > 1.0:
            raise ConfigError(
                f"{self.name}: need bpfi_ratio > bpfo_ratio > 1, got "
                f"{self.bpfi_ratio} and {self.bpfo_ratio}"
            )
        if not 0 < self.resonance_hz < SAMPLE_RATE / 2:
            raise ConfigError(f"{self.name}: resonance_hz outside (0, Nyquist)")
        if self.decay <= 0:
            raise ConfigError(f"{self.name}: decay must be positive")
        if not abs(self.transfer_gain) < 1:
            raise ConfigError(f"{self.name}: |transfer_gain| must be < 1")
        if self.mod_depth < 0:
            raise ConfigError(f"{self.name}: mod_depth must be >= 0")
        if not 0 <= self.jitter < 0.5:
            raise ConfigError(f"{self.name}: jitter must be in [0, 0.5)")
        if not 0 <= self.speed_spread < 0.5:
            raise ConfigError(f"{self.name}: speed_spread must be in [0, 0.5)")

    def fault_hz(self, label: int) -> float:
        ratio = self.bpfi_ratio if label == LABELS["inner"] else self.bpfo_ratio
        return self.shaft_hz * ratio


# The committed five-domain benchmark.  Geometry, resonance, damping,
# tilt, noise, and speed stability all differ per domain; rates are
# chosen so absolute fault frequencies interleave between classes
# across domains, which keeps single-domain spectral shortcuts from
# transferring.  Ring-down rates bridge the gap between consecutive
# impacts, so only the inner-race load-zone dropout leaves near-silent
# stretches; that contrast is the cue that transfers across domains.
DOMAIN_SPECS = {
    "synthA": SyntheticDomainSpec("synthA", 29.95, 5.40, 3.60, 3000.0, 129.4, 25.0, 0.00, 1,
                                  mod_depth=1.0, jitter=0.02, speed_spread=0.10),
    "synthB": SyntheticDomainSpec("synthB", 25.00, 4.90, 3.20, 2200.0, 96.0, 22.0, 0.25, 2,
                                  mod_depth=1.0, jitter=0.02, speed_spread=0.10),
    "synthC": SyntheticDomainSpec("synthC", 37.50, 6.20, 4.10, 4500.0, 184.5, 20.0, -0.30, 3,
                                  mod_depth=1.0, jitter=0.02, speed_spread=0.10),
    "synthD": SyntheticDomainSpec("synthD", 17.30, 5.05, 3.35, 5600.0, 69.5, 24.0, 0.45, 4,
                                  mod_depth=1.0, jitter=0.02, speed_spread=0.10),
    "synthE": SyntheticDomainSpec("synthE", 41.00, 4.50, 2.95, 2800.0, 145.1, 18.0, -0.15, 5,
                                  mod_depth=1.0, jitter=0.02, speed_spread=0.10),
}

DOMAIN_NAMES = tuple(DOMAIN_SPECS)


def synth_segment(spec: SyntheticDomainSpec, label: int, rng, window: int = 4096) -> np.ndarray:
    """One standardized synthetic window for the given fault class.

    Impulses are spaced round(SAMPLE_RATE / fault_hz) samples apart
    (plus per-impulse jitter, with fault_hz scaled by the segment's
    speed draw), each convolved with the decaying resonance
    e^(-decay t) cos(2 pi f_res t); the cosine start keeps the impact
    onset in the signal, so very large decay degenerates to the bare
    impulse train.  Impulses begin one ring length before the window so
    early samples carry tails like any steady-state recording.
    """
    spec.validate()
    if label not in LABEL_NAMES:
        raise ConfigError(f"unknown label {label}")
    fs = SAMPLE_RATE
    worst_period = int(round(fs / (spec.fault_hz(label) * (1.0 - spec.speed_spread))))
    if worst_period < 1 or worst_period > window:
        raise ConfigError(
            f"{spec.name}: fault period {worst_period} samples does not fit "
            f"window {window}"
        )
    speed = 1.0
    if spec.speed_spread > 0:
        speed = 1.0 + rng.uniform(-spec.speed_spread, spec.speed_spread)
    shaft_hz = spec.shaft_hz * speed
    period = int(round(fs / (spec.fault_hz(label) * speed)))
    n_ring = max(1, min(window, int(np.ceil(6.0 * fs / spec.decay))))
    t_ring = np.arange(n_ring) / fs
    ring = np.exp(-spec.decay * t_ring) * np.cos(2 * np.pi * spec.resonance_hz * t_ring)

    train = np.zeros(window + n_ring)
    phase = int(rng.integers(0, period))
    shaft_phase = rng.uniform(0.0, 2 * np.pi)
    first_k = -((n_ring + phase) // period + 1)
    k = first_k
    while True:
        pos = phase + k * period
        k += 1
        if pos >= window:
            break
        if spec.jitter > 0:
            pos += int(round(rng.normal(0.0, spec.jitter * period)))
        if not -n_ring <= pos < window:
            continue
        amp = 1.0
        if label == LABELS["inner"] and spec.mod_depth > 0:
            amp += spec.mod_depth * np.cos(
                2 * np.pi * shaft_hz * pos / fs + shaft_phase
            )
        train[pos + n_ring] += amp

    y = np.convolve(train, ring)[n_ring : n_ring + window]
    if spec.transfer_gain != 0.0:
        tilted = y.copy()
        tilted[1:] -= spec.transfer_gain * y[:-1]
        y = tilted
    if np.isfinite(spec.snr_db):
        power = float(np.mean(y * y))
        noise_std = np.sqrt(power / 10.0 ** (spec.snr_db / 10.0))
        y = y + rng.normal(0.0, noise_std, window)
    return signal.zscore(y)


def synth_domain(spec: SyntheticDomainSpec, n_per_class: int, window: int = 4096,
                 seed: int | None = None):
    """Balanced in-memory domain: (X [2n, window], y [2n], manifest).

    The manifest describes the layout that :func:`write_segments` will
    produce, so callers can hold data in memory or persist it
    identically.  ``seed`` overrides spec.seed when given.
    """
    if n_per_class < 1:
        raise ConfigError("n_per_class must be >= 1")
    rng = seeds.rng(spec.seed if seed is None else seed, "data", spec.name)
    xs, ys = [], []
    for label in (LABELS["inner"], LABELS["outer"]):
        for _ in range(n_per_class):
            xs.append(synth_segment(spec, label, rng, window))
            ys.append(label)
    x = np.stack(xs)
    y = np.array(ys, dtype=np.intp)
    manifest = DatasetManifest(
        name=spec.name, window=window,
        created_with_seed=spec.seed if seed is None else seed,
        segments=[
            SegmentRef(_HEADER_BYTES + i * window * 8, int(lab), spec.name)
            for i, lab in enumerate(y)
        ],
    )
    return x, y, manifest


def benchmark_domains(n_per_class: int, window: int, seed: int,
                      specs: dict | None = None) -> dict:
    """In-memory five-domain benchmark keyed by name: {name: (x, y)}.

    Each domain's stream mixes the run seed with the spec's own seed, so
    different run seeds draw genuinely different data while a fixed seed
    is bit-reproducible.
    """
    specs = DOMAIN_SPECS if specs is None else specs
    out = {}
    for name, spec in specs.items():
        s = seeds.stream(seed, "data", name, spec.seed)
        out[name] = synth_domain(spec, n_per_class, window=window, seed=s)[:2]
    return out


def write_segments(path, x: np.ndarray) -> None:
    """Write [count, window] float64 segments in the YSEG1 layout."""
    count, window = x.shape
    with open(path, "wb") as fh:
        fh.write(SEGMENTS_MAGIC)
        fh.write(struct.pack("<II", window, count))
        fh.write(np.ascontiguousarray(x, dtype="<f8").tobytes())


def read_segments(path) -> np.ndarray:
    """Read a YSEG1 file back as [count, window].

    Raises:
        DataError: On bad magic, truncation, or trailing bytes.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(SEGMENTS_MAGIC)] != SEGMENTS_MAGIC:
        raise DataError(f"{path}: bad segments magic")
    try:
        window, count = struct.unpack_from("<II", blob, len(SEGMENTS_MAGIC))
    except struct.error as exc:
        raise DataError(f"{path}: truncated header") from exc
    expected = _HEADER_BYTES + count * window * 8
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f8", offset=_HEADER_BYTES)
    return data.reshape(count, window).copy()


def save_domain(out_dir, x: np.ndarray, manifest: DatasetManifest) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_segments(out_dir / f"{manifest.name}.yseg", x)
    (out_dir / f"{manifest.name}.json").write_text(manifest.to_json())


def load_domain(data_dir, name: str):
    """Read one domain back: (X, y, manifest).

    Raises:
        DataError: On missing files or manifest/segment-file mismatch.
    """
    data_dir = Path(data_dir)
    manifest_path = data_dir / f"{name}.json"
    seg_path = data_dir / f"{name}.yseg"
    if not manifest_path.exists() or not seg_path.exists():
        raise DataError(f"domain {name!r} not found under {data_dir}")
    manifest = DatasetManifest.from_json(manifest_path.read_text())
    x = read_segments(seg_path)
    if x.shape != (len(manifest.segments), manifest.window):
        raise DataError(
            f"domain {name!r}: segments file {x.shape} does not match manifest"
        )
    for i, ref in enumerate(manifest.segments):
        if ref.offset != _HEADER_BYTES + i * manifest.window * 8:
            raise DataError(f"domain {name!r}: offset {ref.offset} off layout")
    y = np.array([ref.label for ref in manifest.segments], dtype=np.intp)
    return x, y, manifest


def ingest(name: str, records, from_hz: float, out_dir, window: int = 4096,
           hop: int = 4096) -> DatasetManifest:
    """Resample, window, and standardize labeled raw records.

    Args:
        records: Iterable of (samples, label) pairs at ``from_hz``.

    Returns:
        The written manifest (files land in ``out_dir``).

    Raises:
        DataError: If no record yields a single full window.
    """
    xs, labels = [], []
    for samples, label in records:
        if label not in LABEL_NAMES:
            raise DataError(f"ingest {name}: unknown label {label!r}")
        resampled = signal.resample(np.asarray(samples, dtype=np.float64),
                                    from_hz, SAMPLE_RATE)
        for row in signal.segment(resampled, window, hop):
            xs.append(signal.zscore(row))
            labels.append(int(label))
    if not xs:
        raise DataError(f"ingest {name}: no segments produced")
    x = np.stack(xs)
    manifest = DatasetManifest(
        name=name, window=window, created_with_seed=0,
        segments=[
            SegmentRef(_HEADER_BYTES + i * window * 8, lab, name)
            for i, lab in enumerate(labels)
        ],
    )
    save_domain(out_dir, x, manifest)
    return manifest


def stats_csv(manifests) -> str:
    """Per-dataset segment counts: dataset,total,inner,outer,rate_hz."""
    lines = ["dataset,total,inner,outer,rate_hz"]
    for m in manifests:
        total, inner, outer = m.counts()
        lines.append(f"{m.name},{total},{inner},{outer},{SAMPLE_RATE}")
    return "\n".join(lines) + "\n"
