"""Plain EDF/EDF+ reading and writing (16-bit samples, fixed-width ASCII header)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, UnsupportedFormatError

ANNOTATION_LABEL = "EDF Annotations"

# (name, width) of each per-signal header field, in file order
_SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dimension", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefilter", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)


@dataclass
class EdfHeader:
    header_bytes: int
    n_records: int
    record_duration: float
    labels: list[str]
    physical_min: np.ndarray
    physical_max: np.ndarray
    digital_min: np.ndarray
    digital_max: np.ndarray
    samples_per_record: np.ndarray
    start_date: str = ""
    start_time: str = ""
    reserved: str = ""

    @property
    def sample_rates(self) -> np.ndarray:
        return self.samples_per_record / self.record_duration


def _field(raw: bytes, offset: int, width: int) -> str:
    chunk = raw[offset:offset + width]
    if len(chunk) < width:
        raise ParseError("truncated EDF header", offset)
    return chunk.decode("latin-1").strip()


def _number(raw: bytes, offset: int, width: int, kind=float):
    text = _field(raw, offset, width)
    try:
        return kind(text) if kind is float else int(float(text))
    except ValueError:
        raise ParseError(f"expected a number in EDF header, found {text!r}", offset) from None


def read_header(raw: bytes) -> EdfHeader:
    if len(raw) < 256:
        raise ParseError("file shorter than the 256-byte EDF header", len(raw))
    version = _field(raw, 0, 8)
    if version != "0":
        raise ParseError(f"unsupported EDF version field {version!r}", 0)
    header_bytes = _number(raw, 184, 8, int)
    reserved = _field(raw, 192, 44)
    n_records = _number(raw, 236, 8, int)
    duration = _number(raw, 244, 8)
    ns = _number(raw, 252, 4, int)
    if ns <= 0:
        raise ParseError(f"EDF header declares {ns} signals", 252)
    if header_bytes != 256 * (ns + 1):
        raise ParseError(f"header size {header_bytes} inconsistent with {ns} signals", 184)
    if duration <= 0:
        raise ParseError(f"non-positive data record duration {duration}", 244)
    values: dict[str, list] = {}
    offset = 256
    for name, width in _SIGNAL_FIELDS:
        col = []
        for _ in range(ns):
            if name in ("physical_min", "physical_max"):
                col.append(_number(raw, offset, width))
            elif name in ("digital_min", "digital_max", "samples_per_record"):
                col.append(_number(raw, offset, width, int))
            else:
                col.append(_field(raw, offset, width))
            offset += width
        values[name] = col
    return EdfHeader(
        header_bytes=header_bytes,
        n_records=n_records,
        record_duration=duration,
        labels=values["label"],
        physical_min=np.array(values["physical_min"], dtype=float),
        physical_max=np.array(values["physical_max"], dtype=float),
        digital_min=np.array(values["digital_min"], dtype=float),
        digital_max=np.array(values["digital_max"], dtype=float),
        samples_per_record=np.array(values["samples_per_record"], dtype=int),
        start_date=_field(raw, 168, 8),
        start_time=_field(raw, 176, 8),
        reserved=reserved,
    )


def read_edf(path: str | Path, select: list[int] | None = None) -> tuple[EdfHeader, list[str], np.ndarray, float]:
    """Read physical-unit signals.

    Returns ``(header, labels, samples[n, total], sample_rate)`` for the
    selected ordinary signals (annotation signals are always skipped).
    All selected signals must share one sample rate.
    """
    raw = Path(path).read_bytes()
    hdr = read_header(raw)
    spr = hdr.samples_per_record
    record_bytes = int(spr.sum()) * 2
    n_records = hdr.n_records
    available = (len(raw) - hdr.header_bytes) // record_bytes
    if n_records < 0:
        n_records = available
    elif available < n_records:
        raise ParseError(f"file holds {available} complete data records, header declares {n_records}",
                         hdr.header_bytes + available * record_bytes)

    ordinary = [i for i, lab in enumerate(hdr.labels) if lab != ANNOTATION_LABEL]
    chosen = ordinary if select is None else [i for i in select if i in ordinary]
    rates = {float(hdr.sample_rates[i]) for i in chosen}
    if len(rates) > 1:
        raise UnsupportedFormatError(f"selected channels have mixed sample rates {sorted(rates)}")

    data = np.frombuffer(raw, dtype="<i2", count=n_records * record_bytes // 2, offset=hdr.header_bytes)
    data = data.reshape(n_records, -1)
    starts = np.concatenate([[0], np.cumsum(spr)])
    out = np.empty((len(chosen), n_records * (int(spr[chosen[0]]) if chosen else 0)))
    for row, i in enumerate(chosen):
        dig = data[:, starts[i]:starts[i + 1]].reshape(-1).astype(np.float64)
        scale = (hdr.physical_max[i] - hdr.physical_min[i]) / (hdr.digital_max[i] - hdr.digital_min[i])
        out[row] = (dig - hdr.digital_min[i]) * scale + hdr.physical_min[i]
    rate = rates.pop() if rates else 0.0
    return hdr, [hdr.labels[i] for i in chosen], out, rate


def _pad(text: str, width: int) -> bytes:
    enc = text.encode("latin-1")[:width]
    return enc + b" " * (width - len(enc))


def _num(value: float, width: int) -> str:
    text = f"{value:.{width}g}"
    if len(text) > width:
        text = f"{value:.{max(width - 6, 1)}e}"
    return text[:width]


def _bound(value: float, up: bool) -> float:
    """Round outward to a number whose text fits an 8-character field."""
    digits = len(str(int(abs(value))))
    decimals = max(0, 8 - digits - 2)
    if digits + (value < 0) > 8:
        raise ValueError(f"physical value {value} does not fit an EDF header field")
    q = 10.0**decimals
    v = (np.ceil(value * q) if up else np.floor(value * q)) / q
    return float(_num(v, 8))


def write_edf(
    path: str | Path,
    samples: np.ndarray,
    sample_rate: int,
    labels: list[str],
    physical_range: tuple[np.ndarray, np.ndarray] | None = None,
    patient: str = "X",
    unit: str = "uV",
) -> None:
    """Write ``samples[n, total]`` as 1-second EDF data records.

    Physical ranges default to each channel's min/max; samples are quantised
    to 16 bits. ``total`` must be a whole number of seconds.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n, total = samples.shape
    rate = int(sample_rate)
    if rate != sample_rate or rate <= 0:
        raise ValueError("EDF writer needs a positive integer sample rate")
    if total % rate:
        raise ValueError(f"{total} samples is not a whole number of 1-second records at {rate} Hz")
    n_records = total // rate
    if physical_range is None:
        pmin, pmax = samples.min(axis=1), samples.max(axis=1)
    else:
        pmin, pmax = map(np.asarray, physical_range)
    # widen to values that survive the 8-character header field exactly
    pmin = np.array([_bound(v, up=False) for v in pmin])
    pmax = np.array([_bound(v, up=True) for v in pmax])
    flat = pmax <= pmin
    pmax = np.where(flat, pmin + 1.0, pmax)
    dmin, dmax = -32768, 32767
    scale = (dmax - dmin) / (pmax - pmin)
    dig = np.round((samples - pmin[:, None]) * scale[:, None] + dmin)
    dig = np.clip(dig, dmin, dmax).astype("<i2")

    head = b"".join([
        _pad("0", 8), _pad(patient, 80), _pad("Startdate X X X X", 80),
        _pad("01.01.00", 8), _pad("00.00.00", 8), _pad(str(256 * (n + 1)), 8),
        _pad("", 44), _pad(str(n_records), 8), _pad("1", 8), _pad(str(n), 4),
    ])
    cols = {
        "label": [_pad(lab, 16) for lab in labels],
        "transducer": [_pad("", 80)] * n,
        "physical_dimension": [_pad(unit, 8)] * n,
        "physical_min": [_pad(_num(v, 8), 8) for v in pmin],
        "physical_max": [_pad(_num(v, 8), 8) for v in pmax],
        "digital_min": [_pad(str(dmin), 8)] * n,
        "digital_max": [_pad(str(dmax), 8)] * n,
        "prefilter": [_pad("", 80)] * n,
        "samples_per_record": [_pad(str(rate), 8)] * n,
        "reserved": [_pad("", 32)] * n,
    }
    head += b"".join(b"".join(cols[name]) for name, _ in _SIGNAL_FIELDS)
    body = dig.reshape(n, n_records, rate).transpose(1, 0, 2).tobytes()
    Path(path).write_bytes(head + body)


def quantisation_step(header: EdfHeader) -> np.ndarray:
    """Physical size of one digital unit for every signal in ``header``."""
    return (header.physical_max - header.physical_min) / (header.digital_max - header.digital_min)
