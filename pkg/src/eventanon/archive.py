"""Event CSV reader and the on-disk sample archive format."""

from __future__ import annotations

import json
import os
import re
from pathlib import Path

import numpy as np

from .events import EventStream, LabeledSample

SCHEMA_VERSION = 1
_GEOMETRY = re.compile(r"#\s*width=(\d+)\s+height=(\d+)\s*$")


class FormatError(ValueError):
    """Malformed file content; carries the byte offset and (for CSV) the data row."""

    def __init__(self, message, offset=None, row=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.offset = offset
        self.row = row


def load_event_file(path) -> EventStream:
    """Read ``# width=W height=H`` / ``x,y,t,p`` CSV. Data rows are numbered from 1."""
    raw = Path(path).read_bytes()
    lines = raw.split(b"\n")
    offset = 0
    m = _GEOMETRY.match(lines[0].decode("ascii", "replace").strip()) if lines else None
    if m is None:
        raise FormatError("missing '# width=W height=H' geometry line", offset=0)
    width, height = int(m.group(1)), int(m.group(2))
    offset += len(lines[0]) + 1
    if len(lines) < 2 or lines[1].strip().replace(b" ", b"") != b"x,y,t,p":
        raise FormatError("expected header 'x,y,t,p'", offset=offset)
    offset += len(lines[1]) + 1

    events = []
    last_t = None
    for row, line in enumerate(lines[2:], start=1):
        text = line.strip()
        if text:
            fields = text.split(b",")
            try:
                if len(fields) != 4:
                    raise ValueError
                x, y, t, p = (int(f) for f in fields)
            except ValueError:
                raise FormatError(f"malformed record {text!r}", offset=offset, row=row) from None
            if not (0 <= x < width and 0 <= y < height):
                raise FormatError(f"event ({x}, {y}) outside {width}x{height} sensor", offset=offset, row=row)
            if p not in (0, 1):
                raise FormatError(f"polarity {p} not in {{0, 1}}", offset=offset, row=row)
            if last_t is not None and t < last_t:
                raise FormatError(f"timestamp {t} decreases", offset=offset, row=row)
            last_t = t
            events.append((x, y, t, p))
        offset += len(line) + 1
    return EventStream.from_tuples(events, width, height)


def save_event_file(stream: EventStream, path):
    with open(path, "w") as f:
        f.write(f"# width={stream.width} height={stream.height}\n")
        f.write("x,y,t,p\n")
        for x, y, t, p in zip(stream.x, stream.y, stream.t, stream.p):
            f.write(f"{x},{y},{t},{p}\n")


def save_samples(samples: list[LabeledSample], path):
    """Write a sample archive directory: manifest.json plus one raw <f4 file per sample."""
    if not samples:
        raise ValueError("no samples to save")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    c, h, w = samples[0].histogram.shape
    entries = []
    for i, s in enumerate(samples):
        if s.histogram.shape != (c, h, w):
            raise ValueError(f"sample {s.sample_key} has shape {s.histogram.shape}, expected {(c, h, w)}")
        name = f"{i:06d}.f32"
        np.ascontiguousarray(s.histogram, dtype="<f4").tofile(path / name)
        entries.append(
            {
                "sample_key": s.sample_key,
                "subject_id": int(s.subject_id),
                "target_label": int(s.target_label),
                "tensor_file": name,
            }
        )
    manifest = {"schema_version": SCHEMA_VERSION, "T": c // 2, "H": h, "W": w, "samples": entries}
    tmp = path / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1))
    os.replace(tmp, path / "manifest.json")


def load_samples(path) -> list[LabeledSample]:
    path = Path(path)
    manifest_path = path / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest.json is not valid JSON: {e.msg}", offset=e.pos) from None
    for key in ("schema_version", "T", "H", "W", "samples"):
        if key not in manifest:
            raise FormatError(f"manifest.json missing key {key!r}")
    if manifest["schema_version"] != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema_version {manifest['schema_version']}")
    shape = (2 * int(manifest["T"]), int(manifest["H"]), int(manifest["W"]))
    nbytes = 4 * shape[0] * shape[1] * shape[2]
    samples = []
    for entry in manifest["samples"]:
        blob = (path / entry["tensor_file"]).read_bytes()
        if len(blob) != nbytes:
            raise FormatError(
                f"{entry['tensor_file']}: expected {nbytes} bytes for shape {shape}, found {len(blob)}",
                offset=min(len(blob), nbytes),
            )
        hist = np.frombuffer(blob, dtype="<f4").reshape(shape).astype(np.float32)
        samples.append(
            LabeledSample(
                histogram=hist,
                subject_id=int(entry["subject_id"]),
                target_label=int(entry["target_label"]),
                sample_key=str(entry["sample_key"]),
            )
        )
    return samples
