"""File formats: sparse triplet masks, flat binary containers, CSV/JSON helpers."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import FormatError

TRIPLET_HEADER = ("pre", "post", "weight")


def write_triplets(path, weights, mask=None) -> int:
    """Write active connections as ``pre post weight`` rows, row-major order.

    ``mask`` defaults to ``weights != 0``.  Returns the number of rows.
    """
    weights = np.asarray(weights)
    mask = weights != 0 if mask is None else np.asarray(mask, dtype=bool)
    pre, post = np.nonzero(mask)
    with open(path, "w") as fh:
        fh.write(" ".join(TRIPLET_HEADER) + "\n")
        for i, j in zip(pre.tolist(), post.tolist()):
            fh.write(f"{i} {j} {float(weights[i, j])!r}\n")
    return len(pre)


def read_triplets(path, n_pre: int, n_post: int | None = None):
    """Read a triplet file into dense ``(mask, weights)`` arrays."""
    n_post = n_pre if n_post is None else n_post
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read mask file {path}: {exc.strerror}") from None
    if not lines or tuple(lines[0].split()) != TRIPLET_HEADER:
        raise FormatError(f"{path}: first line must be the header 'pre post weight'")
    mask = np.zeros((n_pre, n_post), dtype=bool)
    weights = np.zeros((n_pre, n_post), dtype=np.float64)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
        try:
            i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: cannot parse {line!r}") from None
        if not (0 <= i < n_pre and 0 <= j < n_post):
            raise FormatError(f"{path}:{lineno}: index ({i}, {j}) outside {n_pre}x{n_post}")
        if mask[i, j]:
            raise FormatError(f"{path}:{lineno}: duplicate connection ({i}, {j})")
        mask[i, j] = True
        weights[i, j] = w
    return mask, weights


# -- flat binary container -------------------------------------------------
#
# <name>.bin holds the raw little-endian bytes of every array back to back;
# <name>.json lists {name, dtype, shape, offset, nbytes} per array plus a
# free-form "meta" object.


def write_container(stem, arrays: dict, meta: dict | None = None) -> tuple[Path, Path]:
    stem = Path(stem)
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    entries = []
    offset = 0
    with open(bin_path, "wb") as fh:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            raw = arr.tobytes()
            fh.write(raw)
            entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                            "offset": offset, "nbytes": len(raw)})
            offset += len(raw)
    sidecar = {"format": "flat-binary-v1", "arrays": entries, "meta": meta or {}}
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return bin_path, json_path


def read_container(stem) -> tuple[dict, dict]:
    stem = Path(stem)
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    for p in (bin_path, json_path):
        if not p.exists():
            raise FileNotFoundError(f"missing container file {p}")
    try:
        sidecar = json.loads(json_path.read_text())
        entries = sidecar["arrays"]
    except (json.JSONDecodeError, KeyError, TypeError):
        raise FormatError(f"{json_path}: malformed container sidecar") from None
    raw = bin_path.read_bytes()
    arrays = {}
    for e in entries:
        end = e["offset"] + e["nbytes"]
        if end > len(raw):
            raise FormatError(f"{bin_path}: array {e['name']!r} runs past end of file")
        arr = np.frombuffer(raw[e["offset"]:end], dtype=np.dtype(e["dtype"]))
        arrays[e["name"]] = arr.reshape(e["shape"]).copy()
    return arrays, sidecar.get("meta", {})


def write_csv(path, rows, fieldnames=None) -> None:
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in fieldnames})


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")
