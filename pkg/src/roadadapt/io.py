"""File formats: float rasters, PGM masks, parameter blobs, manifests.

Float raster layout (little-endian)::

    bytes 0-3    magic b"F32R"
    bytes 4-7    width  (uint32)
    bytes 8-11   height (uint32)
    bytes 12-15  reserved, must be 0
    bytes 16-    width * height float32 values, row-major

Masks are binary 8-bit PGM (P5) files. Tri-state masks use 0 / 255 / 128 for
BACKGROUND / ROAD / NOT_SELECTED, binary masks 0 / 255.

Every writer goes through :func:`atomic_write`, so a reader never sees a
partially written file.
"""

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from ._validation import BACKGROUND, NOT_SELECTED, ROAD, check_grid
from .exceptions import FormatError, UsageError

RASTER_MAGIC = b"F32R"
_HEADER = struct.Struct("<4sIII")

TRISTATE_BYTES = {BACKGROUND: 0, ROAD: 255, NOT_SELECTED: 128}
BINARY_BYTES = {0: 0, 1: 255}


def atomic_write(path, data):
    """Write ``data`` (bytes or str) to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ------------------------------------------------------------------ rasters


def encode_raster(values):
    values = check_grid(values, "raster")
    if not np.all(np.isfinite(values)):
        raise UsageError("raster contains non-finite values")
    h, w = values.shape
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    return _HEADER.pack(RASTER_MAGIC, w, h, 0) + payload


def decode_raster(data):
    if len(data) < _HEADER.size:
        raise FormatError(f"raster header truncated: {len(data)} of {_HEADER.size} bytes", offset=len(data))
    magic, w, h, reserved = _HEADER.unpack_from(data)
    if magic != RASTER_MAGIC:
        raise FormatError(f"bad raster magic {magic!r}, expected {RASTER_MAGIC!r}", offset=0)
    if reserved != 0:
        raise FormatError(f"reserved header field is {reserved}, expected 0", offset=12)
    if w < 1 or h < 1:
        raise FormatError(f"raster dimensions must be positive, got {w}x{h}", offset=4)
    expected = _HEADER.size + 4 * w * h
    if len(data) != expected:
        raise FormatError(
            f"raster payload has {len(data) - _HEADER.size} bytes, expected {4 * w * h}",
            offset=min(len(data), expected),
        )
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(h, w).astype(np.float32)


def write_raster(path, values):
    return atomic_write(path, encode_raster(values))


def read_raster(path):
    """Read a float raster as a float32 (H, W) array."""
    return decode_raster(Path(path).read_bytes())


# -------------------------------------------------------------------- masks


def encode_mask(mask, tristate=False):
    mask = check_grid(mask, "mask")
    table = TRISTATE_BYTES if tristate else BINARY_BYTES
    lut = np.zeros(256, dtype=np.uint8)
    for value, byte in table.items():
        lut[value] = byte
    values = np.asarray(mask).astype(np.int64)
    bad = ~np.isin(values, list(table))
    if bad.any():
        kind = "tri-state" if tristate else "binary"
        raise UsageError(f"{kind} mask contains value {int(values[bad][0])}")
    h, w = mask.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + lut[values].tobytes()


def _pgm_tokens(data, count):
    # header tokens with '#' comments; returns tokens and payload offset
    tokens, i, n = [], 0, len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace() and data[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise FormatError("PGM header truncated", offset=i)
        tokens.append((data[start:i], start))
    if i >= n or not data[i : i + 1].isspace():
        raise FormatError("missing whitespace after PGM header", offset=i)
    return tokens, i + 1


def decode_mask(data, tristate=False):
    """Decode a P5 mask to uint8 labels (0/1, or 0/1/2 for tri-state)."""
    tokens, offset = _pgm_tokens(data, 4)
    (magic, _), *fields = tokens
    if magic != b"P5":
        raise FormatError(f"bad PGM magic {magic!r}, expected b'P5'", offset=0)
    try:
        w, h, maxval = (int(tok) for tok, _ in fields)
    except ValueError:
        raise FormatError("non-numeric PGM header field", offset=fields[0][1]) from None
    if w < 1 or h < 1:
        raise FormatError(f"PGM dimensions must be positive, got {w}x{h}", offset=fields[0][1])
    if maxval != 255:
        raise FormatError(f"PGM maxval must be 255, got {maxval}", offset=fields[2][1])
    if len(data) - offset != w * h:
        raise FormatError(
            f"PGM payload has {len(data) - offset} bytes, expected {w * h}",
            offset=min(len(data), offset + w * h),
        )
    raw = np.frombuffer(data, dtype=np.uint8, offset=offset)
    table = TRISTATE_BYTES if tristate else BINARY_BYTES
    lut = np.full(256, 255, dtype=np.uint8)
    for value, byte in table.items():
        lut[byte] = value
    out = lut[raw]
    bad = np.flatnonzero(out == 255)
    if bad.size:
        kind = "tri-state" if tristate else "binary"
        raise FormatError(f"illegal {kind} mask byte {int(raw[bad[0]])}", offset=offset + int(bad[0]))
    return out.reshape(h, w)


def write_mask(path, mask, tristate=False):
    return atomic_write(path, encode_mask(mask, tristate))


def read_mask(path, tristate=False):
    return decode_mask(Path(path).read_bytes(), tristate)


# --------------------------------------------------------------- parameters


def save_params(path, groups):
    """Save named parameter groups as float64 LE plus a ``.json`` sidecar.

    ``groups`` maps a group name (e.g. ``"model"``) to a dict of arrays.
    """
    path = Path(path)
    layout, chunks = [], []
    for group, params in groups.items():
        for name, arr in params.items():
            arr = np.asarray(arr, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise UsageError(f"parameter {group}.{name} is not finite")
            layout.append({"group": group, "name": name, "shape": list(arr.shape)})
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    atomic_write(path, b"".join(chunks))
    sidecar = {"dtype": "float64", "byteorder": "little", "arrays": layout}
    atomic_write(sidecar_path(path), json.dumps(sidecar, indent=2) + "\n")
    return path


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_params(path):
    path = Path(path)
    try:
        meta = json.loads(sidecar_path(path).read_text())
        layout = meta["arrays"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"unreadable parameter sidecar {sidecar_path(path)}: {exc}") from None
    data = path.read_bytes()
    groups, offset = {}, 0
    for entry in layout:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + n > len(data):
            raise FormatError(f"parameter file truncated reading {entry['group']}.{entry['name']}", offset=len(data))
        arr = np.frombuffer(data, dtype="<f8", count=n // 8, offset=offset).reshape(shape).astype(np.float64)
        groups.setdefault(entry["group"], {})[entry["name"]] = arr
        offset += n
    if offset != len(data):
        raise FormatError(f"parameter file has {len(data) - offset} trailing bytes", offset=offset)
    return groups


# ---------------------------------------------------------------- manifests


def dumps_json(obj):
    """Canonical JSON text (sorted keys, trailing newline)."""
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path, obj):
    return atomic_write(path, dumps_json(obj))


def append_jsonl(path, record):
    """Append one record to a JSON-lines log (rewritten atomically)."""
    path = Path(path)
    old = path.read_bytes() if path.exists() else b""
    line = json.dumps(record, sort_keys=True, default=_json_default) + "\n"
    return atomic_write(path, old + line.encode("utf-8"))


def write_manifest(out_dir, command, config, seeds, outputs, extra=None):
    """Record config, seeds and sha256 of every output under ``out_dir``."""
    out_dir = Path(out_dir)
    hashes = {str(Path(p).relative_to(out_dir)): sha256_file(p) for p in sorted(map(Path, outputs))}
    manifest = {"command": command, "config": config, "seeds": seeds, "outputs": hashes}
    if extra:
        manifest.update(extra)
    return write_json(out_dir / "manifest.json", manifest)


# -------------------------------------------------------------------- tiles


def save_tiles(out_dir, tiles, params=None):
    """Write tiles as ``tile_NNNN_{image.f32,mask.pgm,skeleton.pgm}``.

    A ``domain.json`` index lists the files (and the generating params).
    Returns the list of written paths.
    """
    out_dir = Path(out_dir)
    written, index = [], []
    for i, tile in enumerate(tiles):
        names = {
            "image": f"tile_{i:04d}_image.f32",
            "mask": f"tile_{i:04d}_mask.pgm",
            "skeleton": f"tile_{i:04d}_skeleton.pgm",
        }
        written.append(write_raster(out_dir / names["image"], tile.image))
        written.append(write_mask(out_dir / names["mask"], tile.gt_mask))
        written.append(write_mask(out_dir / names["skeleton"], tile.gt_skeleton))
        index.append(names)
    meta = {"n_tiles": len(tiles), "tiles": index}
    if params is not None:
        meta["params"] = params
    written.append(write_json(out_dir / "domain.json", meta))
    return written


def load_tiles(in_dir):
    """Read tiles written by :func:`save_tiles` (images come back as float64)."""
    from .synth import Tile

    in_dir = Path(in_dir)
    try:
        meta = json.loads((in_dir / "domain.json").read_text())
        entries = meta["tiles"]
    except FileNotFoundError:
        raise UsageError(f"{in_dir} is not a tile directory (no domain.json)") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed {in_dir / 'domain.json'}: {exc}") from None
    tiles = []
    for names in entries:
        image = read_raster(in_dir / names["image"]).astype(np.float64)
        mask = read_mask(in_dir / names["mask"])
        skeleton = read_mask(in_dir / names["skeleton"])
        if image.shape != mask.shape or mask.shape != skeleton.shape:
            raise FormatError(f"tile {names['image']}: image and mask shapes differ")
        tiles.append(Tile(image=image, gt_mask=mask, gt_skeleton=skeleton))
    if not tiles:
        raise UsageError(f"{in_dir} contains no tiles")
    return tiles
