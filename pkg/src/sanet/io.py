"""Serialization: SATK v1 tensor files, SaParams JSON, flat parameter blobs.

SATK v1 layout::

    b"SATK0001"                      8-byte magic
    n, c, h, w                       four uint32, little-endian
    n*c*h*w float32 values           little-endian IEEE-754, NCHW row-major
"""

import json
import struct
from pathlib import Path

import numpy as np

from .attention import PARAM_NAMES, SaParams
from .exceptions import FormatError, ShapeError

SATK_MAGIC = b"SATK0001"
_HEADER = struct.Struct("<4I")
# Element counts past this cannot be addressed as a byte length in int64.
_MAX_ELEMENTS = (2**63 - 1) // 4
SA_PARAMS_FORMAT = "sanet.SaParams/1"


def dumps_satk(x):
    x = np.asarray(x)
    if x.ndim != 4 or any(d <= 0 for d in x.shape):
        raise ShapeError(f"SATK tensors must have four positive dims, got {x.shape}")
    if any(d >= 2**32 for d in x.shape):
        raise ShapeError(f"dimension does not fit in uint32: {x.shape}")
    payload = np.ascontiguousarray(x, dtype="<f4").tobytes()
    return SATK_MAGIC + _HEADER.pack(*x.shape) + payload


def loads_satk(buf):
    buf = bytes(buf)
    if len(buf) < len(SATK_MAGIC) + _HEADER.size:
        raise FormatError(f"SATK header truncated: {len(buf)} bytes")
    if buf[:8] != SATK_MAGIC:
        raise FormatError(f"bad SATK magic {buf[:8]!r}")
    dims = _HEADER.unpack_from(buf, 8)
    if any(d == 0 for d in dims):
        raise FormatError(f"SATK dims must be positive, got {dims}")
    count = dims[0] * dims[1] * dims[2] * dims[3]
    if count > _MAX_ELEMENTS:
        raise FormatError(f"SATK dims {dims} overflow the addressable element count")
    payload = buf[8 + _HEADER.size:]
    if len(payload) < 4 * count:
        raise FormatError(f"SATK payload truncated: {len(payload)} bytes, expected {4 * count} for dims {dims}")
    if len(payload) > 4 * count:
        raise FormatError(f"SATK payload has {len(payload) - 4 * count} trailing bytes")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)


def write_satk(path, x):
    Path(path).write_bytes(dumps_satk(x))


def read_satk(path):
    return loads_satk(Path(path).read_bytes())


def _hex_list(arr):
    return [float(v).hex() for v in np.asarray(arr, dtype=np.float64).ravel()]


def sa_params_to_dict(params):
    doc = {
        "format": SA_PARAMS_FORMAT,
        "C": params.channels,
        "G": params.groups,
        "fc_variant": params.fc_variant,
        "dtype": str(np.asarray(params.w1).dtype),
    }
    for name in PARAM_NAMES:
        doc[name] = _hex_list(getattr(params, name))
    return doc


def sa_params_from_dict(doc):
    if not isinstance(doc, dict):
        raise FormatError(f"SaParams document must be a JSON object, got {type(doc).__name__}")
    if doc.get("format", SA_PARAMS_FORMAT) != SA_PARAMS_FORMAT:
        raise FormatError(f"unsupported SaParams format {doc['format']!r}")
    try:
        c, g = int(doc["C"]), int(doc["G"])
        variant = doc.get("fc_variant", "affine")
        dtype = np.dtype(doc.get("dtype", "float32"))
        raw = {name: doc[name] for name in PARAM_NAMES}
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed SaParams document: {exc}") from exc
    if g <= 0 or c <= 0 or c % (2 * g):
        raise ShapeError(f"SaParams C={c} is not divisible by 2*G (G={g})")
    k = c // (2 * g)
    arrays = {}
    for name, values in raw.items():
        want = (k, k) if name in ("w1", "w2") and variant == "conv" else (k,)
        if not isinstance(values, list) or len(values) != int(np.prod(want)):
            got = len(values) if isinstance(values, list) else type(values).__name__
            raise ShapeError(f"SaParams array {name} has length {got}, expected {int(np.prod(want))} (C/2G={k})")
        try:
            floats = [float.fromhex(v) if isinstance(v, str) else float(v) for v in values]
        except (TypeError, ValueError) as exc:
            raise FormatError(f"SaParams array {name} holds a non-numeric entry: {exc}") from exc
        arrays[name] = np.array(floats, dtype=dtype).reshape(want)
    return SaParams(c, g, fc_variant=variant, **arrays)


def save_sa_params(path, params):
    Path(path).write_text(json.dumps(sa_params_to_dict(params), indent=1))


def load_sa_params(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return sa_params_from_dict(doc)


def save_param_blob(directory, named_arrays):
    """Write ``params.bin`` (concatenated little-endian float32) and ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest, chunks, offset = [], [], 0
    for name, arr in named_arrays:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size
    (directory / "params.bin").write_bytes(b"".join(chunks))
    (directory / "manifest.json").write_text(json.dumps({"dtype": "<f4", "tensors": manifest}, indent=1))


def load_param_blob(directory):
    directory = Path(directory)
    try:
        entries = json.loads((directory / "manifest.json").read_text())["tensors"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{directory}/manifest.json is malformed: {exc!r}") from exc
    raw = (directory / "params.bin").read_bytes()
    if len(raw) % 4:
        raise FormatError(f"params.bin length {len(raw)} is not a multiple of 4")
    flat = np.frombuffer(raw, dtype="<f4")
    out, used = {}, 0
    for entry in entries:
        try:
            name, start, count, shape = entry["name"], int(entry["offset"]), int(entry["count"]), tuple(entry["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad manifest entry {entry!r}") from exc
        if start + count > flat.size:
            raise FormatError(f"parameter blob truncated at tensor {name}")
        if int(np.prod(shape)) != count:
            raise FormatError(f"tensor {name}: shape {shape} does not hold {count} values")
        out[name] = flat[start:start + count].astype(np.float32).reshape(shape)
        used += count
    if used != flat.size:
        raise FormatError(f"params.bin holds {flat.size} values but the manifest accounts for {used}")
    return out
