"""Time-frequency mask files.

A mask file is a short ASCII header followed by raw little-endian values in
C order with shape ``(sources, frames, bins)``::

    JCBF-MASK 1
    dtype float32
    sources 2
    frames 500
    bins 257
    frame_len 512
    frame_shift 128
    end

The first line is the magic string. Every other header line is ``key value``;
the line ``end`` closes the header and the payload starts right after its
newline. ``dtype`` is ``float32`` or ``float64`` (both little-endian IEEE 754).
``frame_len`` and ``frame_shift`` are optional and let the reader recover the
analysis settings. The payload length must be exactly
``sources * frames * bins * itemsize`` bytes.
"""

import numpy as np

MAGIC = "JCBF-MASK 1"
_REQUIRED = ("sources", "frames", "bins")
_OPTIONAL = ("frame_len", "frame_shift")
_DTYPES = {"float32": "<f4", "float64": "<f8"}
_MAX_HEADER = 4096


class MaskFormatError(ValueError):
    pass


def write_masks(path, masks, frame_len=None, frame_shift=None, dtype="float32"):
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")
    masks = np.asarray(masks, dtype=_DTYPES[dtype])
    if masks.ndim == 2:
        masks = masks[None]
    if masks.ndim != 3:
        raise ValueError(f"masks must be (sources, frames, bins), got shape {masks.shape}")
    lines = [MAGIC, f"dtype {dtype}"] + [f"{k} {n}" for k, n in zip(_REQUIRED, masks.shape)]
    for key, value in (("frame_len", frame_len), ("frame_shift", frame_shift)):
        if value is not None:
            lines.append(f"{key} {int(value)}")
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(masks).tobytes())


def read_masks(path, with_header=False):
    """Load a mask file; ``with_header=True`` also returns the header dict."""
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"\nend\n")
    if end < 0 or end > _MAX_HEADER:
        raise MaskFormatError(f"{path}: missing header terminator")
    try:
        lines = raw[:end].decode("ascii").split("\n")
    except UnicodeDecodeError as exc:
        raise MaskFormatError(f"{path}: header is not ASCII") from exc
    if lines[0].strip() != MAGIC:
        raise MaskFormatError(f"{path}: not a mask file (expected {MAGIC!r})")
    header = {}
    for line in lines[1:]:
        parts = line.split()
        if len(parts) == 2 and parts[0] == "dtype":
            if parts[1] not in _DTYPES:
                raise MaskFormatError(f"{path}: unsupported dtype {parts[1]!r}")
            header["dtype"] = parts[1]
            continue
        if len(parts) != 2 or parts[0] not in _REQUIRED + _OPTIONAL:
            raise MaskFormatError(f"{path}: bad header line {line!r}")
        try:
            header[parts[0]] = int(parts[1])
        except ValueError:
            raise MaskFormatError(f"{path}: non-integer value in {line!r}") from None
    missing = [k for k in ("dtype",) + _REQUIRED if k not in header]
    if missing:
        raise MaskFormatError(f"{path}: header lacks {missing}")
    shape = tuple(header[k] for k in _REQUIRED)
    if min(shape) < 1:
        raise MaskFormatError(f"{path}: empty mask shape {shape}")
    dtype = np.dtype(_DTYPES[header["dtype"]])
    payload = raw[end + len(b"\nend\n"):]
    expected = dtype.itemsize * int(np.prod(shape))
    if len(payload) != expected:
        raise MaskFormatError(f"{path}: payload has {len(payload)} bytes, header implies "
                              f"{expected}")
    masks = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(float)
    if not np.all(np.isfinite(masks)):
        raise MaskFormatError(f"{path}: non-finite mask values")
    return (masks, header) if with_header else masks
