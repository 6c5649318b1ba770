"""Binary PGM (P5) and PPM (P6) readers and writers.

Images are exchanged with the pipeline as float64 arrays in 0..maxval
units; saliency outputs are written as 8-bit PGM scaled to 0..255 and
label maps as 16-bit PGM.
"""

import numpy as np


class ImageFormatError(ValueError):
    pass


def _read_header(f, magic):
    got = f.read(2)
    if got != magic:
        raise ImageFormatError(f"expected {magic!r} header, got {got!r}")
    fields = []
    while len(fields) < 3:
        line = f.readline()
        if not line:
            raise ImageFormatError("truncated header")
        body = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in body.split())
    w, h, maxval = fields[:3]
    if maxval <= 0 or maxval > 65535:
        raise ImageFormatError(f"unsupported maxval {maxval}")
    return w, h, maxval


def _read_payload(f, count, maxval):
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    raw = f.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise ImageFormatError("truncated pixel data")
    return np.frombuffer(raw, dtype=dtype).astype(np.float64)


def read_pgm(path):
    """Read a P5 file as a float64 (H, W) array in 0..maxval."""
    with open(path, "rb") as f:
        w, h, maxval = _read_header(f, b"P5")
        return _read_payload(f, w * h, maxval).reshape(h, w)


def read_ppm(path):
    """Read a P6 file as a float64 (H, W, 3) array in 0..maxval."""
    with open(path, "rb") as f:
        w, h, maxval = _read_header(f, b"P6")
        return _read_payload(f, w * h * 3, maxval).reshape(h, w, 3)


def read_image(path):
    """Read a PPM or PGM image as (H, W, 3) in 0..255."""
    with open(path, "rb") as f:
        magic = f.read(2)
    if magic == b"P6":
        return read_ppm(path)
    if magic == b"P5":
        gray = read_pgm(path)
        return np.repeat(gray[:, :, None], 3, axis=2)
    raise ImageFormatError(f"{path}: unsupported magic {magic!r}")


def read_mask(path):
    """Read a PGM ground-truth mask, binarized at 128."""
    return (read_pgm(path) >= 128).astype(np.float64)


def write_pgm(path, array):
    """Write a float array in [0, 1] (or uint8) as 8-bit P5."""
    a = np.asarray(array)
    if a.dtype != np.uint8:
        a = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (a.shape[1], a.shape[0]))
        f.write(a.tobytes())


def write_pgm16(path, array):
    """Write an integer array (e.g. a segment label map) as 16-bit P5."""
    a = np.asarray(array)
    if a.min() < 0 or a.max() > 65535:
        raise ImageFormatError("values outside 16-bit range")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (a.shape[1], a.shape[0]))
        f.write(a.astype(">u2").tobytes())


def write_ppm(path, array):
    """Write a float (H, W, 3) array in 0..255 as 8-bit P6."""
    a = np.clip(np.rint(np.asarray(array)), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (a.shape[1], a.shape[0]))
        f.write(a.tobytes())
