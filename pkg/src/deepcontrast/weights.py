"""Named-tensor container with a binary on-disk format.

File layout: magic b"DCLW", format version u32, tensor count u32, then per
tensor: name length u16, name bytes (utf-8), rank u8, dims u32 each,
payload as little-endian float64.  Round-trips are bit-exact.
"""

import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"DCLW"
FORMAT_VERSION = 1


class WeightFormatError(ValueError):
    pass


class WeightStore:
    """Ordered mapping from unique tensor names to Tensors."""

    def __init__(self):
        self._tensors = {}

    def add(self, name, tensor):
        if name in self._tensors:
            raise KeyError(f"duplicate tensor name '{name}'")
        self._tensors[name] = tensor

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def parameters(self, prefix=None):
        """Sub-dict of parameters, optionally filtered by name prefix."""
        return {
            n: t for n, t in self._tensors.items()
            if prefix is None or n.startswith(prefix)
        }

    def zero_grads(self):
        for t in self._tensors.values():
            t.grad = None

    def copy(self):
        out = WeightStore()
        for n, t in self._tensors.items():
            c = Tensor(t.data.copy(), requires_grad=t.requires_grad)
            out.add(n, c)
        return out

    def allclose(self, other, exact=False):
        if self.names() != other.names():
            return False
        for n, t in self._tensors.items():
            o = other[n].data
            if exact:
                if t.data.shape != o.shape or not np.array_equal(t.data, o):
                    return False
            elif not np.allclose(t.data, o):
                return False
        return True


def save_weights(store, path):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(store)))
        for name, t in store.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            dims = t.data.shape
            f.write(struct.pack("<B", len(dims)))
            f.write(struct.pack(f"<{len(dims)}I", *dims))
            f.write(t.data.astype("<f8").tobytes())


def _read_exact(f, n, what):
    raw = f.read(n)
    if len(raw) != n:
        raise WeightFormatError(f"truncated weights file while reading {what}")
    return raw


def load_weights(path, requires_grad=True):
    store = WeightStore()
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise WeightFormatError(f"{path}: not a {MAGIC.decode()} weights file")
        version, count = struct.unpack("<II", _read_exact(f, 8, "header"))
        if version != FORMAT_VERSION:
            raise WeightFormatError(
                f"{path}: format version {version} not supported "
                f"(expected {FORMAT_VERSION})"
            )
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(f, 1, "rank"))
            dims = struct.unpack(
                f"<{rank}I", _read_exact(f, 4 * rank, "dims")
            )
            n = int(np.prod(dims)) if dims else 1
            payload = _read_exact(f, 8 * n, f"payload of '{name}'")
            data = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
            store.add(name, Tensor(data, requires_grad=requires_grad))
    return store
