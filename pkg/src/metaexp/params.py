"""Named, flat-addressable parameter collections."""
import numpy as np

from .autodiff import Tensor, add, as_tensor, detach, mul, sub
from .errors import ContractViolation


class ParamVector:
    """Ordered mapping of segment name -> Tensor.

    Segments may be constants or tape nodes; arithmetic between two vectors
    with the same schema is elementwise and differentiable.
    """

    def __init__(self, segments):
        self.segments = {str(k): as_tensor(v) for k, v in segments.items()}
        if len(self.segments) != len(segments):
            raise ContractViolation("duplicate segment names")

    @property
    def schema(self):
        return tuple((name, t.shape) for name, t in self.segments.items())

    @property
    def total_len(self):
        return int(sum(t.size for t in self.segments.values()))

    def __getitem__(self, name):
        return self.segments[name]

    def __iter__(self):
        return iter(self.segments)

    def __len__(self):
        return len(self.segments)

    def __contains__(self, name):
        return name in self.segments

    def items(self):
        return self.segments.items()

    def values(self):
        return self.segments.values()

    def names(self):
        return list(self.segments)

    def flatten(self):
        if not self.segments:
            return np.zeros(0)
        return np.concatenate([t.data.ravel() for t in self.segments.values()])

    @classmethod
    def unflatten(cls, flat, schema):
        flat = np.asarray(flat, dtype=np.float64)
        total = sum(int(np.prod(shape)) for _, shape in schema)
        if flat.shape != (total,):
            raise ContractViolation(f"flat vector has {flat.size} entries, schema needs {total}")
        out, off = {}, 0
        for name, shape in schema:
            n = int(np.prod(shape))
            out[name] = flat[off:off + n].reshape(shape).copy()
            off += n
        return cls(out)

    def numpy(self):
        return {k: t.data for k, t in self.segments.items()}

    def detach(self):
        return ParamVector({k: detach(t) for k, t in self.segments.items()})

    def watch(self, tape):
        """Leaves on ``tape`` holding copies of these values."""
        return ParamVector({k: tape.watch(t.data.copy()) for k, t in self.segments.items()})

    def copy(self):
        return self.detach()

    def _check(self, other):
        if self.schema != other.schema:
            raise ContractViolation("parameter schemas differ")

    def __add__(self, other):
        self._check(other)
        return ParamVector({k: add(t, other[k]) for k, t in self.segments.items()})

    def __sub__(self, other):
        self._check(other)
        return ParamVector({k: sub(t, other[k]) for k, t in self.segments.items()})

    def scale(self, c):
        return ParamVector({k: mul(t, c) for k, t in self.segments.items()})

    def map(self, fn):
        return ParamVector({k: fn(t) for k, t in self.segments.items()})

    def zeros_like(self):
        return ParamVector({k: np.zeros(t.shape) for k, t in self.segments.items()})

    def dot(self, other):
        self._check(other)
        return float(np.dot(self.flatten(), other.flatten()))

    def norm(self):
        return float(np.sqrt(np.sum(self.flatten() ** 2)))

    def equal(self, other):
        """Bitwise equality of schema and values."""
        return self.schema == other.schema and all(
            np.array_equal(t.data, other[k].data) for k, t in self.segments.items())

    def __repr__(self):
        parts = ", ".join(f"{k}{list(t.shape)}" for k, t in self.segments.items())
        return f"ParamVector({parts})"


def zeros(schema):
    return ParamVector({name: np.zeros(shape) for name, shape in schema})


def is_tape_connected(p):
    return any(t.tape is not None for t in p.values())


def constant(p):
    """Wrap raw arrays (dict name -> array) as a ParamVector."""
    return ParamVector({k: Tensor(np.asarray(v, dtype=np.float64)) for k, v in p.items()})
