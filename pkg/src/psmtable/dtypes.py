"""Element types, shape policies and cell values.

All payload bytes in the system are little-endian and row-major; a cell
is a scalar or an N-dimensional numeric array of one element type.
There is deliberately no string type anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidDesc, ShapeMismatch, TypeMismatch


class ElementType(Enum):
    BOOL = "bool"
    I32 = "i32"
    I64 = "i64"
    F32 = "f32"
    F64 = "f64"
    C64 = "c64"  # pair of f32
    C128 = "c128"  # pair of f64

    @property
    def width(self) -> int:
        return _WIDTHS[self]

    @property
    def np_dtype(self) -> np.dtype:
        return _NP_DTYPES[self]

    @property
    def tag(self) -> int:
        """Stable wire tag (declaration order) used in the pseg index."""
        return _TAGS[self]

    @classmethod
    def from_token(cls, token: str) -> "ElementType":
        try:
            return cls(token)
        except ValueError:
            raise InvalidDesc(f"unknown element type {token!r}") from None

    @classmethod
    def from_tag(cls, tag: int) -> "ElementType":
        for et, t in _TAGS.items():
            if t == tag:
                return et
        raise InvalidDesc(f"unknown element type tag {tag}")

    @classmethod
    def from_np_dtype(cls, dtype: np.dtype) -> "ElementType":
        key = np.dtype(dtype).newbyteorder("<")
        for et, dt in _NP_DTYPES.items():
            if dt == key:
                return et
        raise TypeMismatch(f"no element type for numpy dtype {dtype}")


_WIDTHS = {
    ElementType.BOOL: 1,
    ElementType.I32: 4,
    ElementType.I64: 8,
    ElementType.F32: 4,
    ElementType.F64: 8,
    ElementType.C64: 8,
    ElementType.C128: 16,
}

_NP_DTYPES = {
    ElementType.BOOL: np.dtype("?"),
    ElementType.I32: np.dtype("<i4"),
    ElementType.I64: np.dtype("<i8"),
    ElementType.F32: np.dtype("<f4"),
    ElementType.F64: np.dtype("<f8"),
    ElementType.C64: np.dtype("<c8"),
    ElementType.C128: np.dtype("<c16"),
}

_TAGS = {et: i for i, et in enumerate(ElementType)}


class ShapeKind(Enum):
    SCALAR = "scalar"
    FIXED = "fixed"
    VARIABLE = "variable"


@dataclass(frozen=True)
class ShapePolicy:
    """Declared shape of a column: scalar, fixed extents, or free until write."""

    kind: ShapeKind
    extents: tuple[int, ...] = ()  # FIXED only
    ndim: int = 0  # VARIABLE only

    @classmethod
    def scalar(cls) -> "ShapePolicy":
        return cls(ShapeKind.SCALAR)

    @classmethod
    def fixed(cls, extents) -> "ShapePolicy":
        extents = tuple(int(e) for e in extents)
        if not extents or any(e < 1 for e in extents):
            raise InvalidDesc(f"fixed shape extents must be >= 1, got {extents}")
        return cls(ShapeKind.FIXED, extents=extents)

    @classmethod
    def variable(cls, ndim: int) -> "ShapePolicy":
        if ndim < 1:
            raise InvalidDesc(f"variable shape ndim must be >= 1, got {ndim}")
        return cls(ShapeKind.VARIABLE, ndim=ndim)

    def conforms(self, shape: tuple[int, ...]) -> bool:
        if self.kind is ShapeKind.SCALAR:
            return shape == ()
        if self.kind is ShapeKind.FIXED:
            return shape == self.extents
        return len(shape) == self.ndim and all(e >= 1 for e in shape)


def cell_bytes(etype: ElementType, shape: tuple[int, ...]) -> int:
    return etype.width * math.prod(shape)


class CellValue:
    """One cell: element type, shape (empty = scalar) and row-major data."""

    __slots__ = ("etype", "shape", "data")

    def __init__(self, etype: ElementType, shape: tuple[int, ...], data: np.ndarray):
        self.etype = etype
        self.shape = tuple(int(e) for e in shape)
        data = np.asarray(data, dtype=etype.np_dtype)
        if data.size != math.prod(self.shape):
            raise ShapeMismatch(
                f"data length {data.size} != product of extents {self.shape}"
            )
        self.data = np.ascontiguousarray(data).reshape(self.shape)

    @classmethod
    def scalar(cls, etype: ElementType, value) -> "CellValue":
        return cls(etype, (), np.asarray(value, dtype=etype.np_dtype))

    @classmethod
    def from_array(cls, array) -> "CellValue":
        """Wrap a numpy array; the dtype must map exactly to an element type."""
        array = np.asarray(array)
        etype = ElementType.from_np_dtype(array.dtype)
        return cls(etype, array.shape, array)

    @classmethod
    def from_bytes(
        cls, etype: ElementType, shape: tuple[int, ...], buf: bytes
    ) -> "CellValue":
        expected = cell_bytes(etype, shape)
        if len(buf) != expected:
            raise ShapeMismatch(f"payload is {len(buf)} bytes, expected {expected}")
        data = np.frombuffer(buf, dtype=etype.np_dtype).reshape(shape)
        return cls(etype, shape, data)

    def to_bytes(self) -> bytes:
        return self.data.tobytes()

    @property
    def nbytes(self) -> int:
        return cell_bytes(self.etype, self.shape)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CellValue):
            return NotImplemented
        # bitwise equality: NaNs compare equal to themselves
        return (
            self.etype is other.etype
            and self.shape == other.shape
            and self.to_bytes() == other.to_bytes()
        )

    def __repr__(self) -> str:
        return f"CellValue({self.etype.value}, shape={self.shape})"


def as_cell(value, etype: ElementType) -> CellValue:
    """Coerce a put_cell argument; dtype must match the column exactly."""
    if isinstance(value, CellValue):
        cell = value
    else:
        array = np.asarray(value)
        if array.dtype == np.dtype(object):
            raise TypeMismatch(f"cannot store object arrays ({value!r})")
        cell = CellValue.from_array(array)
    if cell.etype is not etype:
        raise TypeMismatch(f"column stores {etype.value}, got {cell.etype.value}")
    return cell
