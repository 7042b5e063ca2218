"""Table schema and the ``table.desc`` file grammar.

The descriptor is a line-oriented ASCII file (LF endings):

    PSMTABLE 1
    nrows <decimal u64>
    column <name> <etype> <ndim> <shape> <manager>

where etype is one of bool,i32,i64,f32,f64,c64,c128; ndim is 0 for a
scalar column (shape token ``-``); shape is the comma-joined extents of
a fixed column or ``var`` for a shape fixed by the first write; manager
is ``tiled`` or ``pseg``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dtypes import ElementType, ShapeKind, ShapePolicy
from .errors import CorruptDescriptor, InvalidDesc

MAGIC_LINE = "PSMTABLE 1"
MANAGERS = ("tiled", "pseg")
MAX_NAME_LEN = 64


def _valid_name(name: str) -> bool:
    if not 1 <= len(name) <= MAX_NAME_LEN:
        return False
    return all(0x21 <= ord(ch) <= 0x7E for ch in name)


@dataclass(frozen=True)
class ColumnDesc:
    name: str
    etype: ElementType
    shape: ShapePolicy
    manager: str = "tiled"

    def __post_init__(self):
        if not _valid_name(self.name):
            raise InvalidDesc(
                f"column name {self.name!r} must be 1..{MAX_NAME_LEN} "
                "printable ASCII chars with no whitespace"
            )
        if self.manager not in MANAGERS:
            raise InvalidDesc(f"unknown manager {self.manager!r}")

    def to_line(self) -> str:
        pol = self.shape
        if pol.kind is ShapeKind.SCALAR:
            ndim, shape = 0, "-"
        elif pol.kind is ShapeKind.FIXED:
            ndim, shape = len(pol.extents), ",".join(str(e) for e in pol.extents)
        else:
            ndim, shape = pol.ndim, "var"
        return f"column {self.name} {self.etype.value} {ndim} {shape} {self.manager}"

    @classmethod
    def from_line(cls, line: str) -> "ColumnDesc":
        parts = line.split(" ")
        if len(parts) != 6 or parts[0] != "column":
            raise CorruptDescriptor(f"bad column line {line!r}")
        _, name, etok, ndim_tok, shape_tok, manager = parts
        try:
            etype = ElementType.from_token(etok)
        except InvalidDesc as exc:
            raise CorruptDescriptor(str(exc)) from None
        try:
            ndim = int(ndim_tok)
        except ValueError:
            raise CorruptDescriptor(f"bad ndim {ndim_tok!r}") from None
        try:
            if ndim == 0:
                if shape_tok != "-":
                    raise CorruptDescriptor(f"scalar column with shape {shape_tok!r}")
                policy = ShapePolicy.scalar()
            elif shape_tok == "var":
                policy = ShapePolicy.variable(ndim)
            else:
                extents = tuple(int(tok) for tok in shape_tok.split(","))
                if len(extents) != ndim:
                    raise CorruptDescriptor(
                        f"ndim {ndim} does not match shape {shape_tok!r}"
                    )
                policy = ShapePolicy.fixed(extents)
        except (ValueError, InvalidDesc):
            raise CorruptDescriptor(f"bad shape {shape_tok!r}") from None
        if manager not in MANAGERS:
            raise CorruptDescriptor(f"unknown manager {manager!r}")
        try:
            return cls(name, etype, policy, manager)
        except InvalidDesc as exc:
            raise CorruptDescriptor(str(exc)) from None


@dataclass(frozen=True, init=False)
class TableDesc:
    columns: tuple[ColumnDesc, ...]
    nrows: int

    def __init__(self, columns, nrows: int):
        object.__setattr__(self, "columns", tuple(columns))
        object.__setattr__(self, "nrows", int(nrows))
        self.validate()

    def validate(self):
        if not self.columns:
            raise InvalidDesc("a table needs at least one column")
        if self.nrows < 0:
            raise InvalidDesc(f"nrows must be >= 0, got {self.nrows}")
        names = [c.name for c in self.columns]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise InvalidDesc(f"duplicate column names {sorted(dupes)}")

    def column(self, name: str) -> ColumnDesc:
        for col in self.columns:
            if col.name == name:
                return col
        from .errors import UnknownColumn

        raise UnknownColumn(name)

    def column_id(self, name: str) -> int:
        for i, col in enumerate(self.columns):
            if col.name == name:
                return i
        from .errors import UnknownColumn

        raise UnknownColumn(name)

    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def to_text(self) -> str:
        lines = [MAGIC_LINE, f"nrows {self.nrows}"]
        lines.extend(col.to_line() for col in self.columns)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TableDesc":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if len(lines) < 2 or lines[0] != MAGIC_LINE:
            raise CorruptDescriptor("missing PSMTABLE magic line")
        head = lines[1].split(" ")
        if len(head) != 2 or head[0] != "nrows":
            raise CorruptDescriptor(f"bad nrows line {lines[1]!r}")
        try:
            nrows = int(head[1])
        except ValueError:
            raise CorruptDescriptor(f"bad nrows value {head[1]!r}") from None
        if nrows < 0:
            raise CorruptDescriptor(f"bad nrows value {nrows}")
        columns = [ColumnDesc.from_line(line) for line in lines[2:]]
        if not columns:
            raise CorruptDescriptor("descriptor lists no columns")
        try:
            return cls(columns, nrows)
        except InvalidDesc as exc:
            raise CorruptDescriptor(str(exc)) from None
