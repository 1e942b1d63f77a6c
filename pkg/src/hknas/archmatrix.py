"""Text encoding of searched architectures.

One row per block, one space-separated entry per layer.  Entry codes are
0-based candidate indices (selected extent = 2*(code+1)+1 per axis):

* single-kernel edges: one digit, e.g. ``2``
* serial pairs: two digits ``10*a + b`` with a/b the first/second stage,
  written zero-padded, e.g. ``23`` or ``05``
* parallel pairs: ``a/b`` with a the 1-d branch and b the depthwise branch
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .mixedop import DerivedOp, Form

__all__ = ["ArchitectureMatrix", "MatrixFormatError"]

_TOKEN = re.compile(r"^(\d{1,2}|\d/\d)$")


class MatrixFormatError(ValueError):
    """Malformed or incompatible architecture-matrix content."""


@dataclass(frozen=True)
class ArchitectureMatrix:
    entries: tuple[tuple[str, ...], ...]

    @property
    def blocks(self) -> int:
        return len(self.entries)

    @property
    def layers(self) -> int:
        return len(self.entries[0])

    # -- text form ---------------------------------------------------------------

    def to_text(self) -> str:
        return "".join(" ".join(row) + "\n" for row in self.entries)

    @classmethod
    def from_text(cls, text: str) -> "ArchitectureMatrix":
        rows: list[tuple[str, ...]] = []
        for i, line in enumerate(text.splitlines()):
            if not line.strip():
                continue
            tokens = tuple(line.split())
            for j, tok in enumerate(tokens):
                if not _TOKEN.match(tok):
                    raise MatrixFormatError(
                        f"row {i + 1}, column {j + 1}: malformed entry {tok!r}")
            rows.append(tokens)
        if not rows:
            raise MatrixFormatError("empty architecture matrix")
        width = len(rows[0])
        for i, row in enumerate(rows):
            if len(row) != width:
                raise MatrixFormatError(
                    f"row {i + 1} has {len(row)} entries, expected {width}")
        return cls(tuple(rows))

    # -- conversion ----------------------------------------------------------------

    @classmethod
    def from_derived(cls, grid: list[list[DerivedOp]]) -> "ArchitectureMatrix":
        rows = []
        for row in grid:
            tokens = []
            for op in row:
                codes = tuple(s - 1 for s in op.indices)
                if op.form in (None, Form.CONV3D):
                    tokens.append(str(codes[0]))
                elif op.form is Form.PARALLEL:
                    tokens.append(f"{codes[0]}/{codes[1]}")
                else:
                    tokens.append(f"{10 * codes[0] + codes[1]:02d}")
            rows.append(tuple(tokens))
        return cls(tuple(rows))

    def decode(self, form: Form | None, size: int = 9) -> list[list[DerivedOp]]:
        """1-based candidate indices per cell, validated against ``form``.

        The first incompatible or out-of-range cell is reported by position.
        """
        limit = size // 2 - 1
        grid: list[list[DerivedOp]] = []
        for i, row in enumerate(self.entries):
            ops: list[DerivedOp] = []
            for j, tok in enumerate(row):
                where = f"row {i + 1}, column {j + 1}"
                if form is Form.PARALLEL:
                    if "/" not in tok:
                        raise MatrixFormatError(
                            f"{where}: entry {tok!r} is not a parallel pair")
                    codes = tuple(int(p) for p in tok.split("/"))
                elif "/" in tok:
                    raise MatrixFormatError(
                        f"{where}: parallel entry {tok!r} under non-parallel form")
                elif form in (None, Form.CONV3D):
                    if len(tok) != 1:
                        raise MatrixFormatError(
                            f"{where}: entry {tok!r} is not a single index")
                    codes = (int(tok),)
                else:
                    value = int(tok)
                    codes = (value // 10, value % 10)
                for code in codes:
                    if not 0 <= code <= limit:
                        raise MatrixFormatError(
                            f"{where}: index {code} outside [0, {limit}]")
                ops.append(DerivedOp(form, tuple(c + 1 for c in codes)))
            grid.append(ops)
        return grid
