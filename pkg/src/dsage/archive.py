"""Discretized measure-space archive with elite replacement and QD metrics.

The archive tiles a bounded measure space into a grid of cells and keeps at
most one elite (the highest-objective solution seen so far) per cell. Elite
selection strategies (downsampling, uniform random, full) live here too since
they only depend on archive contents.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

CellIndex = Tuple[int, ...]

INSERTED = "inserted"
IMPROVED = "improved"
REJECTED = "rejected"


@dataclass(frozen=True)
class MeasureSpec:
    """Per-dimension bounds and cell counts of the measure grid."""

    lows: Tuple[float, ...]
    highs: Tuple[float, ...]
    cells: Tuple[int, ...]

    def __post_init__(self):
        if not (len(self.lows) == len(self.highs) == len(self.cells)):
            raise ValueError("lows/highs/cells must have equal length")
        for lo, hi, n in zip(self.lows, self.highs, self.cells):
            if not lo < hi:
                raise ValueError(f"need lower < upper bound, got [{lo}, {hi}]")
            if n < 1:
                raise ValueError(f"cell count must be >= 1, got {n}")

    @property
    def ndim(self) -> int:
        return len(self.cells)

    @property
    def total_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def widths(self) -> Tuple[float, ...]:
        return tuple((hi - lo) / n for lo, hi, n in zip(self.lows, self.highs, self.cells))

    def discretize(self, measures: Sequence[float]) -> CellIndex:
        """Map a measure vector to its cell index, clamping at the bounds."""
        if len(measures) != self.ndim:
            raise ValueError(f"expected {self.ndim} measures, got {len(measures)}")
        idx = []
        for m, lo, n, w in zip(measures, self.lows, self.cells, self.widths):
            i = int(np.floor((m - lo) / w))
            idx.append(min(max(i, 0), n - 1))
        return tuple(idx)


@dataclass
class Elite:
    """One archive occupant: solution plus its evaluated objective/measures."""

    solution: np.ndarray
    objective: float
    measures: np.ndarray
    cell: CellIndex


@dataclass
class GridArchive:
    """Sparse map from cell index to the best elite seen for that cell."""

    spec: MeasureSpec
    _cells: Dict[CellIndex, Elite] = field(default_factory=dict)
    _occupied: List[CellIndex] = field(default_factory=list)  # insertion order

    def add(self, solution: np.ndarray, objective: float, measures: Sequence[float]) -> str:
        """Offer a solution; returns one of inserted/improved/rejected.

        A tie on objective keeps the incumbent, so replaying the same tells
        always reproduces the same archive.
        """
        measures = np.asarray(measures, dtype=float)
        if not np.isfinite(objective):
            raise ValueError(f"non-finite objective: {objective}")
        if not np.all(np.isfinite(measures)):
            raise ValueError(f"non-finite measures: {measures}")
        cell = self.spec.discretize(measures)
        incumbent = self._cells.get(cell)
        if incumbent is None:
            self._cells[cell] = Elite(np.array(solution, copy=True), float(objective), measures, cell)
            self._occupied.append(cell)
            return INSERTED
        if objective > incumbent.objective:
            self._cells[cell] = Elite(np.array(solution, copy=True), float(objective), measures, cell)
            return IMPROVED
        return REJECTED

    def __len__(self) -> int:
        return len(self._cells)

    def __iter__(self) -> Iterator[Elite]:
        return iter(self._cells.values())

    def elite_at(self, cell: CellIndex) -> Elite | None:
        return self._cells.get(cell)

    def sample_elite(self, rng: np.random.Generator) -> Elite:
        """One elite uniformly at random; O(1) via the insertion-order list."""
        if not self._occupied:
            raise IndexError("archive is empty")
        return self._cells[self._occupied[int(rng.integers(len(self._occupied)))]]

    def qd_score(self) -> float:
        return float(sum(e.objective for e in self._cells.values()))

    def coverage(self) -> float:
        return len(self._cells) / self.spec.total_cells

    # --- elite selection -------------------------------------------------

    def select_all(self) -> List[Elite]:
        """Every elite, in row-major cell order."""
        return [self._cells[c] for c in sorted(self._cells)]

    def select_random(self, k: int, rng: np.random.Generator) -> List[Elite]:
        """min(k, occupied) distinct elites, uniformly without replacement."""
        if k < 0:
            raise ValueError(f"k must be >= 0, got {k}")
        cells = sorted(self._cells)
        if k >= len(cells):
            return [self._cells[c] for c in cells]
        picked = rng.choice(len(cells), size=k, replace=False)
        return [self._cells[cells[i]] for i in sorted(picked)]

    def select_downsample(self, region_shape: Sequence[int], rng: np.random.Generator) -> List[Elite]:
        """One uniformly random occupant from every occupied region.

        Regions tile the cell grid in row-major order; regions truncated at
        the archive boundary count as full regions.
        """
        if len(region_shape) != self.spec.ndim:
            raise ValueError("region shape dimension mismatch")
        if any(r < 1 for r in region_shape):
            raise ValueError("region extents must be >= 1")
        regions: Dict[CellIndex, List[CellIndex]] = {}
        for cell in self._cells:
            rid = tuple(c // r for c, r in zip(cell, region_shape))
            regions.setdefault(rid, []).append(cell)
        out = []
        for rid in sorted(regions):
            occupants = sorted(regions[rid])
            out.append(self._cells[occupants[int(rng.integers(len(occupants)))]])
        return out

    # --- serialization ----------------------------------------------------

    def to_csv(self, path) -> None:
        """Write `cell_0,...,objective,measure_0,...,solution` rows in cell order."""
        nd = self.spec.ndim
        header = (
            [f"cell_{i}" for i in range(nd)]
            + ["objective"]
            + [f"measure_{i}" for i in range(nd)]
            + ["solution"]
        )
        lines = [",".join(header)]
        for cell in sorted(self._cells):
            e = self._cells[cell]
            sol = json.dumps([_num(v) for v in e.solution.tolist()], separators=(",", ":"))
            row = (
                [str(c) for c in cell]
                + [repr(e.objective)]
                + [repr(float(m)) for m in e.measures]
                + ['"' + sol.replace('"', '""') + '"']
            )
            lines.append(",".join(row))
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path, spec: MeasureSpec) -> "GridArchive":
        archive = cls(spec)
        with open(path) as f:
            header = f.readline().strip().split(",")
            nd = sum(1 for h in header if h.startswith("cell_"))
            if nd != spec.ndim:
                raise ValueError(f"archive CSV has {nd} cell dims, spec has {spec.ndim}")
            for line in f:
                line = line.strip()
                if not line:
                    continue
                fields = _split_csv(line)
                cell = tuple(int(v) for v in fields[:nd])
                objective = float(fields[nd])
                measures = np.array([float(v) for v in fields[nd + 1 : 2 * nd + 1]])
                solution = np.array(json.loads(fields[2 * nd + 1]), dtype=float)
                elite = Elite(solution, objective, measures, cell)
                if spec.discretize(measures) != cell:
                    raise ValueError(f"row cell {cell} disagrees with measures {measures}")
                archive._cells[cell] = elite
                archive._occupied.append(cell)
        return archive


def _num(v):
    """Keep integral genotype values as ints in the JSON solution column."""
    f = float(v)
    return int(f) if f.is_integer() else f


def _split_csv(line: str) -> List[str]:
    """Split one CSV row, honoring the double-quoted solution column."""
    fields, cur, quoted, i = [], [], False, 0
    while i < len(line):
        ch = line[i]
        if quoted:
            if ch == '"':
                if i + 1 < len(line) and line[i + 1] == '"':
                    cur.append('"')
                    i += 1
                else:
                    quoted = False
            else:
                cur.append(ch)
        elif ch == '"':
            quoted = True
        elif ch == ",":
            fields.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
        i += 1
    fields.append("".join(cur))
    return fields
