"""Archive heatmap export as binary PPM (P6).

Pixel (x, y) encodes archive cell (x, y) with the measure-0 axis horizontal
and the measure-1 axis growing upward from the bottom row, so cell (0, 0)
lands in the image's lower-left corner. Occupied cells use a dark-to-bright
linear gray ramp over [0, max objective]; empty cells get a distinct
background color. Output bytes depend only on the archive contents.
"""

from __future__ import annotations

import json
from pathlib import Path

from .archive import GridArchive

BACKGROUND = (45, 10, 60)
RAMP_LOW = 16  # objective 0 is dark gray, still distinct from the background


def write_heatmap(archive: GridArchive, path) -> None:
    if archive.spec.ndim != 2:
        raise ValueError("heatmaps require a 2-D archive")
    width, height = archive.spec.cells
    max_obj = max((e.objective for e in archive), default=0.0)
    pixels = bytearray(BACKGROUND * (width * height))
    for elite in archive:
        x, y = elite.cell
        t = elite.objective / max_obj if max_obj > 0 else 0.0
        shade = RAMP_LOW + int(round((255 - RAMP_LOW) * t))
        offset = ((height - 1 - y) * width + x) * 3
        pixels[offset : offset + 3] = bytes((shade, shade, shade))
    path = Path(path)
    with open(path, "wb") as f:
        f.write(f"P6\n{width} {height}\n255\n".encode())
        f.write(bytes(pixels))
    sidecar = {
        "width": width,
        "height": height,
        "x_axis": {"measure": 0, "low": archive.spec.lows[0], "high": archive.spec.highs[0]},
        "y_axis": {"measure": 1, "low": archive.spec.lows[1], "high": archive.spec.highs[1],
                   "direction": "bottom-up"},
        "max_objective": max_obj,
        "background_rgb": list(BACKGROUND),
        "ramp": f"gray {RAMP_LOW}..255 linear in objective/[0,max]",
    }
    with open(path.with_suffix(path.suffix + ".json"), "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")
