"""Small shared helpers: canonical number formatting and atomic file output."""

from __future__ import annotations

import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

# Mean spherical Earth radius in kilometres, used for every geodesic quantity.
EARTH_RADIUS_KM = 6371.0088


def fmt_num(value) -> str:
    """Minimal decimal representation: integral values without a trailing
    '.0', everything else via the shortest round-trip repr."""
    if isinstance(value, bool):
        return "1" if value else "0"
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def fmt_cell(value) -> str:
    """CSV cell rendering: numbers canonically, None/NaN as empty, strings as-is."""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, float) and math.isnan(value):
        return ""
    return fmt_num(value)


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write text to a temp file in the target directory, then rename over."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Deterministic CSV writer: LF endings, canonical number formatting.

    Field values must not contain commas or newlines; identifiers in this
    pipeline never do.
    """
    lines = [",".join(header)]
    for row in rows:
        cells = [fmt_cell(v) for v in row]
        for c in cells:
            if "," in c or "\n" in c:
                raise ValueError(f"CSV field contains a delimiter: {c!r}")
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")
