"""Shared CSV emission and parsing.

All tabular output of the package uses one layout: a block of ``# key=value``
header lines echoing the run parameters, a single column-name row, then data
rows.  Floats are printed with 12 significant digits and no thousands
separators.  Rewriting a parsed file reproduces it byte for byte, which the
test suite relies on.
"""

import math
import os
import tempfile

__all__ = ["format_value", "render_table", "write_table", "read_table"]


def format_value(value) -> str:
    """Render a cell: floats at 12 significant digits, everything else as str."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.12g}"
    return str(value)


def render_table(meta: dict, columns: dict) -> str:
    """Render header metadata plus named columns to CSV text.

    ``columns`` maps column name to a sequence; all sequences must have equal
    length.  Column order follows dict insertion order.
    """
    lengths = {len(v) for v in columns.values()}
    if len(lengths) > 1:
        raise ValueError(f"column lengths differ: {sorted(lengths)}")
    n = lengths.pop() if lengths else 0
    lines = [f"# {k}={format_value(v)}" for k, v in meta.items()]
    names = list(columns)
    lines.append(",".join(names))
    cols = [columns[k] for k in names]
    for i in range(n):
        lines.append(",".join(format_value(c[i]) for c in cols))
    return "\n".join(lines) + "\n"


def write_table(path: str, meta: dict, columns: dict) -> None:
    """Write a table atomically (temp file in the target directory + rename)."""
    text = render_table(meta, columns)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ndopo-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_table(path_or_text: str, *, is_text: bool = False):
    """Parse a table written by :func:`write_table`.

    Returns ``(meta, columns)`` where ``meta`` maps header keys to their raw
    string values and ``columns`` maps column names to lists of cell strings.
    Callers convert types; keeping strings here is what makes the
    write-read-write round trip exact.
    """
    if is_text:
        text = path_or_text
    else:
        with open(path_or_text) as fh:
            text = fh.read()
    meta: dict = {}
    names = None
    columns: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" not in body:
                raise ValueError(f"line {lineno}: malformed header {line!r}")
            key, _, value = body.partition("=")
            meta[key.strip()] = value.strip()
            continue
        cells = line.split(",")
        if names is None:
            names = cells
            columns = {name: [] for name in names}
            continue
        if len(cells) != len(names):
            raise ValueError(f"line {lineno}: expected {len(names)} cells, got {len(cells)}")
        for name, cell in zip(names, cells):
            columns[name].append(cell)
    if names is None:
        raise ValueError("no column header found")
    return meta, columns
