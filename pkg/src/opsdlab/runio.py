"""Run-directory persistence and plot-data files.

Every artifact embeds the config hash and seeds that produced it. Plot-data
files are tab-separated with a two-line '#' header (schema name, column
names) so they are diffable and round-trip through `read_plot_data`.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from .errors import ConfigError


def stable_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config_dict: dict) -> str:
    return hashlib.sha256(stable_json(config_dict).encode()).hexdigest()[:16]


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def append_jsonl(path, record: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as fh:
        fh.write(stable_json(record) + "\n")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def output_root() -> Path:
    return Path(os.environ.get("OPSDLAB_OUT_ROOT", "runs"))


# ---------------------------------------------------------------------------
# Plot-data files.
# ---------------------------------------------------------------------------


def write_plot_data(path, schema: str, columns, rows) -> None:
    """Tab-separated numeric/string table with a named schema header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns)
    with open(path, "w") as fh:
        fh.write(f"# schema: {schema}\n")
        fh.write("# columns: " + "\t".join(columns) + "\n")
        for row in rows:
            if len(row) != len(columns):
                raise ConfigError(f"row width {len(row)} != column count {len(columns)}")
            fh.write("\t".join(_cell(v) for v in row) + "\n")


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_plot_data(path) -> tuple[str, list[str], list[list]]:
    """Parse a plot-data file back to (schema, columns, rows); numeric cells
    come back as floats."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2 or not lines[0].startswith("# schema: ") or not lines[1].startswith("# columns: "):
        raise ConfigError(f"not a plot-data file: {path}")
    schema = lines[0][len("# schema: "):]
    columns = lines[1][len("# columns: "):].split("\t")
    rows = []
    for line in lines[2:]:
        if not line.strip():
            continue
        cells = []
        for cell in line.split("\t"):
            try:
                cells.append(float(cell))
            except ValueError:
                cells.append(cell)
        rows.append(cells)
    return schema, columns, rows
