# /superlab/utils/helpers.py

import hashlib
from datetime import datetime, timezone

DETAIL_LIMIT = 512


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def truncate_detail(text: str, limit: int = DETAIL_LIMIT) -> str:
    if len(text) <= limit:
        return text
    return text[: limit - 16] + "...(truncated)"


def gnuplot_script(csv_name: str, x_col: int, y_cols: list[int], title: str, x_label: str,
                   logscale: bool = False, labels: list[str] | None = None) -> str:
    """A gnuplot script plotting 1-based columns of a comma-separated file with a header row."""
    labels = labels or [f"column {c}" for c in y_cols]
    lines = [
        f"# plots {csv_name}",
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set title '{title}'",
        f"set xlabel '{x_label}'",
        "set grid",
    ]
    if logscale:
        lines.append("set logscale xy")
    plots = [f"'{csv_name}' using {x_col}:{c} with linespoints title '{label}'" for c, label in zip(y_cols, labels)]
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"
