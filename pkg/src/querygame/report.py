"""Table rendering for experiment results.

Tables are defined by layouts (column schemas). Rows are flat dicts of
numbers and strings produced by the arena; rendering only formats stored
fields (two decimals, "mean ± half-width"), it never recomputes statistics.
Results round-trip through JSON files so the `report` command can re-render
without re-running anything.
"""

import csv
import io
import json
from pathlib import Path
from typing import List, Optional

from .arena import ExperimentStats


class RenderError(RuntimeError):
    """A table cannot be rendered from the given rows."""


# column kinds: str | int | pct | mhw ("mean ± hw", blanked when the
# winner's count is zero)
LAYOUTS = {
    "accuracy": (
        ("Training", "training", "str"),
        ("Attack", "attack", "str"),
        ("Accuracy", "accuracy", "pct"),
    ),
    "attacker": (
        ("Training", "training", "str"),
        ("Attack", "attack", "str"),
        ("Rounds", "attacker_rounds", "mhw"),
        ("Queries", "attacker_queries", "mhw"),
    ),
    "detector": (
        ("Detector", "detector", "str"),
        ("Training", "training", "str"),
        ("Attack", "attack", "str"),
        ("Atk Count", "attacker_count", "int"),
        ("Atk Rounds", "attacker_rounds", "mhw"),
        ("Atk Queries", "attacker_queries", "mhw"),
        ("Def Count", "defender_count", "int"),
        ("Def Rounds", "defender_rounds", "mhw"),
        ("Def Queries", "defender_queries", "mhw"),
    ),
    "evasion": (
        ("Attack", "attack", "str"),
        ("Evasion", "evasion_window", "int"),
        ("Atk Count", "attacker_count", "int"),
        ("Atk Rounds", "attacker_rounds", "mhw"),
        ("Atk Queries", "attacker_queries", "mhw"),
        ("Def Count", "defender_count", "int"),
        ("Def Rounds", "defender_rounds", "mhw"),
        ("Def Queries", "defender_queries", "mhw"),
    ),
    "collisions": (
        ("Dataset", "dataset", "str"),
        ("Samples", "samples", "int"),
        ("Classes", "classes", "int"),
        ("Collisions", "collisions", "int"),
    ),
}


def flatten_stats(stats: ExperimentStats) -> dict:
    """Numeric table fields for one experiment's aggregate statistics."""
    if stats.trials == 0:
        raise RenderError("empty experiment (0 trials) cannot be rendered")
    row = {"trials": stats.trials, "timeout_count": stats.timeout.count}
    for side in ("attacker", "defender"):
        ws = getattr(stats, side)
        row[f"{side}_count"] = ws.count
        row[f"{side}_rounds_mean"] = ws.mean_rounds
        row[f"{side}_rounds_hw"] = ws.hw_rounds
        row[f"{side}_queries_mean"] = ws.mean_queries
        row[f"{side}_queries_hw"] = ws.hw_queries
    return row


def _cell(row: dict, key: str, kind: str) -> str:
    def need(k):
        if k not in row:
            raise RenderError(f"row is missing column {k!r}")
        return row[k]

    if kind == "str":
        return str(need(key))
    if kind == "int":
        return str(int(need(key)))
    if kind == "pct":
        return f"{float(need(key)) * 100:.2f}%"
    if kind == "mhw":
        # blank statistics for a winner that never occurred
        side = key.split("_")[0]
        count_key = f"{side}_count"
        if count_key in row and int(row[count_key]) == 0:
            return ""
        return f"{float(need(key + '_mean')):.2f} ± {float(need(key + '_hw')):.2f}"
    raise RenderError(f"unknown column kind {kind!r}")


def _layout(layout_id: str):
    if layout_id not in LAYOUTS:
        raise RenderError(f"unknown table layout {layout_id!r}")
    return LAYOUTS[layout_id]


def table_cells(layout_id: str, rows: List[dict]):
    columns = _layout(layout_id)
    if not rows:
        raise RenderError(f"no rows to render for layout {layout_id!r}")
    header = [title for title, _, _ in columns]
    body = [[_cell(row, key, kind) for _, key, kind in columns] for row in rows]
    return header, body


def render_table(layout_id: str, rows: List[dict]) -> str:
    """Aligned text table; deterministic for identical inputs."""
    header, body = table_cells(layout_id, rows)
    widths = [max(len(header[i]), *(len(r[i]) for r in body)) for i in range(len(header))]
    lines = []
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def render_csv(layout_id: str, rows: List[dict]) -> str:
    header, body = table_cells(layout_id, rows)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(body)
    return out.getvalue()


def write_csv(layout_id: str, rows: List[dict], path) -> None:
    Path(path).write_text(render_csv(layout_id, rows))


def save_results(path, layout_id: str, rows: List[dict],
                 meta: Optional[dict] = None) -> None:
    _layout(layout_id)
    payload = {"layout": layout_id, "rows": rows}
    if meta:
        payload["meta"] = meta
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_results(path) -> dict:
    payload = json.loads(Path(path).read_text())
    if "layout" not in payload or "rows" not in payload:
        raise RenderError(f"{path} is not a results file (missing layout/rows)")
    _layout(payload["layout"])
    return payload
