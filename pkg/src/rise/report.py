"""Dual-format run reports: machine-readable JSON lines plus an aligned
text table, with matplotlib figures rendered alongside.

A report file starts with the run manifest record, carries one record per
result row, and ends with summary records. The sibling .txt file holds the
human-readable table and the sibling .png the rendered figure.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import FormatError, IoError


def report_paths(path) -> dict[str, Path]:
    """Machine/text/figure paths derived from the report path."""
    base = Path(path)
    if base.suffix == "":
        base = base.with_suffix(".jsonl")
    return {"machine": base,
            "text": base.with_suffix(".txt"),
            "figure": base.with_suffix(".png")}


def write_report(path, manifest: dict, rows: list[dict], summary: list[dict],
                 text_table: str, figure_fn=None) -> dict[str, Path]:
    """Write the machine report, the text table, and (optionally) a figure.

    figure_fn, when given, is called with the figure path and must render it.
    Returns the mapping of emitted paths.
    """
    paths = report_paths(path)
    paths["machine"].parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"kind": "manifest", **manifest}, sort_keys=True, allow_nan=False)]
    for r in rows:
        lines.append(json.dumps({"kind": "result", **r}, sort_keys=True, allow_nan=False))
    for s in summary:
        lines.append(json.dumps({"kind": "summary", **s}, sort_keys=True, allow_nan=False))
    try:
        paths["machine"].write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths["text"].write_text(text_table, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write report to {path}: {exc}") from exc
    if figure_fn is not None:
        figure_fn(paths["figure"])
    return paths


def read_report(path) -> dict:
    """Parse a machine report back into {'manifest', 'rows', 'summary'}."""
    p = report_paths(path)["machine"]
    if not p.exists():
        raise IoError(f"report file not found: {p}")
    out = {"manifest": None, "rows": [], "summary": []}
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{p}: line {lineno}: invalid JSON ({exc.msg})") from exc
        kind = rec.pop("kind", None)
        if kind == "manifest":
            out["manifest"] = rec
        elif kind == "result":
            out["rows"].append(rec)
        elif kind == "summary":
            out["summary"].append(rec)
        else:
            raise FormatError(f"{p}: line {lineno}: unknown record kind {kind!r}")
    return out


def align_table(headers: list[str], rows: list[list]) -> str:
    """Plain-text table with columns padded to their widest cell."""
    cells = [[str(h) for h in headers]]
    for row in rows:
        cells.append([f"{v:.4f}" if isinstance(v, float) else str(v) for v in row])
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def sweep_text_table(rows: list[dict], summary: list[dict]) -> str:
    """Human-readable rendering of sweep rows plus per-variant means."""
    body = align_table(
        ["variant", "target_domain", "seed", "accuracy", "selected_epoch"],
        [[r["variant"], r["target_domain"], r["seed"], r["accuracy"],
          "-" if r.get("selected_epoch") is None else r["selected_epoch"]]
         for r in rows])
    mean_rows = [[s["variant"], s["mean_accuracy"], s["runs"]]
                 for s in summary if s.get("summary") == "variant"]
    means = align_table(["variant", "mean_accuracy", "runs"], mean_rows)
    return body + "\nper-variant means\n" + means
