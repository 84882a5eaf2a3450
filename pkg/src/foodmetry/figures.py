"""Chart rendering for evaluation reports.

Figures are written as PNG files next to the report. Matplotlib runs on
the Agg backend so this works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_DIFFICULTY_COLORS = {"easy": "#4c9f70", "medium": "#e9a23b", "hard": "#c8553d"}


def _scored_rows(report: dict, key: str) -> list[dict]:
    return [
        row for row in report.get("per_object", [])
        if row.get(key) is not None and not row.get("error")
    ]


def render_report_figures(report: dict, out_dir) -> list[Path]:
    """Render every applicable chart; returns the paths written."""
    out_dir = Path(out_dir)
    written: list[Path] = []

    rows = _scored_rows(report, "ape_pct")
    if rows:
        path = out_dir / "volume_error.png"
        _volume_error_chart(rows, report, path)
        written.append(path)

    rows = _scored_rows(report, "chamfer_final")
    if rows:
        path = out_dir / "chamfer.png"
        _chamfer_chart(rows, path)
        written.append(path)
    return written


def _volume_error_chart(rows: list[dict], report: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = [f"{r['id']}" for r in rows]
    values = [r["ape_pct"] for r in rows]
    colors = [_DIFFICULTY_COLORS.get(r.get("difficulty"), "#777777") for r in rows]
    hatched = [bool(r.get("excluded")) for r in rows]

    fig, ax = plt.subplots(figsize=(max(6, 0.45 * len(rows)), 4))
    bars = ax.bar(range(len(rows)), values, color=colors)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels)
    for bar, excluded in zip(bars, hatched):
        if excluded:
            bar.set_hatch("//")
            bar.set_alpha(0.45)
    mape = (report.get("aggregate") or {}).get("mape_pct")
    if mape is not None:
        ax.axhline(mape, color="black", linestyle="--", linewidth=1,
                   label=f"MAPE {mape:.2f}%")
        ax.legend(fontsize=9)
    ax.set_xlabel("object id")
    ax.set_ylabel("absolute volume error (%)")
    ax.set_title("Per-object volume error")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _chamfer_chart(rows: list[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = [f"{r['id']}" for r in rows]
    before = [r.get("chamfer_before") for r in rows]
    final = [r["chamfer_final"] for r in rows]

    fig, ax = plt.subplots(figsize=(max(6, 0.55 * len(rows)), 4))
    x = range(len(rows))
    width = 0.4
    if any(b is not None for b in before):
        ax.bar([i - width / 2 for i in x], [b or 0.0 for b in before], width,
               label="before alignment", color="#9db4c0")
        ax.bar([i + width / 2 for i in x], final, width,
               label="after alignment", color="#2a6f97")
    else:
        ax.bar(list(x), final, width, label="after alignment", color="#2a6f97")
    positive = [v for v in final + [b for b in before if b] if v and v > 0]
    if positive and max(positive) / max(min(positive), 1e-300) > 100:
        ax.set_yscale("log")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels)
    ax.set_xlabel("object id")
    ax.set_ylabel("Chamfer distance (m²)")
    ax.set_title("Per-object Chamfer distance")
    ax.legend(fontsize=9)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
