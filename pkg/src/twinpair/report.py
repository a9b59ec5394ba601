"""Trace reports: a text summary plus optional figures.

The summary is plain text: run span, numeric column ranges, and the mode
and source timelines as step segments.  Figures are rendered next to the
trace file (same name, .png and .state.png) with the Agg backend, so this
works on headless boxes.  matplotlib is imported lazily; everything except
figure rendering runs without it.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Tuple

from .trace import read_trace

_NUMERIC = [
    "pt_target_velocity",
    "pt_target_acceleration",
    "dt_target_velocity",
    "dt_target_acceleration",
    "pt_velocity",
    "heartbeat",
]

_MODE_COLORS = {
    "dt_synced": "#4c72b0",
    "local_fallback": "#dd8452",
    "safe_mode": "#c44e52",
}
_SOURCE_COLORS = {
    "dt_augmented": "#4c72b0",
    "dt_replica": "#64b5cd",
    "pt_main": "#55a868",
    "pt_fallback": "#dd8452",
    "safe_stop": "#c44e52",
}


def segments(rows: List[Dict[str, object]], column: str) -> List[Tuple[int, int, str]]:
    """Collapse a categorical column into (first_step, last_step, value) runs."""
    out: List[Tuple[int, int, str]] = []
    for row in rows:
        value = str(row[column])
        step = int(row["step"])
        if out and out[-1][2] == value and out[-1][1] == step - 1:
            out[-1] = (out[-1][0], step, value)
        else:
            out.append((step, step, value))
    return out


def render_report(trace_path: str, *, figures: bool = True) -> str:
    rows = read_trace(trace_path)
    lines = [f"trace: {trace_path}"]
    if not rows:
        lines.append("empty trace")
        return "\n".join(lines)
    lines.append(
        f"steps: {rows[0]['step']}..{rows[-1]['step']} "
        f"({len(rows)} rows, {rows[0]['time']} to {rows[-1]['time']})"
    )
    lines.append("column ranges:")
    for column in _NUMERIC:
        values = [row[column] for row in rows]
        lines.append(f"  {column}: min={min(values)} max={max(values)}")
    for column in ("twin_mode", "acc_source"):
        lines.append(f"{column} timeline:")
        for start, stop, value in segments(rows, column):
            lines.append(f"  [{start:>5}..{stop:>5}] {value}")
    if figures:
        signal_png, state_png = _render_figures(rows, trace_path)
        lines.append(f"figures: {signal_png}, {state_png}")
    return "\n".join(lines)


def _render_figures(rows: List[Dict[str, object]], trace_path: str) -> Tuple[str, str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Patch

    steps = [row["step"] for row in rows]
    base = Path(trace_path)
    signal_png = str(base.with_suffix(".png"))
    state_png = str(base.with_suffix(".state.png"))

    fig, (ax_hb, ax_acc, ax_vel) = plt.subplots(
        3, 1, sharex=True, figsize=(10, 8), constrained_layout=True
    )
    ax_hb.plot(steps, [row["heartbeat"] for row in rows], color="#55a868")
    ax_hb.set_ylabel("heartbeat counter")
    ax_acc.plot(
        steps,
        [row["pt_target_acceleration"] for row in rows],
        color="#4c72b0",
        label="applied",
    )
    ax_acc.plot(
        steps,
        [row["dt_target_acceleration"] for row in rows],
        color="#dd8452",
        linestyle="--",
        label="digital twin",
    )
    ax_acc.set_ylabel("target accel (m/s^2)")
    ax_acc.legend(loc="upper right", fontsize="small")
    ax_vel.plot(
        steps, [row["pt_velocity"] for row in rows], color="#2d2d2d", label="velocity"
    )
    ax_vel.plot(
        steps,
        [row["pt_target_velocity"] for row in rows],
        color="#4c72b0",
        label="applied target",
    )
    ax_vel.plot(
        steps,
        [row["dt_target_velocity"] for row in rows],
        color="#dd8452",
        linestyle="--",
        label="digital twin target",
    )
    ax_vel.set_ylabel("velocity (m/s)")
    ax_vel.set_xlabel("step")
    ax_vel.legend(loc="upper right", fontsize="small")
    for start, _stop, value in segments(rows, "twin_mode")[1:]:
        for ax in (ax_hb, ax_acc, ax_vel):
            ax.axvline(start, color="#888888", linestyle=":", linewidth=1)
    fig.suptitle(Path(trace_path).name)
    fig.savefig(signal_png, dpi=110)
    plt.close(fig)

    fig2, ax = plt.subplots(figsize=(10, 2.4), constrained_layout=True)
    for y, (column, colors) in enumerate(
        (("twin_mode", _MODE_COLORS), ("acc_source", _SOURCE_COLORS))
    ):
        for start, stop, value in segments(rows, column):
            ax.broken_barh(
                [(start, stop - start + 1)],
                (y * 1.2, 1.0),
                facecolor=colors.get(value, "#aaaaaa"),
            )
    ax.set_yticks([0.5, 1.7])
    ax.set_yticklabels(["twin_mode", "acc_source"])
    ax.set_xlabel("step")
    ax.set_xlim(steps[0], steps[-1] + 1)
    legend = [
        Patch(facecolor=color, label=name)
        for name, color in {**_MODE_COLORS, **_SOURCE_COLORS}.items()
    ]
    ax.legend(handles=legend, loc="upper center", ncol=4, fontsize="x-small",
              bbox_to_anchor=(0.5, -0.35))
    fig2.savefig(state_png, dpi=110)
    plt.close(fig2)
    return signal_png, state_png
