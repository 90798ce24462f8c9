"""Standalone SVG plots written without a plotting library."""

import os
from collections import defaultdict
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]
W, H = 640, 400
PAD = 56


class _Axes:
    def __init__(self, xlim, ylim):
        x0, x1 = xlim
        y0, y1 = ylim
        if x1 == x0:
            x1 = x0 + 1
        if y1 == y0:
            y0, y1 = y0 - 1, y1 + 1
        self.xlim, self.ylim = (x0, x1), (y0, y1)

    def x(self, v):
        x0, x1 = self.xlim
        return PAD + (v - x0) / (x1 - x0) * (W - 2 * PAD)

    def y(self, v):
        y0, y1 = self.ylim
        return H - PAD - (v - y0) / (y1 - y0) * (H - 2 * PAD)


def _frame(ax, title, xlabel, ylabel):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<text x="{W / 2}" y="{H - 14}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{H / 2}" text-anchor="middle" transform="rotate(-90 16 {H / 2})">{escape(ylabel)}</text>',
    ]
    for v in np.linspace(*ax.ylim, 5):
        parts.append(f'<text x="{PAD - 6}" y="{ax.y(v) + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    for v in np.linspace(*ax.xlim, 5):
        parts.append(f'<text x="{ax.x(v):.1f}" y="{H - PAD + 16}" text-anchor="middle">{v:.3g}</text>')
    return parts


def _legend(parts, labels):
    for i, label in enumerate(labels):
        y = PAD + 14 * i
        color = PALETTE[i % len(PALETTE)]
        parts.append(f'<rect x="{W - PAD - 110}" y="{y - 9}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{W - PAD - 95}" y="{y}">{escape(str(label))}</text>')


def line_plot(series, title, xlabel, ylabel, vlines=(), bands=None):
    """``series``: {label: (x, y)}; optional ``bands``: {label: std array}."""
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()]) if series else np.array([0.0])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()]) if series else np.array([0.0])
    ys = ys[np.isfinite(ys)] if np.isfinite(ys).any() else np.array([0.0])
    lo, hi = ys.min(), ys.max()
    if bands:
        spread = max((float(np.nanmax(b)) for b in bands.values()), default=0.0)
        lo, hi = lo - spread, hi + spread
    ax = _Axes((xs.min(), xs.max()), (lo, hi))
    parts = _frame(ax, title, xlabel, ylabel)
    for c in vlines:
        parts.append(f'<line x1="{ax.x(c):.1f}" y1="{PAD}" x2="{ax.x(c):.1f}" y2="{H - PAD}" '
                     'stroke="gray" stroke-dasharray="4,4"/>')
    for i, (label, (x, y)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        x, y = np.asarray(x, float), np.asarray(y, float)
        if bands and label in bands:
            s = np.asarray(bands[label], float)
            upper = " ".join(f"{ax.x(a):.1f},{ax.y(b):.1f}" for a, b in zip(x, y + s))
            lower = " ".join(f"{ax.x(a):.1f},{ax.y(b):.1f}" for a, b in zip(x[::-1], (y - s)[::-1]))
            parts.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.15"/>')
        pts = " ".join(f"{ax.x(a):.1f},{ax.y(b):.1f}" for a, b in zip(x, y))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"/>')
    _legend(parts, list(series))
    parts.append("</svg>")
    return "\n".join(parts)


def bar_plot(values, errors, title, ylabel):
    labels = list(values)
    top = max([values[k] + errors.get(k, 0) for k in labels] + [1.0])
    ax = _Axes((0, max(len(labels), 1)), (0, top))
    parts = _frame(ax, title, "", ylabel)
    width = (W - 2 * PAD) / max(len(labels), 1)
    for i, k in enumerate(labels):
        color = PALETTE[i % len(PALETTE)]
        x = PAD + i * width + 0.15 * width
        y = ax.y(values[k])
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{0.7 * width:.1f}" '
                     f'height="{H - PAD - y:.1f}" fill="{color}"/>')
        e = errors.get(k, 0.0)
        cx = x + 0.35 * width
        parts.append(f'<line x1="{cx:.1f}" y1="{ax.y(values[k] + e):.1f}" x2="{cx:.1f}" '
                     f'y2="{ax.y(max(values[k] - e, 0)):.1f}" stroke="black"/>')
        parts.append(f'<text x="{cx:.1f}" y="{H - PAD + 30}" text-anchor="middle">{escape(k)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def write_suite_plots(results, rows, out_dir):
    """Reward curves per env, F1 bars per env, and a delta-vs-magnitude curve."""
    written = []
    by_env = defaultdict(lambda: defaultdict(list))
    for cfg, reports in results:
        by_env[cfg.env][cfg.method].append((cfg, reports))

    for env, methods in sorted(by_env.items()):
        series, bands, vlines = {}, {}, set()
        for method, runs in sorted(methods.items()):
            n = min(len(r) for _, r in runs)
            curves = np.array([[rep.mean_reward for rep in r[:n]] for _, r in runs])
            series[method] = (np.arange(n), curves.mean(axis=0))
            bands[method] = curves.std(axis=0)
            for cfg, _ in runs:
                vlines.update(cfg.change_epochs)
        path = os.path.join(out_dir, f"rewards_{env}.svg")
        _write(path, line_plot(series, f"Mean episode reward: {env}", "epoch", "reward",
                               sorted(vlines), bands))
        written.append(path)

    f1s = defaultdict(lambda: defaultdict(list))
    for row in rows:
        f1s[row["env"]][row["method"]].append(row["f1"])
    for env, methods in sorted(f1s.items()):
        values = {m: float(np.mean(v)) for m, v in sorted(methods.items())}
        errors = {m: float(np.std(v)) for m, v in sorted(methods.items())}
        path = os.path.join(out_dir, f"f1_{env}.svg")
        _write(path, bar_plot(values, errors, f"Detection F1: {env}", "F1"))
        written.append(path)

    sweep = defaultdict(list)
    for cfg, reports in results:
        if cfg.magnitude is not None and cfg.method == "bada":
            deltas = [r.delta for r in reports if r.detected]
            if deltas:
                sweep[cfg.magnitude].append(deltas[0])
    if len(sweep) >= 2:
        mags = sorted(sweep)
        means = [float(np.mean(sweep[m])) for m in mags]
        path = os.path.join(out_dir, "delta_sweep.svg")
        _write(path, line_plot({"delta at detection": (mags, means)},
                               "Adaptation strength vs change magnitude", "magnitude", "delta"))
        written.append(path)
    return written
