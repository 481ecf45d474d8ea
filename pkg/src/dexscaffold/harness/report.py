"""Report tables and figures from finished run directories."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..env.episode import CATEGORIES  # noqa: E402

REPORT_VERSION = 1
REPORT_DIR = "report"
CURVE_COLUMNS = ("run", "iteration", "success_rate", "eval_success", "mean_reward", "delta")
FLOW_COLUMNS = ("run", "source", "target", "count")
METHOD_COLUMNS = ("run", "method", "seeds", "success_mean", "success_sem")
ABLATION_COLUMNS = ("run", "n_waypoints", "seeds", "success_mean", "success_sem")
FEWSHOT_COLUMNS = ("run", "iteration", "examples", "success_rate", "validator_pass_rate")
INPUTS = ("metrics.csv", "failure_report.json", "methods.csv", "ablation.csv", "fewshot.csv")
_PNG_META = {"Software": None}


class MissingMetrics(FileNotFoundError):
    pass


def read_table(path) -> list[dict[str, str]]:
    """Rows of a versioned CSV (``#`` lines skipped)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _write(path: Path, columns, rows) -> Path:
    with open(path, "w", newline="") as fh:
        fh.write(f"# report v{REPORT_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([r.get(c, "") for c in columns])
    return path


def _find(root: Path, name: str) -> list[Path]:
    return sorted(p for p in root.rglob(name) if REPORT_DIR not in p.relative_to(root).parts)


def _label(root: Path, path: Path) -> str:
    rel = path.parent.relative_to(root).as_posix()
    return "." if rel in ("", ".") else rel


def _num(v: str) -> float:
    return float(v) if v not in ("", None) else float("nan")


def _save(fig, path: Path) -> None:
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def training_curves(root: Path, out: Path) -> list[Path]:
    files = _find(root, "metrics.csv")
    if not files:
        return []
    rows = []
    fig, ax = plt.subplots(figsize=(6, 4))
    for f in files:
        label = _label(root, f)
        data = read_table(f)
        for d in data:
            rows.append({"run": label, **{c: d.get(c, "") for c in CURVE_COLUMNS[1:]}})
        it = [int(d["iteration"]) for d in data]
        ax.plot(it, [_num(d["success_rate"]) for d in data], lw=0.8, label=f"{label} rollout")
        ev = [(int(d["iteration"]), _num(d["eval_success"])) for d in data if d.get("eval_success")]
        if ev:
            ax.plot(*zip(*ev), "o-", ms=3, label=f"{label} greedy")
    ax.set_xlabel("PPO iteration")
    ax.set_ylabel("success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=6)
    fig.tight_layout()
    _save(fig, out / "training_curves.png")
    return [_write(out / "training_curves.csv", CURVE_COLUMNS, rows), out / "training_curves.png"]


def failure_flows(root: Path, out: Path) -> list[Path]:
    """Sankey links: episodes split into success and failure, failures into categories."""
    files = _find(root, "failure_report.json")
    if not files:
        return []
    rows, bars = [], []
    for f in files:
        label = _label(root, f)
        rep = json.loads(f.read_text())
        counts = rep["counts"]
        fail = sum(counts[c] for c in CATEGORIES if c != "success")
        rows.append({"run": label, "source": "episodes", "target": "success",
                     "count": counts["success"]})
        rows.append({"run": label, "source": "episodes", "target": "failure", "count": fail})
        for c in CATEGORIES[:-1]:
            rows.append({"run": label, "source": "failure", "target": c, "count": counts[c]})
        rows.append({"run": label, "source": "success", "target": "early-terminated",
                     "count": rep.get("early_success", 0)})
        bars.append((label, [rep["percentages"][c] for c in CATEGORIES]))
    fig, ax = plt.subplots(figsize=(6, 1.0 + 0.4 * len(bars)))
    left = [0.0] * len(bars)
    for j, c in enumerate(CATEGORIES):
        vals = [b[1][j] for b in bars]
        ax.barh([b[0] for b in bars], vals, left=left, label=c)
        left = [a + v for a, v in zip(left, vals)]
    ax.set_xlabel("% of episodes")
    ax.set_xlim(0, 100)
    ax.legend(fontsize=6, loc="lower right")
    fig.tight_layout()
    _save(fig, out / "failure_modes.png")
    return [_write(out / "failure_modes.csv", FLOW_COLUMNS, rows), out / "failure_modes.png"]


def _bars(root: Path, out: Path, name: str, key: str, columns, stem: str, xlabel: str,
          line: bool) -> list[Path]:
    files = _find(root, name)
    if not files:
        return []
    rows = []
    fig, ax = plt.subplots(figsize=(6, 4))
    for f in files:
        label = _label(root, f)
        data = read_table(f)
        for d in data:
            rows.append({"run": label, **{c: d.get(c, "") for c in columns[1:]}})
        x = [d[key] for d in data]
        y = [_num(d["success_mean"]) for d in data]
        err = [_num(d["success_sem"]) for d in data]
        if line:
            ax.errorbar([int(v) for v in x], y, yerr=err, marker="o", capsize=3, label=label)
            ax.set_xscale("log")
        else:
            ax.bar(x, y, yerr=err, capsize=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("success rate")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=6)
    fig.tight_layout()
    _save(fig, out / f"{stem}.png")
    return [_write(out / f"{stem}.csv", columns, rows), out / f"{stem}.png"]


def fewshot_curves(root: Path, out: Path) -> list[Path]:
    files = _find(root, "fewshot.csv")
    if not files:
        return []
    rows = []
    fig, ax = plt.subplots(figsize=(6, 4))
    for f in files:
        label = _label(root, f)
        data = read_table(f)
        for d in data:
            rows.append({"run": label, **{c: d.get(c, "") for c in FEWSHOT_COLUMNS[1:]}})
        it = [int(d["iteration"]) for d in data]
        ax.plot(it, [_num(d["success_rate"]) for d in data], "o-", label=f"{label} success")
        ax.plot(it, [_num(d["validator_pass_rate"]) for d in data], "s--",
                label=f"{label} validator pass")
    ax.set_xlabel("few-shot iteration")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=6)
    fig.tight_layout()
    _save(fig, out / "fewshot.png")
    return [_write(out / "fewshot_report.csv", FEWSHOT_COLUMNS, rows), out / "fewshot.png"]


def report(run_dir, out_dir=None) -> list[Path]:
    """Write CSV tables and PNG figures for every metrics file under ``run_dir``.

    Outputs go to ``run_dir/report`` by default and depend only on the input
    files, so regenerating them gives identical bytes.
    """
    root = Path(run_dir)
    if not root.is_dir():
        raise MissingMetrics(f"{root} is not a directory")
    if not any(_find(root, n) for n in INPUTS):
        raise MissingMetrics(f"no metrics, evaluation or experiment tables under {root}")
    out = Path(out_dir) if out_dir is not None else root / REPORT_DIR
    out.mkdir(parents=True, exist_ok=True)
    written = []
    written += training_curves(root, out)
    written += failure_flows(root, out)
    written += _bars(root, out, "methods.csv", "method", METHOD_COLUMNS, "method_success",
                     "method", line=False)
    written += _bars(root, out, "ablation.csv", "n_waypoints", ABLATION_COLUMNS,
                     "waypoint_ablation", "waypoints n", line=True)
    written += fewshot_curves(root, out)
    return written


__all__ = ["report", "MissingMetrics", "read_table", "REPORT_VERSION"]
