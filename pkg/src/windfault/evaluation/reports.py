"""Report artifacts: metrics file, results table, ROC and confusion-matrix figures."""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from windfault.errors import InvalidArgument  # noqa: E402
from windfault.evaluation.report import EvalReport  # noqa: E402
from windfault.turbsim.params import FaultKind  # noqa: E402

plt.rcParams["svg.fonttype"] = "none"  # keep annotations as text in SVG output
plt.rcParams["svg.hashsalt"] = "windfault"

CLASS_NAMES = [k.name for k in FaultKind]
TABLE_COLUMNS = ("model", "uq", "accuracy", "precision", "recall", "f_score", "macro_auc",
                 "run_level_accuracy", "n_folds")


def _write(path: Path, writer):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        writer(path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def write_metrics(reports, path, config_hash=None) -> Path:
    """Deterministic metrics file: no timings, sorted keys."""
    doc = {"config_hash": config_hash, "reports": [r.to_dict() for r in reports]}
    text = json.dumps(doc, sort_keys=True, indent=1)
    return _write(Path(path), lambda p: p.write_text(text + "\n"))


def read_metrics(path):
    doc = json.loads(Path(path).read_text())
    return [EvalReport.from_dict(d) for d in doc["reports"]]


def table_rows(reports):
    rows = []
    for r in reports:
        agg = r.aggregate
        rows.append({"model": r.model_id, "uq": "yes" if r.uq else "no",
                     **{k: agg.get(k) for k in ("accuracy", "precision", "recall", "f_score",
                                                "macro_auc")},
                     "run_level_accuracy": r.run_level_accuracy,
                     "n_folds": agg.get("n_folds")})
    return rows


def _fmt(v):
    if v is None:
        return "n/a"
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def write_table(reports, out_dir) -> tuple[Path, Path]:
    rows = table_rows(reports)
    out_dir = Path(out_dir)

    def csv_writer(p):
        with p.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
            w.writeheader()
            w.writerows(rows)

    lines = ["| " + " | ".join(TABLE_COLUMNS) + " |", "|" + "---|" * len(TABLE_COLUMNS)]
    lines += ["| " + " | ".join(_fmt(row[c]) for c in TABLE_COLUMNS) + " |" for row in rows]
    return (_write(out_dir / "results.csv", csv_writer),
            _write(out_dir / "results.md", lambda p: p.write_text("\n".join(lines) + "\n")))


def plot_roc(report: EvalReport, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    for c, curve in enumerate(report.roc_curves):
        if curve is None:
            continue
        auc = report.per_class_auc[c]
        ax.plot(curve["fpr"], curve["tpr"], label=f"{CLASS_NAMES[c]} ({auc:.3f})")
    ax.plot([0, 1], [0, 1], "k:", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(f"ROC {report.name}")
    ax.legend(fontsize=7, loc="lower right")
    path = _write(Path(path), lambda p: fig.savefig(p, dpi=100))
    plt.close(fig)
    return path


def plot_confusion(report: EvalReport, stem) -> list[Path]:
    """Confusion matrix as PNG and SVG; every cell carries its count as text."""
    cm = np.asarray(report.confusion_matrix)
    fig, ax = plt.subplots(figsize=(6, 5.5))
    ax.imshow(cm, cmap="Blues")
    n = len(cm)
    for i in range(n):
        for j in range(n):
            ax.text(j, i, str(int(cm[i, j])), ha="center", va="center", fontsize=8,
                    color="white" if cm[i, j] > cm.max() / 2 else "black", gid=f"cell-{i}-{j}")
    ax.set_xticks(range(n), CLASS_NAMES[:n], rotation=60, ha="right", fontsize=7)
    ax.set_yticks(range(n), CLASS_NAMES[:n], fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"Confusion {report.name}")
    fig.tight_layout()
    stem = Path(stem)
    paths = [_write(stem.with_suffix(s), lambda p: fig.savefig(p, dpi=100, metadata=meta))
             for s, meta in ((".png", None), (".svg", {"Date": None}))]
    plt.close(fig)
    return paths


def parse_confusion_svg(path) -> np.ndarray:
    """Read the cell annotations back out of a confusion-matrix SVG."""
    import xml.etree.ElementTree as ET

    cells = {}
    for el in ET.parse(path).iter():
        gid = el.get("id", "")
        if gid.startswith("cell-"):
            _, i, j = gid.split("-")
            text = "".join(el.itertext()).strip()
            cells[(int(i), int(j))] = int(text)
    n = max(i for i, _ in cells) + 1
    out = np.zeros((n, n), dtype=int)
    for (i, j), v in cells.items():
        out[i, j] = v
    return out


def plot_embedding(embedding, labels, path, title="") -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    labels = np.asarray(labels)
    for c in np.unique(labels):
        m = labels == c
        ax.scatter(embedding[m, 0], embedding[m, 1], s=4, label=CLASS_NAMES[int(c)])
    ax.set_title(title)
    ax.legend(fontsize=6, markerscale=2)
    path = _write(Path(path), lambda p: fig.savefig(p, dpi=100))
    plt.close(fig)
    return path


def append_ledger(path, entry: dict) -> Path:
    entry = {"time": time.strftime("%Y-%m-%dT%H:%M:%S"), **entry}
    line = json.dumps(entry, sort_keys=True)

    def writer(p):
        with p.open("a") as fh:
            fh.write(line + "\n")
    return _write(Path(path), writer)


def render_reports(reports, out_dir, config_hash=None, dataset_hash=None, seeds=None,
                   figures=True) -> dict:
    """Write metrics.json, results table, per-report figures and a ledger line."""
    reports = list(reports)
    if not reports:
        raise InvalidArgument("render_reports needs at least one report")
    out_dir = Path(out_dir)
    written = {"metrics": write_metrics(reports, out_dir / "metrics.json", config_hash)}
    written["table"] = write_table(reports, out_dir)
    if figures:
        for r in reports:
            tag = r.name.replace("+", "-")
            written[f"roc:{r.name}"] = plot_roc(r, out_dir / "figures" / f"roc-{tag}.png")
            written[f"cm:{r.name}"] = plot_confusion(r, out_dir / "figures" / f"cm-{tag}")
    append_ledger(out_dir / "ledger.jsonl", {
        "config_hash": config_hash, "dataset_hash": dataset_hash, "seeds": seeds,
        "reports": {r.name: r.accuracy for r in reports},
        "runtime": {r.name: r.runtime for r in reports}})
    return written
