"""Report emission: CSV tables, a master JSON record, and SVG figures.

All files are rendered purely from the results dict, so re-ingesting the
master JSON re-emits byte-identical CSVs/SVGs. SVG output is made
deterministic by pinning the hash salt and dropping date metadata.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "voiforge"

import matplotlib.pyplot as plt

from .errors import DataError
from .robust import feature_category

_EVAL_COLS = ("auc_mean", "se_mean", "sp_mean")


def _fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue().encode()


def _selection_table(results) -> bytes:
    header = [
        "fs_algorithm",
        "classifier",
        "cv_AUC",
        "train_AUC",
        "train_SE",
        "train_SP",
        "test_AUC",
        "test_SE",
        "test_SP",
        "n_features",
        "features",
    ]
    rows = []
    for entry in results["baseline"]["top3"]:
        rows.append(
            [
                entry["method"],
                entry["classifier"],
                entry["cv_auc"],
                entry["train"]["auc_mean"],
                entry["train"]["se_mean"],
                entry["train"]["sp_mean"],
                entry["test"]["auc_mean"],
                entry["test"]["se_mean"],
                entry["test"]["sp_mean"],
                entry["n_features"],
                ";".join(entry["features"]),
            ]
        )
    return _csv_bytes(header, rows)


def _robustness_table(results) -> bytes:
    mods = list(results["robustness"])
    header = ["feature_group", *mods]
    rows = []
    for group in ("all", "shape", "firstorder", "texture"):
        row = [group]
        for mod in mods:
            pct = results["robustness"][mod]["proportions_above_0.9"][group]
            row.append(int(round(pct)))
        rows.append(row)
    return _csv_bytes(header, rows)


def _icc_values_table(results) -> bytes:
    header = ["modification", "feature_name", "category", "icc", "flag"]
    rows = []
    for mod, payload in results["robustness"].items():
        for name in results["feature_names"]:
            value = payload["icc"][name]
            flag = "" if value is not None else "zero_between_subject_variance"
            rows.append([mod, name, feature_category(name), value, flag])
    return _csv_bytes(header, rows)


def _scenario_table(scenario: dict, include_fc: bool) -> bytes:
    header = [
        "fs_algorithm",
        "classifier",
        "modification",
        "train_AUC",
        "train_SE",
        "train_SP",
        "test_AUC",
        "test_SE",
        "test_SP",
        "train_delta",
        "test_delta",
        "avg_icc",
    ]
    if include_fc:
        header += ["n_features", "n_common", "f_c_pct", "features"]
    rows = []
    for row in [scenario["baseline_row"], *scenario["rows"]]:
        record = [
            row["method"],
            row["classifier"],
            row["label"],
            row["train"]["auc_mean"],
            row["train"]["se_mean"],
            row["train"]["sp_mean"],
            row["test"]["auc_mean"],
            row["test"]["se_mean"],
            row["test"]["sp_mean"],
            row["train_delta"],
            row["test_delta"],
            row["avg_icc"],
        ]
        if include_fc:
            record += [
                row["n_features"],
                row.get("n_common"),
                row.get("f_c_pct"),
                ";".join(row["features"]),
            ]
        rows.append(record)
    return _csv_bytes(header, rows)


def _svg_bytes(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def _icc_figure(results, mod: str) -> bytes:
    names = results["feature_names"]
    values = [results["robustness"][mod]["icc"][n] for n in names]
    xs = list(range(len(names)))
    ys = [0.0 if v is None else v for v in values]
    colors = {"shape": "#4c72b0", "firstorder": "#dd8452", "texture": "#55a868"}
    bar_colors = [colors[feature_category(n)] for n in names]
    fig, ax = plt.subplots(figsize=(14, 4))
    ax.bar(xs, ys, color=bar_colors, width=1.0)
    ax.axhline(0.9, color="black", linewidth=0.8, linestyle="--")
    ax.set_ylim(-1.0, 1.05)
    ax.set_xlim(-1, len(names))
    ax.set_xticks([])
    ax.set_ylabel("ICC")
    ax.set_title(f"Per-feature ICC, modification: {mod}")
    fig.tight_layout()
    return _svg_bytes(fig)


def _common_features_figure(results) -> bytes:
    scenario = results["scenarios"]["reselect"]
    baseline_feats = scenario["baseline_row"]["features"]
    mods = [row["label"] for row in scenario["rows"]]
    all_feats = sorted(
        set(baseline_feats).union(*[set(r["features"]) for r in scenario["rows"]])
    )
    grid = []
    for row in [scenario["baseline_row"], *scenario["rows"]]:
        grid.append([1 if f in set(row["features"]) else 0 for f in all_feats])
    fig, ax = plt.subplots(figsize=(max(6, len(all_feats) * 0.35), max(3, len(grid) * 0.4)))
    ax.imshow(grid, cmap="Greys", aspect="auto", vmin=0, vmax=1)
    ax.set_yticks(range(len(grid)))
    ax.set_yticklabels(["none", *mods])
    ax.set_xticks(range(len(all_feats)))
    ax.set_xticklabels(all_feats, rotation=90, fontsize=6)
    ax.set_title("Selected features per VOI modification")
    fig.tight_layout()
    return _svg_bytes(fig)


def render_reports(results: dict) -> dict[str, bytes]:
    """Render every report file into memory; raises before anything is written."""
    if not results or "baseline" not in results:
        raise DataError("empty results: nothing to report")
    files: dict[str, bytes] = {}
    files["master.json"] = (json.dumps(results, indent=2, allow_nan=False) + "\n").encode()
    files["table_selection.csv"] = _selection_table(results)
    if results.get("robustness"):
        files["table_robustness.csv"] = _robustness_table(results)
        files["icc_values.csv"] = _icc_values_table(results)
    scenarios = results.get("scenarios", {})
    if "fixed_model" in scenarios:
        files["table_fixed_model.csv"] = _scenario_table(scenarios["fixed_model"], include_fc=False)
    if "reselect" in scenarios:
        files["table_reselect.csv"] = _scenario_table(scenarios["reselect"], include_fc=True)
    if results.get("config", {}).get("emit_plots", True):
        for mod in results.get("robustness", {}):
            files[f"icc_{mod}.svg"] = _icc_figure(results, mod)
        if "reselect" in scenarios:
            files["common_features.svg"] = _common_features_figure(results)
    return files


def emit_reports(results: dict, out_dir) -> list[Path]:
    """Write all report files; all-or-nothing (rendering happens up front)."""
    files = render_reports(results)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in sorted(files):
        path = out / name
        path.write_bytes(files[name])
        written.append(path)
    return written


def reemit_from_json(master_json_path, out_dir) -> list[Path]:
    """Reload a master record and regenerate every report byte-for-byte."""
    results = json.loads(Path(master_json_path).read_text())
    return emit_reports(results, out_dir)
