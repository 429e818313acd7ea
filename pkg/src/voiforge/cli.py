"""voiforge command line interface.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click

from .errors import ConfigError, DataError
from .grid import read_nrrd, write_nrrd
from .learn import ModelSpec, stratified_kfold, tune_hyperparams, fit_ensemble
from .perturb import apply_modification
from .phantom import PhantomSpec, generate_phantoms
from .pipeline import ExperimentConfig, run_experiment
from .radfeat import extract_all
from .radfeat.table import FeatureTable
from .reports import emit_reports
from .robust import feature_category, proportion_above, robustness_report
from .selection import SelectionConfig, select_best


def _guarded(fn):
    """Map package exceptions onto the documented exit codes."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except DataError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(3)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
def main():
    """Quantify how VOI delineation changes propagate through a radiomics pipeline."""


@main.command()
@click.option("--op", required=True, type=click.Choice(["dilate", "erode", "smooth", "randomize", "ellipsoid"]))
@click.option("--mm", type=click.Choice(["1", "2"]), default="1", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--dump-stl", "stl_path", type=click.Path(), default=None,
              help="also dump the intermediate surface mesh (mesh-based ops) as ASCII STL")
@_guarded
def perturb(op, mm, seed, in_path, out_path, stl_path):
    """Apply one VOI modification to a mask NRRD."""
    mod = {"dilate": f"dilate{mm}", "erode": f"erode{mm}", "smooth": f"smooth{mm}",
           "randomize": f"rand{mm}", "ellipsoid": "ellipsoid"}[op]
    mask = read_nrrd(in_path, as_mask=True)
    write_nrrd(apply_modification(mask, mod, seed=seed), out_path)
    click.echo(f"wrote {out_path} ({mod})")
    if stl_path:
        from .grid import resample_isotropic
        from .mesh import (
            RandomizeParams,
            ellipsoid_mesh,
            fit_ellipsoid,
            marching_cubes,
            perlin_randomize,
            save_stl,
            smooth_mesh,
        )

        iso = resample_isotropic(mask, float(min(mask.spacing)), mode="nearest")
        if op == "randomize":
            mesh = perlin_randomize(
                marching_cubes(iso), RandomizeParams(max_distance_mm=float(mm), seed=seed)
            )
        elif op == "ellipsoid":
            mesh = ellipsoid_mesh(fit_ellipsoid(smooth_mesh(marching_cubes(iso), 10, 0.5)))
        else:
            mesh = marching_cubes(iso)
        save_stl(mesh, stl_path)
        click.echo(f"wrote {stl_path}")


@main.command()
@click.option("--image", required=True, type=click.Path(exists=True))
@click.option("--mask", required=True, type=click.Path(exists=True))
@click.option("--bins", type=int, default=100, show_default=True)
@click.option("--subject-id", default=None, help="defaults to the mask file stem")
@click.option("--label", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@_guarded
def extract(image, mask, bins, subject_id, label, out_path):
    """Extract the 102 features from one image/mask pair into a feature CSV."""
    img = read_nrrd(image)
    msk = read_nrrd(mask, as_mask=True)
    features = extract_all(img, msk, bin_count=bins)
    sid = subject_id or Path(mask).stem
    table = FeatureTable.from_rows({sid: features}, {sid: label})
    table.to_csv(out_path)
    click.echo(f"wrote {out_path} (102 features)")


@main.command()
@click.option("--baseline", required=True, type=click.Path(exists=True))
@click.option("--modified", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--plot", "plot_path", type=click.Path(), default=None)
@click.option("--modification-id", default="modified", show_default=True)
@_guarded
def icc(baseline, modified, out_path, plot_path, modification_id):
    """Per-feature ICC between two feature CSVs sharing subjects."""
    base = FeatureTable.from_csv(baseline)
    mod = FeatureTable.from_csv(modified)
    report = robustness_report(base, mod, modification_id)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["feature_name", "category", "icc", "flag"])
        for name, value, flag in zip(report.feature_names, report.values, report.flags):
            writer.writerow([name, feature_category(name), repr(float(value)), flag])
    summary = {g: proportion_above(report, 0.9, g) for g in ("all", "shape", "firstorder", "texture")}
    click.echo(f"wrote {out_path}; % ICC>0.9: " + ", ".join(f"{g}={v:.0f}" for g, v in summary.items()))
    if plot_path:
        from .reports import _icc_figure

        results = {
            "feature_names": report.feature_names,
            "robustness": {
                modification_id: {
                    "icc": {
                        n: (None if v != v else float(v))
                        for n, v in zip(report.feature_names, report.values)
                    }
                }
            },
        }
        Path(plot_path).write_bytes(_icc_figure(results, modification_id))
        click.echo(f"wrote {plot_path}")


@main.command()
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON with SelectionConfig fields")
@click.option("--out", "out_path", required=True, type=click.Path())
@_guarded
def select(features_path, config_path, out_path):
    """Two-stage feature selection over a feature CSV (training split)."""
    table = FeatureTable.from_csv(features_path)
    kwargs = {}
    if config_path:
        try:
            kwargs = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad selection config: {exc}") from exc
        if "stage2_methods" in kwargs:
            kwargs["stage2_methods"] = tuple(kwargs["stage2_methods"])
        if "lasso_grid" in kwargs:
            kwargs["lasso_grid"] = tuple(kwargs["lasso_grid"])
    cfg = SelectionConfig(**kwargs)
    result = select_best(
        table.matrix, table.labels, table.feature_names, cfg,
        [ModelSpec(kind="lr"), ModelSpec(kind="lda")],
    )
    record = {
        "f_A": result.f_A,
        "f_B": result.f_B,
        "f_C": result.f_C,
        "method": result.method_name,
        "classifier": result.classifier_name,
        "cv_auc": result.cv_auc,
        "per_method_scores": [
            {"method": e.method, "classifier": e.classifier, "cv_auc": e.cv_auc,
             "n_features": len(e.features), "flag": e.flag}
            for e in result.grid
        ],
        "top3": [
            {"method": e.method, "classifier": e.classifier, "cv_auc": e.cv_auc,
             "features": e.features, "flag": e.flag}
            for e in result.top3
        ],
        "r_c": result.r_c,
        "seed": result.seed,
        "flags": result.flags,
    }
    Path(out_path).write_text(json.dumps(record, indent=2) + "\n")
    click.echo(f"wrote {out_path}: {result.method_name}/{result.classifier_name} "
               f"cv_auc={result.cv_auc:.3f} n={len(result.f_C)}")


@main.command()
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--selection", "selection_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_kind", type=click.Choice(["lr", "lda"]), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--budget", type=int, default=50, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@_guarded
def train(features_path, selection_path, model_kind, seed, budget, out_path):
    """Tune and fit the k-fold ensemble on the selected features."""
    table = FeatureTable.from_csv(features_path)
    try:
        selection = json.loads(Path(selection_path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad selection file: {exc}") from exc
    features = selection["f_C"]
    sub = table.select_features(features)
    folds = stratified_kfold(sub.labels, k=5, seed=seed)
    tuned = tune_hyperparams(sub.matrix, sub.labels, model_kind, folds, budget=budget, seed=seed)
    spec = ModelSpec(kind=model_kind, **tuned["params"])
    ensemble, report = fit_ensemble(sub.matrix, sub.labels, features, spec, folds, seed=seed)
    record = {
        "kind": model_kind,
        "hyperparams": tuned["params"],
        "feature_names": features,
        "seed": seed,
        "cv_auc": tuned["cv_auc"],
        "train_eval": report.as_dict(),
        "models": [
            {
                "weights": [repr(float(w)) for w in m.weights],
                "intercept": repr(float(m.intercept)),
                "fold_mean": [repr(float(v)) for v in stats[0]],
                "fold_std": [repr(float(v)) for v in stats[1]],
            }
            for m, stats in zip(ensemble.models, ensemble.fold_stats)
        ],
    }
    Path(out_path).write_text(json.dumps(record, indent=2) + "\n")
    click.echo(f"wrote {out_path}: CV AUC {report.auc_mean:.3f} +- {report.auc_std:.3f}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@_guarded
def run(config_path):
    """Run the configured end-to-end experiment and emit all reports."""
    config = ExperimentConfig.from_json(config_path)
    results = run_experiment(config)
    written = emit_reports(results, config.output_dir)
    click.echo(f"wrote {len(written)} report files to {config.output_dir}")


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@_guarded
def phantom(spec_path, out_dir):
    """Generate a synthetic phantom cohort (NRRD files + manifest.csv)."""
    try:
        payload = json.loads(Path(spec_path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad phantom spec: {exc}") from exc
    try:
        spec = PhantomSpec(**payload)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    manifest = generate_phantoms(spec, out_dir)
    click.echo(f"wrote cohort manifest {manifest}")


if __name__ == "__main__":
    main()
