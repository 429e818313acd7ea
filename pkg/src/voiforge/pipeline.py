"""End-to-end experiment orchestration.

Baseline: preprocess (isotropic resample, z-score, largest lesion), extract the
102 features, split 80/20 stratified, run two-stage selection on the train
split, tune the winning classifier, fit the k-fold ensemble, evaluate the test
split. Then, per VOI modification, either re-evaluate the frozen model on
re-extracted features (fixed_model scenario) or re-run the whole selection and
training (reselect scenario), together with per-feature ICC robustness.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .grid import (
    ImageVolume,
    Mask,
    largest_component,
    read_manifest,
    read_nrrd,
    resample_isotropic,
    same_grid,
    zscore_normalize,
)
from .learn import (
    EvalReport,
    ModelSpec,
    cv_validation_eval,
    evaluate_ensemble,
    fit_ensemble,
    stratified_kfold,
    stratified_split,
    tune_hyperparams,
)
from .perturb import MODIFICATION_IDS, MODIFICATION_LABELS, apply_modification, derive_seed
from .radfeat import FEATURE_NAMES, extract_all
from .radfeat.table import FeatureTable
from .robust import average_icc, proportion_above, robustness_report
from .selection import STAGE2_METHODS, SelectionConfig, select_best

SCHEMA_VERSION = 1


@dataclass
class ExperimentConfig:
    """Everything a `voiforge run` needs; JSON schema is versioned."""

    manifest: str
    output_dir: str
    scenarios: tuple[str, ...] = ("fixed_model", "reselect")
    modifications: tuple[str, ...] = MODIFICATION_IDS
    subtype: str | None = None
    r_c: float = 0.9
    seed: int = 0
    bin_count: int = 100
    target_spacing_mm: float = 1.0
    split_ratio: float = 0.8
    k_folds: int = 5
    stage2_methods: tuple[str, ...] = STAGE2_METHODS
    tuning_budget: int = 50
    emit_plots: bool = True
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema version {self.schema_version}")
        if not self.scenarios:
            raise ConfigError("at least one scenario required")
        unknown = set(self.scenarios) - {"fixed_model", "reselect"}
        if unknown:
            raise ConfigError(f"unknown scenarios: {sorted(unknown)}")
        bad_mods = set(self.modifications) - set(MODIFICATION_IDS)
        if bad_mods:
            raise ConfigError(f"unknown modifications: {sorted(bad_mods)}")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            payload = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for key in ("scenarios", "modifications", "stage2_methods"):
            if key in payload:
                payload[key] = tuple(payload[key])
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def selection_config(self) -> SelectionConfig:
        return SelectionConfig(
            r_c=self.r_c,
            k_folds=self.k_folds,
            stage2_methods=self.stage2_methods,
            seed=self.seed,
        )


@dataclass
class _Subject:
    subject_id: str
    label: int
    image: ImageVolume  # preprocessed: isotropic + z-scored
    mask_original: Mask  # original grid, for perturbation
    mask_processed: Mask  # isotropic largest-lesion mask aligned with image


def _preprocess_mask(mask: Mask, image_grid, target: float) -> Mask:
    iso = resample_isotropic(mask, target, mode="nearest")
    if not same_grid(iso, image_grid):
        raise DataError("mask and image no longer aligned after resampling")
    return largest_component(iso)


def load_subjects(config: ExperimentConfig) -> list[_Subject]:
    records = read_manifest(config.manifest)
    if config.subtype is not None:
        records = [r for r in records if r.subtype == config.subtype]
        if not records:
            raise DataError(f"no subjects with subtype {config.subtype!r}")
    subjects = []
    for rec in records:
        image = read_nrrd(rec.image_path)
        mask = read_nrrd(rec.mask_path, as_mask=True)
        if not same_grid(image, mask):
            raise DataError(f"{rec.subject_id}: image and mask grids differ")
        image_iso = zscore_normalize(
            resample_isotropic(image, config.target_spacing_mm, mode="linear")
        )
        mask_proc = _preprocess_mask(mask, image_iso, config.target_spacing_mm)
        subjects.append(
            _Subject(
                subject_id=rec.subject_id,
                label=rec.pcr_label,
                image=image_iso,
                mask_original=mask,
                mask_processed=mask_proc,
            )
        )
    return subjects


def _extract_table(subjects, masks, config) -> tuple[FeatureTable, dict[str, str]]:
    """Feature table over the subjects whose extraction succeeds."""
    rows, labels, errors = {}, {}, {}
    for subj, mask in zip(subjects, masks):
        try:
            rows[subj.subject_id] = extract_all(subj.image, mask, config.bin_count)
            labels[subj.subject_id] = subj.label
        except DataError as exc:
            errors[subj.subject_id] = str(exc)
    if not rows:
        raise DataError("feature extraction failed for every subject")
    return FeatureTable.from_rows(rows, labels), errors


def _perturbed_masks(subjects, modification_id, config):
    masks, errors = [], {}
    out_subjects = []
    for subj in subjects:
        try:
            seed = derive_seed(config.seed, subj.subject_id, modification_id)
            perturbed = apply_modification(subj.mask_original, modification_id, seed)
            masks.append(_preprocess_mask(perturbed, subj.image, config.target_spacing_mm))
            out_subjects.append(subj)
        except DataError as exc:
            errors[subj.subject_id] = str(exc)
    return out_subjects, masks, errors


def _json_safe(value):
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def _eval_dict(report: EvalReport) -> dict:
    return {k: _json_safe(v) for k, v in report.as_dict().items()}


class _SelectionCounter:
    """Call-graph instrumentation: counts select_best invocations per phase."""

    def __init__(self):
        self.counts: dict[str, int] = {}
        self.phase = "baseline"

    def run(self, *args, **kwargs):
        self.counts[self.phase] = self.counts.get(self.phase, 0) + 1
        return select_best(*args, **kwargs)


def _classifier_grid(seed: int) -> list[ModelSpec]:
    return [ModelSpec(kind="lr"), ModelSpec(kind="lda")]


def _tuned_spec(kind: str, X, y, folds, budget, seed) -> tuple[ModelSpec, dict]:
    tuned = tune_hyperparams(X, y, kind, folds, budget=budget, seed=seed)
    return ModelSpec(kind=kind, **tuned["params"]), tuned


def _train_and_eval(table_train, table_test, features, kind, config):
    """Tune, fit the fold ensemble, evaluate train-CV and test."""
    Xtr = table_train.select_features(features).matrix
    Xte = table_test.select_features(features).matrix
    folds = stratified_kfold(table_train.labels, k=config.k_folds, seed=config.seed)
    spec, tuned = _tuned_spec(
        kind, Xtr, table_train.labels, folds, config.tuning_budget, config.seed
    )
    ensemble, train_report = fit_ensemble(
        Xtr, table_train.labels, features, spec, folds, seed=config.seed
    )
    test_report = evaluate_ensemble(ensemble, Xte, table_test.labels, features)
    return ensemble, tuned, train_report, test_report


def run_experiment(config: ExperimentConfig) -> dict:
    """Run the configured scenarios end to end; returns the JSON-serializable results record."""
    counter = _SelectionCounter()
    subjects = load_subjects(config)
    baseline_masks = [s.mask_processed for s in subjects]
    baseline_table, base_errors = _extract_table(subjects, baseline_masks, config)
    if base_errors:
        subjects = [s for s in subjects if s.subject_id in set(baseline_table.subject_ids)]

    labels = baseline_table.labels
    train_idx, test_idx = stratified_split(labels, config.split_ratio, seed=config.seed)
    train_table = baseline_table.subset(train_idx)
    test_table = baseline_table.subset(test_idx)

    sel_config = config.selection_config()
    counter.phase = "baseline"
    selection = counter.run(
        train_table.matrix,
        train_table.labels,
        train_table.feature_names,
        sel_config,
        _classifier_grid(config.seed),
    )

    top3_evaluated = []
    baseline_ensemble = None
    baseline_train_report = None
    baseline_test_report = None
    baseline_tuned = None
    for rank, entry in enumerate(selection.top3):
        ensemble, tuned, train_report, test_report = _train_and_eval(
            train_table, test_table, entry.features, entry.classifier, config
        )
        top3_evaluated.append(
            {
                "method": entry.method,
                "classifier": entry.classifier,
                "cv_auc": entry.cv_auc,
                "n_features": len(entry.features),
                "features": list(entry.features),
                "hyperparams": tuned["params"],
                "train": _eval_dict(train_report),
                "test": _eval_dict(test_report),
            }
        )
        if rank == 0:
            baseline_ensemble = ensemble
            baseline_train_report = train_report
            baseline_test_report = test_report
            baseline_tuned = tuned

    from . import __version__

    results = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(config).items()},
        "feature_names": list(FEATURE_NAMES),
        "subjects": {
            "train": list(train_table.subject_ids),
            "test": list(test_table.subject_ids),
        },
        "subject_errors": {"baseline": base_errors},
        "baseline": {
            "selection": {
                "f_A_size": len(selection.f_A),
                "f_B": list(selection.f_B),
                "f_C": list(selection.f_C),
                "method": selection.method_name,
                "classifier": selection.classifier_name,
                "cv_auc": selection.cv_auc,
                "flags": list(selection.flags),
            },
            "top3": top3_evaluated,
            "hyperparams": baseline_tuned["params"],
            "train_eval": _eval_dict(baseline_train_report),
            "test_eval": _eval_dict(baseline_test_report),
        },
        "robustness": {},
        "scenarios": {},
        "selection_invocations": counter.counts,
    }

    fixed_rows = []
    reselect_rows = []
    counter.phase = "fixed_model"
    fixed_invocations_before = counter.counts.get("fixed_model", 0)

    for mod in config.modifications:
        mod_subjects, mod_masks, mod_errors = _perturbed_masks(subjects, mod, config)
        mod_table, extract_errors = _extract_table(mod_subjects, mod_masks, config)
        mod_errors.update(extract_errors)
        results["subject_errors"][mod] = mod_errors

        # align baseline and modified tables on surviving subjects
        surviving = [sid for sid in baseline_table.subject_ids if sid in set(mod_table.subject_ids)]
        base_rows = baseline_table.subset(
            [baseline_table.subject_ids.index(s) for s in surviving]
        )
        mod_rows = mod_table.subset([mod_table.subject_ids.index(s) for s in surviving])
        if base_rows.feature_names != mod_rows.feature_names:
            raise DataError("modified table schema diverged from baseline")

        report = robustness_report(base_rows, mod_rows, mod)
        results["robustness"][mod] = {
            "n_subjects": len(surviving),
            "icc": {
                name: _json_safe(float(v))
                for name, v in zip(report.feature_names, report.values)
            },
            "proportions_above_0.9": {
                group: proportion_above(report, 0.9, group)
                for group in ("all", "shape", "firstorder", "texture")
            },
        }

        mod_train_ids = [s for s in train_table.subject_ids if s in set(mod_rows.subject_ids)]
        mod_test_ids = [s for s in test_table.subject_ids if s in set(mod_rows.subject_ids)]

        if "fixed_model" in config.scenarios:
            row = _fixed_model_row(
                mod,
                report,
                selection,
                baseline_ensemble,
                baseline_train_report,
                baseline_test_report,
                mod_rows,
                train_table,
                mod_train_ids,
                mod_test_ids,
            )
            fixed_rows.append(row)

        if "reselect" in config.scenarios:
            counter.phase = "reselect"
            row = _reselect_row(
                mod,
                report,
                selection,
                baseline_train_report,
                baseline_test_report,
                mod_rows,
                mod_train_ids,
                mod_test_ids,
                sel_config,
                config,
                counter,
            )
            reselect_rows.append(row)
            counter.phase = "fixed_model"

    if "fixed_model" in config.scenarios:
        results["scenarios"]["fixed_model"] = {
            "reselect_invocations": counter.counts.get("fixed_model", 0) - fixed_invocations_before,
            "baseline_row": _baseline_row(selection, baseline_train_report, baseline_test_report),
            "rows": fixed_rows,
        }
    if "reselect" in config.scenarios:
        results["scenarios"]["reselect"] = {
            "baseline_row": _baseline_row(selection, baseline_train_report, baseline_test_report),
            "rows": reselect_rows,
        }
    return results


def _baseline_row(selection, train_report, test_report) -> dict:
    return {
        "modification": "none",
        "label": "none",
        "method": selection.method_name,
        "classifier": selection.classifier_name,
        "n_features": len(selection.f_C),
        "features": list(selection.f_C),
        "train": _eval_dict(train_report),
        "test": _eval_dict(test_report),
        "train_delta": None,
        "test_delta": None,
        "avg_icc": None,
    }


def _fixed_model_row(
    mod,
    report,
    selection,
    ensemble,
    baseline_train_report,
    baseline_test_report,
    mod_rows,
    train_table,
    mod_train_ids,
    mod_test_ids,
):
    features = selection.f_C
    mod_train = mod_rows.subset(
        [mod_rows.subject_ids.index(s) for s in mod_train_ids]
    ).select_features(features)
    mod_test = mod_rows.subset(
        [mod_rows.subject_ids.index(s) for s in mod_test_ids]
    ).select_features(features)

    if mod_train_ids == list(train_table.subject_ids):
        train_report = cv_validation_eval(ensemble, mod_train.matrix, mod_train.labels)
    else:
        # fold structure broken by dropped subjects: score the whole train split
        train_report = evaluate_ensemble(ensemble, mod_train.matrix, mod_train.labels, features)
    test_report = evaluate_ensemble(ensemble, mod_test.matrix, mod_test.labels, features)

    train_delta = (
        (train_report.auc_mean - baseline_train_report.auc_mean)
        / baseline_train_report.auc_mean
        * 100.0
    )
    test_delta = (
        (test_report.auc_mean - baseline_test_report.auc_mean)
        / baseline_test_report.auc_mean
        * 100.0
    )
    return {
        "modification": mod,
        "label": MODIFICATION_LABELS[mod],
        "method": selection.method_name,
        "classifier": selection.classifier_name,
        "n_features": len(features),
        "features": list(features),
        "train": _eval_dict(train_report),
        "test": _eval_dict(test_report),
        "train_delta": train_delta,
        "test_delta": test_delta,
        "avg_icc": _json_safe(average_icc(report, features)),
    }


def _reselect_row(
    mod,
    report,
    baseline_selection,
    baseline_train_report,
    baseline_test_report,
    mod_rows,
    mod_train_ids,
    mod_test_ids,
    sel_config,
    config,
    counter,
):
    mod_train = mod_rows.subset([mod_rows.subject_ids.index(s) for s in mod_train_ids])
    mod_test = mod_rows.subset([mod_rows.subject_ids.index(s) for s in mod_test_ids])

    selection = counter.run(
        mod_train.matrix,
        mod_train.labels,
        mod_train.feature_names,
        sel_config,
        _classifier_grid(config.seed),
    )
    _, tuned, train_report, test_report = _train_and_eval(
        mod_train, mod_test, selection.f_C, selection.classifier_name, config
    )

    common = set(baseline_selection.f_C) & set(selection.f_C)
    f_c_pct = 100.0 * len(common) / len(baseline_selection.f_C)
    train_delta = (
        (train_report.auc_mean - baseline_train_report.auc_mean)
        / baseline_train_report.auc_mean
        * 100.0
    )
    test_delta = (
        (test_report.auc_mean - baseline_test_report.auc_mean)
        / baseline_test_report.auc_mean
        * 100.0
    )
    return {
        "modification": mod,
        "label": MODIFICATION_LABELS[mod],
        "method": selection.method_name,
        "classifier": selection.classifier_name,
        "n_features": len(selection.f_C),
        "features": list(selection.f_C),
        "hyperparams": tuned["params"],
        "train": _eval_dict(train_report),
        "test": _eval_dict(test_report),
        "train_delta": train_delta,
        "test_delta": test_delta,
        "n_common": len(common),
        "f_c_pct": f_c_pct,
        "avg_icc": _json_safe(average_icc(report, selection.f_C)),
    }
