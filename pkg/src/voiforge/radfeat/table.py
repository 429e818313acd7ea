"""Subjects x features table with binary labels, plus full-precision CSV I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError


@dataclass
class FeatureTable:
    """Rectangular table: one row per subject, one column per named feature."""

    subject_ids: list[str]
    feature_names: list[str]
    matrix: np.ndarray  # (n_subjects, n_features) float64
    labels: np.ndarray  # (n_subjects,) int, values in {0, 1}

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.matrix.shape != (len(self.subject_ids), len(self.feature_names)):
            raise DataError(
                f"matrix shape {self.matrix.shape} does not match "
                f"{len(self.subject_ids)} subjects x {len(self.feature_names)} features"
            )
        if len(self.labels) != len(self.subject_ids):
            raise DataError("label count does not match subject count")

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    def column(self, name: str) -> np.ndarray:
        return self.matrix[:, self.feature_names.index(name)]

    def select_features(self, names) -> "FeatureTable":
        idx = [self.feature_names.index(n) for n in names]
        return FeatureTable(
            subject_ids=list(self.subject_ids),
            feature_names=list(names),
            matrix=self.matrix[:, idx].copy(),
            labels=self.labels.copy(),
        )

    def subset(self, row_indices) -> "FeatureTable":
        idx = np.asarray(row_indices, dtype=np.int64)
        return FeatureTable(
            subject_ids=[self.subject_ids[i] for i in idx],
            feature_names=list(self.feature_names),
            matrix=self.matrix[idx].copy(),
            labels=self.labels[idx].copy(),
        )

    @classmethod
    def from_rows(cls, rows: dict[str, dict[str, float]], labels: dict[str, int]) -> "FeatureTable":
        ids = list(rows)
        names = list(next(iter(rows.values())))
        for sid, vec in rows.items():
            if list(vec) != names:
                raise DataError(f"inconsistent feature ordering for subject {sid!r}")
        matrix = np.array([[rows[sid][n] for n in names] for sid in ids])
        return cls(
            subject_ids=ids,
            feature_names=names,
            matrix=matrix,
            labels=np.array([labels[sid] for sid in ids]),
        )

    def to_csv(self, path) -> None:
        """Write with full float precision (repr), so read round-trips exactly."""
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subject_id", "label", *self.feature_names])
            for i, sid in enumerate(self.subject_ids):
                writer.writerow(
                    [sid, int(self.labels[i]), *[repr(float(v)) for v in self.matrix[i]]]
                )

    @classmethod
    def from_csv(cls, path) -> "FeatureTable":
        with open(Path(path), newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["subject_id", "label"]:
                raise DataError("feature CSV must start with subject_id,label columns")
            names = header[2:]
            ids, labels, rows = [], [], []
            for row in reader:
                ids.append(row[0])
                labels.append(int(row[1]))
                rows.append([float(v) for v in row[2:]])
        if not ids:
            raise DataError(f"feature CSV {path} has no rows")
        return cls(
            subject_ids=ids,
            feature_names=names,
            matrix=np.array(rows),
            labels=np.array(labels),
        )
