"""Patient records, cohorts, CSV ingestion, and the fixed test-set split.

A cohort is an immutable, index-addressable sequence of patient records
(patient_id = position). Records keep CA125 missingness explicit (``None``),
never sentinel-coded; numeric column views use NaN internally.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

CSV_COLUMNS = (
    "age",
    "lesion_dmax",
    "lesion_volume",
    "solid_prop_diam",
    "solid_prop_vol",
    "ca125",
    "bilateral",
    "papflow",
    "outcome",
)

PROVENANCES = ("ingested", "reference-generated", "synthesized")


class CohortError(ValueError):
    """Raised for malformed cohort files or invalid record values."""


@dataclass(frozen=True, slots=True)
class PatientRecord:
    """One tumor case: six predictors in two measurement variants plus outcome.

    ``ca125`` and ``outcome`` may be ``None`` (missing marker / unlabeled).
    """

    age: float
    lesion_dmax: float
    lesion_volume: float
    solid_prop_diam: float
    solid_prop_vol: float
    ca125: float | None
    bilateral: int
    pap_flow: int
    outcome: int | None = None

    def __post_init__(self):
        if not np.isfinite(self.age) or self.age < 18.0:
            raise CohortError(f"age must be a finite real >= 18, got {self.age}")
        if not np.isfinite(self.lesion_dmax) or self.lesion_dmax <= 0.0:
            raise CohortError(f"lesion_dmax must be > 0, got {self.lesion_dmax}")
        if not np.isfinite(self.lesion_volume) or self.lesion_volume <= 0.0:
            raise CohortError(f"lesion_volume must be > 0, got {self.lesion_volume}")
        for field in ("solid_prop_diam", "solid_prop_vol"):
            v = getattr(self, field)
            if not np.isfinite(v) or not 0.0 <= v <= 1.0:
                raise CohortError(f"{field} must lie in [0, 1], got {v}")
        if self.ca125 is not None and (not np.isfinite(self.ca125) or self.ca125 <= 0.0):
            raise CohortError(f"ca125 must be > 0 when observed, got {self.ca125}")
        if self.bilateral not in (0, 1):
            raise CohortError(f"bilateral must be 0/1, got {self.bilateral}")
        if self.pap_flow not in (0, 1):
            raise CohortError(f"papflow must be 0/1, got {self.pap_flow}")
        if self.outcome not in (0, 1, None):
            raise CohortError(f"outcome must be 0/1 or missing, got {self.outcome}")


class Cohort:
    """Ordered, immutable collection of patient records.

    Record order is stable and index-addressable: ``patient_id`` is the
    position of a record in ``records``. Column views are materialized once
    and cached; missing CA125/outcome appear as NaN in the float views.
    """

    __slots__ = ("name", "records", "provenance", "_cols")

    def __init__(self, name: str, records: Iterable[PatientRecord], provenance: str):
        if provenance not in PROVENANCES:
            raise CohortError(f"unknown provenance {provenance!r}, expected one of {PROVENANCES}")
        self.name = name
        self.records = tuple(records)
        self.provenance = provenance
        self._cols: dict[str, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, idx: int) -> PatientRecord:
        return self.records[idx]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Cohort)
            and self.name == other.name
            and self.provenance == other.provenance
            and self.records == other.records
        )

    def column(self, name: str) -> np.ndarray:
        """Read-only float64 view of one record field (NaN = missing)."""
        if self._cols is None:
            cols = {}
            recs = self.records
            cols["age"] = np.array([r.age for r in recs], dtype=float)
            cols["lesion_dmax"] = np.array([r.lesion_dmax for r in recs], dtype=float)
            cols["lesion_volume"] = np.array([r.lesion_volume for r in recs], dtype=float)
            cols["solid_prop_diam"] = np.array([r.solid_prop_diam for r in recs], dtype=float)
            cols["solid_prop_vol"] = np.array([r.solid_prop_vol for r in recs], dtype=float)
            cols["ca125"] = np.array(
                [np.nan if r.ca125 is None else r.ca125 for r in recs], dtype=float
            )
            cols["bilateral"] = np.array([r.bilateral for r in recs], dtype=float)
            cols["papflow"] = np.array([r.pap_flow for r in recs], dtype=float)
            cols["outcome"] = np.array(
                [np.nan if r.outcome is None else r.outcome for r in recs], dtype=float
            )
            for arr in cols.values():
                arr.flags.writeable = False
            self._cols = cols
        return self._cols[name]

    def outcomes(self) -> np.ndarray:
        """Outcome labels as int array; raises if any record is unlabeled."""
        y = self.column("outcome")
        if np.isnan(y).any():
            raise CohortError(f"cohort {self.name!r} contains unlabeled records")
        return y.astype(int)

    def subset(self, indices: Sequence[int], name: str | None = None) -> "Cohort":
        recs = [self.records[i] for i in indices]
        return Cohort(name if name is not None else self.name, recs, self.provenance)

    def with_records(self, records: Iterable[PatientRecord], provenance: str | None = None) -> "Cohort":
        return Cohort(self.name, records, provenance if provenance is not None else self.provenance)


def _parse_field(raw: str, field: str, row_num: int) -> float | None:
    raw = raw.strip()
    if raw == "":
        return None
    try:
        return float(raw)
    except ValueError:
        raise CohortError(f"row {row_num}: field {field!r} is not numeric: {raw!r}") from None


def _record_from_row(values: Mapping[str, float | None], row_num: int) -> PatientRecord:
    required = [c for c in CSV_COLUMNS if c not in ("ca125", "outcome")]
    for field in required:
        if values[field] is None:
            raise CohortError(f"row {row_num}: field {field!r} may not be empty")
    for field in ("bilateral", "papflow", "outcome"):
        v = values[field]
        if v is not None and v not in (0.0, 1.0):
            raise CohortError(f"row {row_num}: field {field!r} must be 0/1, got {v}")
    try:
        return PatientRecord(
            age=values["age"],
            lesion_dmax=values["lesion_dmax"],
            lesion_volume=values["lesion_volume"],
            solid_prop_diam=values["solid_prop_diam"],
            solid_prop_vol=values["solid_prop_vol"],
            ca125=values["ca125"],
            bilateral=int(values["bilateral"]),
            pap_flow=int(values["papflow"]),
            outcome=None if values["outcome"] is None else int(values["outcome"]),
        )
    except CohortError as exc:
        raise CohortError(f"row {row_num}: {exc}") from None


def load_cohort_csv(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    name: str | None = None,
) -> Cohort:
    """Ingest a cohort CSV (UTF-8, comma-separated, header row).

    ``schema`` maps canonical field names to file column names; by default the
    header must carry the canonical columns. Empty fields mean missing, which
    is only legal for ``ca125`` and ``outcome``. Violations are rejected with
    the offending row number and field name.
    """
    path = Path(path)
    mapping = dict(schema) if schema is not None else {c: c for c in CSV_COLUMNS}
    missing_keys = [c for c in CSV_COLUMNS if c not in mapping]
    if missing_keys:
        raise CohortError(f"schema does not map fields: {missing_keys}")
    try:
        fh = path.open("r", encoding="utf-8", newline="")
    except OSError as exc:
        raise CohortError(f"cannot read cohort file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortError(f"{path}: empty file, expected a header row") from None
        positions = {}
        for field, col in mapping.items():
            if col not in header:
                raise CohortError(f"{path}: header is missing column {col!r} (field {field!r})")
            positions[field] = header.index(col)
        records = []
        for row_num, row in enumerate(reader, start=2):
            if len(row) < len(header):
                raise CohortError(f"row {row_num}: expected {len(header)} fields, got {len(row)}")
            values = {f: _parse_field(row[i], f, row_num) for f, i in positions.items()}
            records.append(_record_from_row(values, row_num))
    return Cohort(name if name is not None else path.stem, records, "ingested")


def _fmt(v: float | None) -> str:
    if v is None:
        return ""
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def write_cohort_csv(cohort: Cohort, path: str | Path) -> None:
    """Serialize a cohort in the canonical column order (round-trip safe)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for r in cohort.records:
            row = (
                _fmt(r.age),
                _fmt(r.lesion_dmax),
                _fmt(r.lesion_volume),
                _fmt(r.solid_prop_diam),
                _fmt(r.solid_prop_vol),
                _fmt(r.ca125),
                str(r.bilateral),
                str(r.pap_flow),
                "" if r.outcome is None else str(r.outcome),
            )
            fh.write(",".join(row) + "\n")


def split_fixed_test(cohort: Cohort, n_test: int, seed: int) -> tuple[Cohort, Cohort]:
    """Set aside a fixed labeled test set; the rest becomes the training pool.

    Test records are drawn only from labeled records, kept in original cohort
    order so the test set is stable and index-addressable for the whole
    experiment. Deterministic given ``seed``.
    """
    if n_test > len(cohort):
        raise CohortError(f"n_test={n_test} exceeds cohort size {len(cohort)}")
    labeled = [i for i, r in enumerate(cohort.records) if r.outcome is not None]
    if len(labeled) < n_test:
        raise CohortError(
            f"need {n_test} labeled records for the test set, cohort has {len(labeled)}"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(labeled), size=n_test, replace=False)
    test_idx = sorted(labeled[i] for i in chosen)
    test_set = set(test_idx)
    train_idx = [i for i in range(len(cohort)) if i not in test_set]
    return (
        cohort.subset(train_idx, name=f"{cohort.name}-pool"),
        cohort.subset(test_idx, name=f"{cohort.name}-test"),
    )


def resample(cohort: Cohort, n: int, rng: np.random.Generator, with_replacement: bool = True) -> Cohort:
    """Draw a training sample of size ``n`` from a pool."""
    if with_replacement:
        idx = rng.integers(0, len(cohort), size=n)
    else:
        if n > len(cohort):
            raise CohortError(
                f"cannot draw {n} without replacement from pool of {len(cohort)}"
            )
        idx = rng.choice(len(cohort), size=n, replace=False)
    return cohort.subset([int(i) for i in idx], name=f"{cohort.name}-sample")


def set_ca125(record: PatientRecord, value: float) -> PatientRecord:
    return replace(record, ca125=value)
