"""Dataset representation, CSV ingestion, fold splitting, and the
labeled-vs-unlabeled distribution check."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateError, ParseError, SchemaError, ValidationError

MISSING_TOKENS = ("", "NA")


@dataclass(frozen=True)
class Dataset:
    """Labeled rows (Y, T, X) plus unlabeled rows ((T), X).

    ``unlabeled_t`` may be None (treatment unobserved in the unlabeled set).
    """

    labeled_y: np.ndarray
    labeled_t: np.ndarray
    labeled_x: np.ndarray
    unlabeled_x: np.ndarray
    unlabeled_t: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.asarray(self.labeled_y, dtype=float)
        t = np.asarray(self.labeled_t, dtype=float)
        x = np.atleast_2d(np.asarray(self.labeled_x, dtype=float))
        ux = np.asarray(self.unlabeled_x, dtype=float)
        if ux.size == 0:
            ux = np.empty((0, x.shape[1]))
        ux = np.atleast_2d(ux)
        ut = self.unlabeled_t
        if ut is not None:
            ut = np.asarray(ut, dtype=float)
        object.__setattr__(self, "labeled_y", y)
        object.__setattr__(self, "labeled_t", t)
        object.__setattr__(self, "labeled_x", x)
        object.__setattr__(self, "unlabeled_x", ux)
        object.__setattr__(self, "unlabeled_t", ut)
        if y.ndim != 1 or t.ndim != 1 or x.ndim != 2:
            raise ValidationError("labeled arrays have wrong dimensions")
        n = y.shape[0]
        if n < 1:
            raise ValidationError("need at least one labeled row")
        if t.shape[0] != n or x.shape[0] != n:
            raise ValidationError("labeled arrays disagree on n")
        if ux.shape[1] != x.shape[1]:
            raise ValidationError(
                "labeled and unlabeled covariate dimensions disagree "
                f"({x.shape[1]} vs {ux.shape[1]})"
            )
        if not np.all(np.isin(t, (0.0, 1.0))):
            raise ValidationError("labeled treatment values must be 0 or 1")
        if ut is not None:
            if ut.shape[0] != ux.shape[0]:
                raise ValidationError("unlabeled arrays disagree on N")
            if not np.all(np.isin(ut, (0.0, 1.0))):
                raise ValidationError("unlabeled treatment values must be 0 or 1")

    @property
    def n(self) -> int:
        return self.labeled_y.shape[0]

    @property
    def n_unlabeled(self) -> int:
        return self.unlabeled_x.shape[0]

    @property
    def p(self) -> int:
        return self.labeled_x.shape[1]

    def require_both_arms(self):
        if not (np.any(self.labeled_t == 1) and np.any(self.labeled_t == 0)):
            raise ValidationError(
                "difference estimation needs labeled units in both arms"
            )


@dataclass(frozen=True)
class FoldPlan:
    """Partition of the labeled indices into K folds."""

    k_folds: int
    assignment: np.ndarray  # fold index in 1..K per labeled row

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=int)
        object.__setattr__(self, "assignment", a)
        k = self.k_folds
        if k < 2:
            raise ValidationError("need at least 2 folds")
        sizes = np.bincount(a, minlength=k + 1)[1:]
        if sizes.sum() != a.shape[0] or np.any(sizes == 0):
            raise ValidationError("assignment is not a partition into K folds")
        if sizes.max() - sizes.min() > 1:
            raise ValidationError("fold sizes differ by more than 1")

    def fold_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def train_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != k)


def split_folds(n: int, k: int, seed: int) -> FoldPlan:
    """Uniform-random partition into folds of size floor(n/k) or ceil(n/k).

    Extra units go to the lowest-indexed folds. Deterministic given
    (n, k, seed).
    """
    if k < 2 or k > n:
        raise ValidationError(f"need 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    base, extra = divmod(n, k)
    assignment = np.empty(n, dtype=int)
    start = 0
    for fold in range(1, k + 1):
        size = base + (1 if fold <= extra else 0)
        assignment[perm[start : start + size]] = fold
        start += size
    return FoldPlan(k_folds=k, assignment=assignment)


def _parse_cell(text: str, row: int, col: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"row {row}, column '{col}': cannot parse '{text}'") from None


def load_csv(path, schema: dict) -> Dataset:
    """Read a UTF-8 CSV with a header row into a Dataset.

    ``schema`` maps roles to column names: 'outcome', 'treatment', and
    optionally 'covariates' (a list; defaults to every remaining column).
    An empty or 'NA' outcome cell marks an unlabeled row. Row order is
    preserved within the labeled and unlabeled groups.
    """
    outcome_col = schema["outcome"]
    treatment_col = schema["treatment"]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file, header row required") from None
        for col in (outcome_col, treatment_col):
            if col not in header:
                raise SchemaError(f"column '{col}' not in header")
        covariates = schema.get("covariates")
        if covariates is None:
            covariates = [c for c in header if c not in (outcome_col, treatment_col)]
        for col in covariates:
            if col not in header:
                raise SchemaError(f"covariate column '{col}' not in header")
        pos = {c: header.index(c) for c in header}
        ly, lt, lx, ut, ux = [], [], [], [], []
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(
                    f"row {row_num}: expected {len(header)} columns, got {len(row)}"
                )
            t_val = _parse_cell(row[pos[treatment_col]], row_num, treatment_col)
            if t_val not in (0.0, 1.0):
                raise ValidationError(
                    f"row {row_num}: treatment value {t_val!r} outside {{0,1}}"
                )
            x_vals = [_parse_cell(row[pos[c]], row_num, c) for c in covariates]
            y_text = row[pos[outcome_col]].strip()
            if y_text in MISSING_TOKENS:
                ut.append(t_val)
                ux.append(x_vals)
            else:
                ly.append(_parse_cell(y_text, row_num, outcome_col))
                lt.append(t_val)
                lx.append(x_vals)
    if not ly:
        raise ValidationError("no labeled rows (every outcome cell is missing)")
    n_cov = len(covariates)
    return Dataset(
        labeled_y=np.array(ly),
        labeled_t=np.array(lt),
        labeled_x=np.array(lx, dtype=float).reshape(len(ly), n_cov),
        unlabeled_x=np.array(ux, dtype=float).reshape(len(ux), n_cov),
        unlabeled_t=np.array(ut) if ux else None,
    )


def save_csv(ds: Dataset, path, schema: dict):
    """Write a Dataset back to CSV; inverse of load_csv for finite decimals."""
    outcome_col = schema["outcome"]
    treatment_col = schema["treatment"]
    covariates = schema.get("covariates")
    if covariates is None:
        covariates = [f"x{j+1}" for j in range(ds.p)]
    header = [outcome_col, treatment_col] + list(covariates)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        if ds.n_unlabeled and ds.unlabeled_t is None:
            raise ValidationError("cannot serialize unlabeled rows without T")
        for i in range(ds.n):
            writer.writerow(
                [repr(float(ds.labeled_y[i])), _fmt_t(ds.labeled_t[i])]
                + [repr(float(v)) for v in ds.labeled_x[i]]
            )
        for i in range(ds.n_unlabeled):
            writer.writerow(
                ["", _fmt_t(ds.unlabeled_t[i])]
                + [repr(float(v)) for v in ds.unlabeled_x[i]]
            )


def _fmt_t(v: float) -> str:
    return str(int(v))


def mcar_permutation_test(ds: Dataset, n_perm: int, seed: int) -> float:
    """Permutation test that labeling is independent of (T, X).

    Statistic: maximum over the p+1 coordinates of (T, X) of the absolute
    standardized mean difference between the labeled and unlabeled groups.
    Returns the plus-one-corrected p-value.
    """
    if n_perm < 100:
        raise ValidationError("n_perm must be at least 100 for a stable p-value")
    if ds.n_unlabeled < 1:
        raise ValidationError("permutation test needs unlabeled rows")
    if ds.unlabeled_t is None:
        raise ValidationError("permutation test needs unlabeled treatment values")
    z = np.vstack(
        [
            np.column_stack([ds.labeled_t, ds.labeled_x]),
            np.column_stack([ds.unlabeled_t, ds.unlabeled_x]),
        ]
    )
    n, total = ds.n, z.shape[0]
    sd = z.std(axis=0)
    usable = sd > 0
    if not np.any(usable):
        raise DegenerateError("all coordinates are constant")
    zc = z[:, usable] / sd[usable]
    overall = zc.mean(axis=0)

    def statistic(labeled_mask):
        mean_l = zc[labeled_mask].mean(axis=0)
        # mean_U recovered from the overall mean to avoid a second pass
        mean_u = (overall * total - mean_l * n) / (total - n)
        return np.max(np.abs(mean_l - mean_u))

    mask = np.zeros(total, dtype=bool)
    mask[:n] = True
    observed = statistic(mask)
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_perm):
        perm_mask = np.zeros(total, dtype=bool)
        perm_mask[rng.choice(total, size=n, replace=False)] = True
        if statistic(perm_mask) >= observed:
            hits += 1
    return (hits + 1) / (n_perm + 1)
