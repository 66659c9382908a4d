"""Synthetic CKD-progression cohorts, wide-CSV I/O, scaling and splitting."""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import check_sequences


class DataFormatError(ValueError):
    pass


@dataclass
class CohortDataset:
    """Per-patient ``[T, F]`` matrices with binary outcomes.

    Arrays are copied and frozen on construction; derive new datasets with
    :meth:`subset` or :func:`dataclasses.replace`.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: list
    time_labels: list
    patient_ids: list
    preprocessor: Optional["Preprocessor"] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        y = np.array(self.y).astype(np.int64)
        if X.ndim != 3:
            raise ValueError(f"X must be [N, T, F], got shape {X.shape}")
        N, T, F = X.shape
        if y.shape != (N,) or len(self.patient_ids) != N:
            raise ValueError("X, y and patient_ids disagree on the number of patients")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("outcomes must be 0 or 1")
        if len(self.feature_names) != F or len(self.time_labels) != T:
            raise ValueError("feature_names / time_labels do not match X")
        X.flags.writeable = False
        y.flags.writeable = False
        self.X, self.y = X, y
        self.feature_names = list(self.feature_names)
        self.time_labels = list(self.time_labels)
        self.patient_ids = [str(p) for p in self.patient_ids]

    @property
    def n_patients(self) -> int:
        return self.X.shape[0]

    @property
    def n_timesteps(self) -> int:
        return self.X.shape[1]

    @property
    def n_features(self) -> int:
        return self.X.shape[2]

    def subset(self, indices) -> "CohortDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return replace(self, X=self.X[indices], y=self.y[indices],
                       patient_ids=[self.patient_ids[i] for i in indices])

    def to_csv(self) -> str:
        return dataset_to_csv(self)


# --------------------------------------------------------------------------
# generator

@dataclass
class FeatureSpec:
    """How one feature is simulated.

    ``kind`` is one of ``continuous``, ``binary``, ``stage`` (cumulative
    onset indicator), ``count`` (integer per interval) or ``cost``.  Means,
    SDs and probabilities are per class; for ``count``/``cost`` they describe
    the total over the whole window.  ``trend`` is the per-interval drift
    applied to progressors only.
    """

    name: str
    group: str
    kind: str
    neg_mean: float = 0.0
    pos_mean: float = 0.0
    neg_sd: float = 1.0
    pos_sd: float = 1.0
    static: bool = True
    trend: float = 0.0
    lower: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("continuous", "binary", "stage", "count", "cost"):
            raise ValueError(f"feature {self.name!r}: unknown kind {self.kind!r}")


def default_feature_schema() -> list:
    """Twenty features in the four Table-1 groups, anchored to its group statistics."""
    F = FeatureSpec
    return [
        F("age", "demographic", "continuous", 72.04, 69.13, 11.25, 12.37, lower=18.0),
        F("female", "demographic", "binary", 0.540, 0.465),
        F("race_aa", "demographic", "binary", 0.045, 0.140),
        F("bmi", "demographic", "continuous", 26.40, 28.40, 6.20, 5.32, lower=12.0),
        F("diabetes", "comorbidity", "binary", 0.590, 0.733),
        F("hypertension", "comorbidity", "binary", 0.990, 0.990),
        F("anemia", "comorbidity", "binary", 0.620, 0.640),
        F("sec_hyperparathyroidism", "comorbidity", "binary", 0.180, 0.326),
        F("chf", "comorbidity", "binary", 0.090, 0.070),
        F("mi", "comorbidity", "binary", 0.324, 0.517),
        F("n_claims_O", "claims", "count", 22.07, 27.78, 19.13, 24.75, static=False, trend=0.04),
        F("n_claims_P", "claims", "count", 87.43, 105.37, 68.02, 77.56, static=False, trend=0.04),
        F("net_exp_I", "claims", "cost", 29440.0, 33909.0, 32541.0, 53540.0, static=False),
        F("net_exp_P", "claims", "cost", 11640.0, 15512.0, 12748.0, 18657.0, static=False,
          trend=0.04),
        F("egfr", "clinical", "continuous", 22.78, 17.21, 5.66, 5.46, static=False, trend=-0.6,
          lower=2.0),
        F("hemoglobin", "clinical", "continuous", 14.25, 12.15, 1.80, 2.19, static=False,
          trend=-0.075, lower=5.0),
        F("bicarbonate", "clinical", "continuous", 25.3, 22.9, 4.22, 6.36, static=False,
          trend=-0.15, lower=8.0),
        F("intact_pth", "clinical", "continuous", 62.72, 78.66, 37.32, 40.23, static=False,
          trend=2.0, lower=5.0),
        F("S4", "clinical", "stage", 0.223, 0.547, static=False),
        F("S5", "clinical", "stage", 0.207, 0.488, static=False),
    ]


@dataclass
class GeneratorSpec:
    n_patients: int = 1422
    prevalence: float = 0.06
    n_timesteps: int = 8
    seed: int = 7
    signal_strength: float = 1.0
    noise_fraction: float = 0.25
    features: list = field(default_factory=default_feature_schema)

    def __post_init__(self):
        self.features = [f if isinstance(f, FeatureSpec) else FeatureSpec(**f)
                         for f in self.features]
        self.validate()

    def validate(self) -> None:
        if not 0 < self.prevalence < 1:
            raise ValueError(f"prevalence must lie in (0, 1), got {self.prevalence}")
        if self.n_patients < 2:
            raise ValueError("n_patients must be >= 2")
        if self.n_timesteps < 1:
            raise ValueError("n_timesteps must be >= 1")
        if not self.features:
            raise ValueError("feature schema is empty")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        for name in names:
            if not name or "," in name or "@" in name:
                raise ValueError(f"feature name {name!r} may not be empty or contain ',' or '@'")
        if self.signal_strength < 0 or self.noise_fraction < 0:
            raise ValueError("signal_strength and noise_fraction must be non-negative")

    @property
    def n_positive(self) -> int:
        return int(round(self.n_patients * self.prevalence))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown generator spec keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "GeneratorSpec":
        return cls.from_dict(json.loads(text))


def _class_value(spec: FeatureSpec, y: np.ndarray, attr: str) -> np.ndarray:
    return np.where(y == 1, getattr(spec, "pos_" + attr), getattr(spec, "neg_" + attr))


def _simulate(spec: FeatureSpec, y, T, s, noise, rng) -> np.ndarray:
    N = len(y)
    t = np.arange(T, dtype=np.float64)
    centred = t - (T - 1) / 2.0
    pos = (y == 1)[:, None]
    if spec.kind == "binary":
        p = np.clip(_class_value(spec, y, "mean"), 0.0, 1.0)
        return np.repeat((rng.random(N) < p).astype(np.float64)[:, None], T, axis=1)
    if spec.kind == "stage":
        p = np.clip(_class_value(spec, y, "mean"), 0.0, 1.0)
        ever = rng.random(N) < p
        late = (t + 1.0) ** s
        late_p = late / late.sum()
        onset = np.where(y == 1, rng.choice(T, size=N, p=late_p), rng.integers(0, T, size=N))
        return (ever[:, None] & (t[None, :] >= onset[:, None])).astype(np.float64)
    mean = _class_value(spec, y, "mean")
    sd = _class_value(spec, y, "sd")
    if spec.kind == "continuous":
        base = rng.normal(mean, sd)
        if spec.static:
            values = np.repeat(base[:, None], T, axis=1)
        else:
            slope = np.where(pos, s * spec.trend, 0.0) + rng.normal(0.0, abs(spec.trend) / 3 + 1e-12, (N, 1))
            values = base[:, None] + slope * centred + rng.normal(0.0, noise * sd[:, None], (N, T))
    else:
        # window totals via a gamma intensity, spread across intervals
        shape = (mean / sd) ** 2
        intensity = rng.gamma(shape, mean / shape) / T
        ramp = np.where(pos, 1.0 + s * spec.trend * centred, 1.0)
        rate = intensity[:, None] * np.clip(ramp, 0.05, None)
        if spec.kind == "count":
            values = rng.poisson(rate).astype(np.float64)
        else:
            values = rng.gamma(2.0, rate / 2.0)
    if spec.lower is not None:
        values = np.maximum(values, spec.lower)
    return np.round(values, 6)


def generate_cohort(spec: Optional[GeneratorSpec] = None) -> CohortDataset:
    """Draw a synthetic cohort; identical specs give identical datasets.

    The positive count is fixed at ``round(n * prevalence)`` so realised
    prevalence matches the request up to rounding.
    """
    spec = spec or GeneratorSpec()
    spec.validate()
    n_pos = spec.n_positive
    if n_pos == 0 or n_pos == spec.n_patients:
        raise ValueError(
            f"{spec.n_patients} patients at prevalence {spec.prevalence} leave a class empty")
    rng = np.random.default_rng(spec.seed)
    y = np.zeros(spec.n_patients, dtype=np.int64)
    y[rng.permutation(spec.n_patients)[:n_pos]] = 1
    columns = [_simulate(f, y, spec.n_timesteps, spec.signal_strength, spec.noise_fraction, rng)
               for f in spec.features]
    X = np.stack(columns, axis=-1)
    return CohortDataset(
        X=X, y=y, feature_names=[f.name for f in spec.features],
        time_labels=[f"t{k}" for k in range(spec.n_timesteps)],
        patient_ids=[f"P{k:05d}" for k in range(spec.n_patients)])


# --------------------------------------------------------------------------
# CSV

_COLUMN = re.compile(r"^(.+)@t(\d+)$")
IMPUTE_POLICIES = ("carry_forward", "mean", "error")


def _fmt(value: float) -> str:
    return repr(float(value))


def dataset_to_csv(dataset: CohortDataset) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    header = ["patient_id", "outcome"] + [
        f"{name}@t{t}" for name in dataset.feature_names for t in range(dataset.n_timesteps)]
    writer.writerow(header)
    for pid, label, x in zip(dataset.patient_ids, dataset.y, dataset.X):
        writer.writerow([pid, int(label)] + [_fmt(v) for v in x.T.reshape(-1)])
    return out.getvalue()


def save_csv(dataset: CohortDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dataset_to_csv(dataset))


def _impute(X: np.ndarray, policy: str) -> np.ndarray:
    missing = np.isnan(X)
    if not missing.any():
        return X
    X = X.copy()
    col_mean = np.nanmean(np.where(missing, np.nan, X).reshape(-1, X.shape[2]), axis=0)
    col_mean = np.where(np.isnan(col_mean), 0.0, col_mean)
    if policy == "mean":
        return np.where(missing, col_mean[None, None, :], X)
    # carry forward, then back-fill leading gaps, then cohort mean
    for t in range(1, X.shape[1]):
        X[:, t] = np.where(np.isnan(X[:, t]), X[:, t - 1], X[:, t])
    for t in range(X.shape[1] - 2, -1, -1):
        X[:, t] = np.where(np.isnan(X[:, t]), X[:, t + 1], X[:, t])
    return np.where(np.isnan(X), col_mean[None, None, :], X)


def parse_csv(text: str, impute: str = "carry_forward") -> CohortDataset:
    """Parse the wide ``patient_id,outcome,<feature>@t<k>,...`` layout."""
    if impute not in IMPUTE_POLICIES:
        raise ValueError(f"impute policy must be one of {IMPUTE_POLICIES}")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataFormatError("empty CSV")
    header = rows[0]
    if header[:2] != ["patient_id", "outcome"]:
        raise DataFormatError("header must start with 'patient_id,outcome'")
    features, times, slots = [], set(), []
    for col, name in enumerate(header[2:], start=3):
        match = _COLUMN.match(name)
        if not match:
            raise DataFormatError(f"column {col} ({name!r}): expected '<feature>@t<k>'")
        feature, t = match.group(1), int(match.group(2))
        if feature not in features:
            features.append(feature)
        times.add(t)
        slots.append((feature, t))
    if not features:
        raise DataFormatError("no feature columns")
    T = max(times) + 1
    if times != set(range(T)):
        gaps = sorted(set(range(T)) - times)
        raise DataFormatError(f"time indices must be contiguous from t0; missing t{gaps[0]}")
    if len(set(slots)) != len(slots) or len(slots) != T * len(features):
        raise DataFormatError("every feature needs exactly one column per time step")
    f_index = {f: k for k, f in enumerate(features)}
    body = [r for r in rows[1:] if r]
    X = np.full((len(body), T, len(features)), np.nan)
    y = np.zeros(len(body), dtype=np.int64)
    ids = []
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataFormatError(f"row {r}: {len(row)} cells, header has {len(header)}")
        ids.append(row[0])
        if row[1].strip() not in ("0", "1"):
            raise DataFormatError(f"row {r}, column 2 (outcome): expected 0 or 1, got {row[1]!r}")
        y[r - 2] = int(row[1])
        for c, ((feature, t), cell) in enumerate(zip(slots, row[2:]), start=3):
            cell = cell.strip()
            if cell == "":
                if impute == "error":
                    raise DataFormatError(f"row {r}, column {c} ({feature}@t{t}): missing value")
                continue
            try:
                value = float(cell)
            except ValueError:
                raise DataFormatError(
                    f"row {r}, column {c} ({feature}@t{t}): non-numeric value {cell!r}") from None
            if not np.isfinite(value):
                raise DataFormatError(f"row {r}, column {c} ({feature}@t{t}): non-finite value")
            X[r - 2, t, f_index[feature]] = value
    if len(set(ids)) != len(ids):
        raise DataFormatError("duplicate patient_id values")
    return CohortDataset(X=_impute(X, impute), y=y, feature_names=features,
                         time_labels=[f"t{k}" for k in range(T)], patient_ids=ids)


def load_csv(path, impute: str = "carry_forward") -> CohortDataset:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_csv(fh.read(), impute)


# --------------------------------------------------------------------------
# preprocessing

POLICIES = ("zscore", "log1p_zscore", "none")


def infer_policy(column: np.ndarray) -> str:
    """Binary -> none; non-negative and right-skewed -> log1p_zscore; else zscore."""
    if np.all((column == 0) | (column == 1)):
        return "none"
    sd = column.std()
    skew = 0.0 if sd == 0 else float(np.mean(((column - column.mean()) / sd) ** 3))
    if column.min() >= 0 and skew > 1.5:
        return "log1p_zscore"
    return "zscore"


class Preprocessor(TransformerMixin, BaseEstimator):
    """Per-feature scaling of ``[N, T, F]`` cohorts.

    ``policy`` is ``"auto"``, one of ``zscore``/``log1p_zscore``/``none``,
    or a mapping from feature name to policy (unlisted features use auto).
    Statistics pool every patient and time step of the fitting data.
    """

    def __init__(self, policy="auto", feature_names=None):
        self.policy = policy
        self.feature_names = feature_names

    def _names(self, F):
        if self.feature_names is not None:
            return list(self.feature_names)
        return [f"f{k}" for k in range(F)]

    def fit(self, X, y=None):
        names = X.feature_names if isinstance(X, CohortDataset) else None
        X = check_sequences(_as_array(X))
        F = X.shape[2]
        names = self._names(F) if self.feature_names is not None or names is None else names
        flat = X.reshape(-1, F)
        policies, means, scales, warnings = [], np.zeros(F), np.ones(F), []
        for k in range(F):
            if isinstance(self.policy, dict):
                p = self.policy.get(names[k], "auto")
            else:
                p = self.policy
            if p == "auto":
                p = infer_policy(flat[:, k])
            if p not in POLICIES:
                raise ValueError(f"unknown preprocessing policy {p!r}")
            col = flat[:, k]
            if p == "log1p_zscore":
                if col.min() <= -1:
                    raise ValueError(f"feature {names[k]!r} has values <= -1; log1p undefined")
                col = np.log1p(col)
            if p != "none":
                means[k] = col.mean()
                sd = col.std()
                if sd == 0:
                    warnings.append(f"feature {names[k]!r} has zero variance; scale clamped to 1")
                    sd = 1.0
                scales[k] = sd
            policies.append(p)
        self.policies_, self.mean_, self.scale_ = policies, means, scales
        self.warnings_ = warnings
        self.n_features_in_ = F
        return self

    def _check(self, X):
        if not hasattr(self, "policies_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("Preprocessor is not fitted")
        X = check_sequences(_as_array(X))
        if X.shape[2] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[2]}")
        return X

    def transform(self, X):
        if isinstance(X, CohortDataset):
            return replace(X, X=self.transform(X.X), preprocessor=self)
        X = self._check(X).copy()
        for k, p in enumerate(self.policies_):
            if p == "log1p_zscore":
                X[..., k] = np.log1p(X[..., k])
            if p != "none":
                X[..., k] = (X[..., k] - self.mean_[k]) / self.scale_[k]
        return X

    def inverse_transform(self, X):
        if isinstance(X, CohortDataset):
            return replace(X, X=self.inverse_transform(X.X), preprocessor=None)
        X = self._check(X).copy()
        for k, p in enumerate(self.policies_):
            if p != "none":
                X[..., k] = X[..., k] * self.scale_[k] + self.mean_[k]
            if p == "log1p_zscore":
                X[..., k] = np.expm1(X[..., k])
        return X

    def to_dict(self) -> dict:
        return {"policies": list(self.policies_), "mean": self.mean_.tolist(),
                "scale": self.scale_.tolist(), "feature_names": self.feature_names}

    @classmethod
    def from_dict(cls, data: dict) -> "Preprocessor":
        pre = cls(policy="auto", feature_names=data.get("feature_names"))
        pre.policies_ = list(data["policies"])
        pre.mean_ = np.asarray(data["mean"], dtype=np.float64)
        pre.scale_ = np.asarray(data["scale"], dtype=np.float64)
        pre.warnings_ = []
        pre.n_features_in_ = len(pre.policies_)
        return pre


def _as_array(X):
    return X.X if isinstance(X, CohortDataset) else X


def preprocess(dataset: CohortDataset, policy="auto",
               fit_on: Optional[CohortDataset] = None) -> CohortDataset:
    """Scale ``dataset`` with statistics from ``fit_on`` (itself by default).

    The fitted :class:`Preprocessor` is attached as ``result.preprocessor``
    so the transform can be inverted.
    """
    reference = fit_on if fit_on is not None else dataset
    pre = Preprocessor(policy, feature_names=reference.feature_names).fit(reference)
    return pre.transform(dataset)


# --------------------------------------------------------------------------
# splitting

@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train, self.val, self.test)
        if any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {fracs}")


def _allocate(n: int, fractions) -> list:
    raw = [n * f for f in fractions]
    sizes = [int(np.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - sizes[k]), k))
    for k in order[: n - sum(sizes)]:
        sizes[k] += 1
    return sizes


def split(dataset: CohortDataset, spec: SplitSpec = SplitSpec(), require_classes: bool = True):
    """Disjoint train/val/test subsets covering every patient exactly once.

    ``require_classes=False`` skips the both-classes check, for replaying a
    recorded split on data that may hold only one outcome.
    """
    rng = np.random.default_rng(spec.seed)
    fracs = (spec.train, spec.val, spec.test)
    parts = [[], [], []]
    groups = ([np.flatnonzero(dataset.y == c) for c in (0, 1)] if spec.stratified
              else [np.arange(dataset.n_patients)])
    for members in groups:
        members = rng.permutation(members)
        start = 0
        for k, size in enumerate(_allocate(len(members), fracs)):
            parts[k].extend(members[start:start + size].tolist())
            start += size
    if spec.stratified and require_classes:
        for name, frac, part in zip(("train", "val", "test"), fracs, parts):
            if frac > 0 and len(set(dataset.y[part].tolist())) < 2:
                raise ValueError(f"stratified split leaves the {name} split without both classes")
    return tuple(dataset.subset(sorted(p)) for p in parts)
