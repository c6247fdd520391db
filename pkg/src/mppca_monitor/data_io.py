"""CSV datasets and JSON model artifacts.

CSV conventions: comma separated, optional header row, an empty field is a
missing value, and a final column named ``fault`` (0/1) holds labels.

Model files are JSON documents carrying ``format_version``. Floats are
written with Python's shortest round-trip repr, so parse -> serialize
reproduces the file byte for byte.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mixture import MixtureParams
from .monitoring import FORMS, ThresholdSet
from .ppca import PpcaParams

FORMAT_VERSION = 1
LABEL_COLUMN = "fault"


class DataFormatError(ValueError):
    """Malformed CSV input."""


class ModelFormatError(ValueError):
    """Malformed or incompatible model file."""


@dataclass
class Dataset:
    """N x d sample matrix with NaN for missing entries."""

    values: np.ndarray
    column_names: list | None = None
    labels: np.ndarray | None = None
    source: str = ""

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float, ndmin=2)
        if self.column_names is not None:
            self.column_names = list(self.column_names)
            if len(self.column_names) != self.values.shape[1]:
                raise ValueError("column_names length does not match the data dimension")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=bool).reshape(-1)
            if self.labels.size != self.values.shape[0]:
                raise ValueError("labels length does not match the number of rows")

    @property
    def mask(self) -> np.ndarray:
        return ~np.isnan(self.values)

    @property
    def complete(self) -> bool:
        return bool(self.mask.all())

    def __len__(self):
        return self.values.shape[0]


def _parse_float(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise DataFormatError(f"row {row}, column {col}: cannot parse {text!r} as a number") from None
    if not math.isfinite(v):
        raise DataFormatError(f"row {row}, column {col}: non-finite value {text!r}")
    return v


def _looks_like_header(cells):
    for c in cells:
        c = c.strip()
        if c == "":
            continue
        try:
            float(c)
        except ValueError:
            return True
    return False


def parse_csv(text: str, header: bool | None = None, source: str = "") -> Dataset:
    """Parse CSV text. ``header=None`` detects a header from non-numeric cells."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataFormatError(f"{source or 'input'}: no data rows")
    names = None
    if header is None:
        header = _looks_like_header(rows[0])
    if header:
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if not rows:
            raise DataFormatError(f"{source or 'input'}: header but no data rows")
    width = len(names) if names is not None else len(rows[0])
    values = np.full((len(rows), width), np.nan)
    line0 = 2 if header else 1
    for n, r in enumerate(rows):
        if len(r) != width:
            raise DataFormatError(f"row {n + line0}: expected {width} fields, found {len(r)}")
        for j, cell in enumerate(r):
            cell = cell.strip()
            if cell:
                values[n, j] = _parse_float(cell, n + line0, j + 1)
    labels = None
    if names is not None and names[-1].lower() == LABEL_COLUMN:
        lab = values[:, -1]
        if np.isnan(lab).any() or not np.isin(lab, (0.0, 1.0)).all():
            raise DataFormatError(f"{source or 'input'}: '{LABEL_COLUMN}' column must contain only 0 or 1")
        labels = lab.astype(bool)
        values = values[:, :-1]
        names = names[:-1]
        if not names:
            raise DataFormatError(f"{source or 'input'}: no variable columns besides '{LABEL_COLUMN}'")
    return Dataset(values, names, labels, source)


def read_csv(path, header: bool | None = None) -> Dataset:
    path = Path(path)
    return parse_csv(path.read_text(encoding="utf-8"), header=header, source=str(path))


def _fmt(v):
    return "" if np.isnan(v) else repr(float(v))


def format_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if ds.column_names is not None:
        w.writerow(ds.column_names + ([LABEL_COLUMN] if ds.labels is not None else []))
    elif ds.labels is not None:
        w.writerow([f"x{j + 1}" for j in range(ds.values.shape[1])] + [LABEL_COLUMN])
    for n, row in enumerate(ds.values):
        cells = [_fmt(v) for v in row]
        if ds.labels is not None:
            cells.append("1" if ds.labels[n] else "0")
        w.writerow(cells)
    return buf.getvalue()


def write_csv(ds: Dataset, path):
    Path(path).write_text(format_csv(ds), encoding="utf-8")


@dataclass
class Standardization:
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, values):
        return (np.asarray(values, dtype=float) - self.mean) / self.scale

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["scale"], dtype=float))


def standardize(ds: Dataset):
    """Zero-mean, unit-variance columns using observed entries only."""
    X = ds.values
    obs = ~np.isnan(X)
    counts = obs.sum(axis=0)
    names = ds.column_names or [f"column {j + 1}" for j in range(X.shape[1])]
    for j in np.flatnonzero(counts < 2):
        raise ValueError(f"{names[j]} has fewer than two observed values")
    mean = np.nanmean(X, axis=0)
    scale = np.sqrt(np.nanmean((X - mean) ** 2, axis=0))
    for j in np.flatnonzero(scale == 0):
        raise ValueError(f"{names[j]} has zero variance")
    rec = Standardization(mean, scale)
    return Dataset(rec.apply(X), ds.column_names, ds.labels, ds.source), rec


@dataclass
class ModelArtifact:
    mixture: MixtureParams
    thresholds: ThresholdSet | None = None
    config: dict = field(default_factory=dict)
    form: str = "posterior"
    standardization: Standardization | None = None
    format_version: int = FORMAT_VERSION


def _matrix(a):
    return [list(map(float, r)) for r in np.asarray(a)]


def artifact_to_dict(a: ModelArtifact) -> dict:
    m = a.mixture
    out = {
        "format_version": a.format_version,
        "statistic_form": a.form,
        "mixture": {
            "K": m.K,
            "d": m.d,
            "q": m.q,
            "pi": [float(v) for v in m.pi],
            "components": [
                {"W": _matrix(c.W), "mu": [float(v) for v in c.mu], "sigma2": float(c.sigma2)} for c in m.components
            ],
        },
        "thresholds": None,
        "config": a.config,
        "standardization": None if a.standardization is None else a.standardization.to_dict(),
    }
    if a.thresholds is not None:
        th = a.thresholds
        out["thresholds"] = {
            "t2": float(th.t2),
            "spe": float(th.spe),
            "tc2": float(th.tc2),
            "alpha": float(th.alpha),
            "bandwidths": {k: float(v) for k, v in sorted(th.bandwidths.items())},
            "n_samples": int(th.n_samples),
        }
    return out


def dumps_model(a: ModelArtifact) -> str:
    return json.dumps(artifact_to_dict(a), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _require(cond, msg):
    if not cond:
        raise ModelFormatError(msg)


def artifact_from_dict(doc: dict) -> ModelArtifact:
    _require(isinstance(doc, dict), "model document must be a JSON object")
    version = doc.get("format_version")
    _require(version == FORMAT_VERSION, f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    form = doc.get("statistic_form")
    _require(form in FORMS, f"statistic_form must be one of {FORMS}, got {form!r}")
    mix = doc.get("mixture")
    _require(isinstance(mix, dict), "missing 'mixture' section")
    try:
        K, d, q = int(mix["K"]), int(mix["d"]), int(mix["q"])
        pi = np.asarray(mix["pi"], dtype=float)
        comps = mix["components"]
        _require(len(comps) == K, f"K={K} but {len(comps)} components")
        _require(pi.shape == (K,), f"pi must have {K} entries")
        locals_ = []
        for n, c in enumerate(comps):
            W = np.asarray(c["W"], dtype=float)
            mu = np.asarray(c["mu"], dtype=float)
            _require(W.shape == (d, q), f"component {n}: W has shape {W.shape}, expected {(d, q)}")
            _require(mu.shape == (d,), f"component {n}: mu has shape {mu.shape}, expected {(d,)}")
            locals_.append(PpcaParams(W, mu, float(c["sigma2"])))
        mixture = MixtureParams(tuple(locals_), pi)
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed mixture section: {exc}") from None
    except ValueError as exc:
        raise ModelFormatError(f"invalid mixture: {exc}") from None

    th = None
    if doc.get("thresholds") is not None:
        t = doc["thresholds"]
        try:
            alpha = float(t["alpha"])
            _require(0 < alpha < 1, "threshold alpha must lie in (0, 1)")
            th = ThresholdSet(float(t["t2"]), float(t["spe"]), float(t["tc2"]), alpha,
                              {k: float(v) for k, v in t["bandwidths"].items()}, int(t["n_samples"]))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ModelFormatError(f"malformed thresholds section: {exc}") from None
    std = doc.get("standardization")
    if std is not None:
        try:
            std = Standardization.from_dict(std)
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed standardization section: {exc}") from None
        _require(std.mean.shape == (d,) and std.scale.shape == (d,), "standardization vectors must have length d")
    config = doc.get("config") or {}
    _require(isinstance(config, dict), "config must be an object")
    return ModelArtifact(mixture, th, config, form, std, version)


def loads_model(text: str) -> ModelArtifact:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not valid JSON: {exc}") from None
    return artifact_from_dict(doc)


def write_model(a: ModelArtifact, path):
    Path(path).write_text(dumps_model(a), encoding="utf-8")


def read_model(path) -> ModelArtifact:
    return loads_model(Path(path).read_text(encoding="utf-8"))
