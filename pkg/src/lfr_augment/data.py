"""
Sampled input/output records and the diagonal normalization transforms applied to them.
"""

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Literal, Optional

import numpy as np

from lfr_augment.errors import DataError, DegenerateDataError

logger = logging.getLogger("global_logger")

SplitTag = Literal["est", "val", "test"]


def _as_2d(values: Any, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64)
    if array.ndim == 1:
        array = array[:, None]
    if array.ndim != 2:
        raise DataError(f"{name} must be a (N, channels) array, got shape {array.shape}")
    return array


@dataclass(frozen=True)
class NormalizationTransforms:
    """Per-channel affine maps: normalized = (raw - mean) * scale.

    Scales are the inverse standard deviations, i.e. the diagonals of T_u, T_y and T_x.
    States carry no mean.
    """

    u_mean: np.ndarray
    u_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray
    x_scale: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        for name in ("u_mean", "u_scale", "y_mean", "y_scale", "x_scale"):
            value = getattr(self, name)
            if value is None:
                continue
            array = np.asarray(value, dtype=np.float64).ravel()
            if not np.all(np.isfinite(array)):
                raise DegenerateDataError(f"{name} has non-finite entries")
            if name.endswith("scale") and np.any(array <= 0):
                raise DegenerateDataError(f"{name} must be strictly positive")
            object.__setattr__(self, name, array)

    @classmethod
    def identity(cls, n_u: int, n_y: int, n_x: Optional[int] = None) -> "NormalizationTransforms":
        return cls(
            u_mean=np.zeros(n_u),
            u_scale=np.ones(n_u),
            y_mean=np.zeros(n_y),
            y_scale=np.ones(n_y),
            x_scale=None if n_x is None else np.ones(n_x),
        )

    @property
    def T_u(self) -> np.ndarray:
        return np.diag(self.u_scale)

    @property
    def T_y(self) -> np.ndarray:
        return np.diag(self.y_scale)

    @property
    def T_x(self) -> np.ndarray:
        if self.x_scale is None:
            raise DataError("state scaling not fitted yet")
        return np.diag(self.x_scale)

    def with_state_scale(self, x_scale: Any) -> "NormalizationTransforms":
        return replace(self, x_scale=np.asarray(x_scale, dtype=np.float64))

    def normalize_u(self, u: Any) -> np.ndarray:
        return (np.asarray(u, dtype=np.float64) - self.u_mean) * self.u_scale

    def denormalize_u(self, u: Any) -> np.ndarray:
        return np.asarray(u, dtype=np.float64) / self.u_scale + self.u_mean

    def normalize_y(self, y: Any) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.y_mean) * self.y_scale

    def denormalize_y(self, y: Any) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) / self.y_scale + self.y_mean

    def normalize_x(self, x: Any) -> np.ndarray:
        if self.x_scale is None:
            raise DataError("state scaling not fitted yet")
        return np.asarray(x, dtype=np.float64) * self.x_scale

    def denormalize_x(self, x: Any) -> np.ndarray:
        if self.x_scale is None:
            raise DataError("state scaling not fitted yet")
        return np.asarray(x, dtype=np.float64) / self.x_scale

    def apply(self, data: "Dataset") -> "Dataset":
        """Return a normalized copy of a raw dataset."""
        if data.norm is not None:
            raise DataError(f"{data.split} split is already normalized")
        return replace(
            data,
            u=self.normalize_u(data.u),
            y=self.normalize_y(data.y),
            y_clean=None if data.y_clean is None else self.normalize_y(data.y_clean),
            norm=self,
        )

    def to_dict(self) -> dict[str, Optional[list[float]]]:
        return {
            "u_mean": self.u_mean.tolist(),
            "u_scale": self.u_scale.tolist(),
            "y_mean": self.y_mean.tolist(),
            "y_scale": self.y_scale.tolist(),
            "x_scale": None if self.x_scale is None else self.x_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "NormalizationTransforms":
        x_scale = payload.get("x_scale")
        return cls(
            u_mean=np.asarray(payload["u_mean"], dtype=np.float64),
            u_scale=np.asarray(payload["u_scale"], dtype=np.float64),
            y_mean=np.asarray(payload["y_mean"], dtype=np.float64),
            y_scale=np.asarray(payload["y_scale"], dtype=np.float64),
            x_scale=None if x_scale is None else np.asarray(x_scale, dtype=np.float64),
        )


@dataclass(frozen=True)
class Dataset:
    """Input/output records of one split.

    `x_base` holds the baseline-simulated states of the extended estimation set,
    `norm` is set once the records have been normalized.
    """

    u: np.ndarray
    y: np.ndarray
    ts: float
    split: SplitTag
    y_clean: Optional[np.ndarray] = None
    x_base: Optional[np.ndarray] = None
    norm: Optional[NormalizationTransforms] = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        u = _as_2d(self.u, "u")
        y = _as_2d(self.y, "y")
        if u.shape[0] != y.shape[0]:
            raise DataError(f"u has {u.shape[0]} samples but y has {y.shape[0]}")
        if not self.ts > 0:
            raise DataError(f"sampling time must be positive, got {self.ts}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        if self.y_clean is not None:
            y_clean = _as_2d(self.y_clean, "y_clean")
            if y_clean.shape != y.shape:
                raise DataError("y_clean must have the shape of y")
            object.__setattr__(self, "y_clean", y_clean)
        if self.x_base is not None:
            x_base = _as_2d(self.x_base, "x_base")
            if x_base.shape[0] != u.shape[0]:
                raise DataError("x_base must have one state per sample")
            object.__setattr__(self, "x_base", x_base)

    @property
    def N(self) -> int:
        return int(self.u.shape[0])

    @property
    def n_u(self) -> int:
        return int(self.u.shape[1])

    @property
    def n_y(self) -> int:
        return int(self.y.shape[1])

    def head(self, n: int) -> "Dataset":
        """First n samples, e.g. for desk-scale runs."""
        return replace(
            self,
            u=self.u[:n],
            y=self.y[:n],
            y_clean=None if self.y_clean is None else self.y_clean[:n],
            x_base=None if self.x_base is None else self.x_base[:n],
        )

    def raw_y(self) -> np.ndarray:
        return self.y if self.norm is None else self.norm.denormalize_y(self.y)

    def to_csv(self, path: Path) -> None:
        """Write `k,u,y,y_clean` records plus a JSON sidecar next to the CSV."""
        path.parent.mkdir(parents=True, exist_ok=True)
        u_cols = _column_names("u", self.n_u)
        y_cols = _column_names("y", self.n_y)
        clean_cols = _column_names("y_clean", self.n_y) if self.y_clean is not None else []
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["k", *u_cols, *y_cols, *clean_cols])
            for k in range(self.N):
                row = [str(k)]
                row += [_fmt(v) for v in self.u[k]]
                row += [_fmt(v) for v in self.y[k]]
                if self.y_clean is not None:
                    row += [_fmt(v) for v in self.y_clean[k]]
                writer.writerow(row)
        sidecar = {"ts": self.ts, "split": self.split, **self.metadata}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, path: Path) -> "Dataset":
        if not path.exists():
            raise DataError(f"dataset file not found: {path}")
        sidecar_path = path.with_suffix(".json")
        if not sidecar_path.exists():
            raise DataError(f"dataset sidecar not found: {sidecar_path}")
        sidecar = json.loads(sidecar_path.read_text())
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            rows = np.asarray([[float(v) for v in row] for row in reader], dtype=np.float64)
        if rows.size == 0:
            raise DataError(f"dataset {path} has no records")
        columns = {name: i for i, name in enumerate(header)}
        u = rows[:, [columns[c] for c in header if _is_channel(c, "u")]]
        y = rows[:, [columns[c] for c in header if _is_channel(c, "y")]]
        clean_idx = [columns[c] for c in header if _is_channel(c, "y_clean")]
        metadata = {k: v for k, v in sidecar.items() if k not in ("ts", "split")}
        return cls(
            u=u,
            y=y,
            ts=float(sidecar["ts"]),
            split=sidecar["split"],
            y_clean=rows[:, clean_idx] if clean_idx else None,
            metadata=metadata,
        )


def _column_names(prefix: str, count: int) -> list[str]:
    return [prefix] if count == 1 else [f"{prefix}{i}" for i in range(count)]


def _is_channel(column: str, prefix: str) -> bool:
    if column == prefix:
        return True
    return column.startswith(prefix) and column[len(prefix) :].isdigit()


def _fmt(value: float) -> str:
    return repr(float(value))


def fit_normalization(est: Dataset) -> NormalizationTransforms:
    """Per-channel means and inverse standard deviations of the estimation split."""
    if est.N == 0:
        raise DataError("estimation split is empty")
    u_std = est.u.std(axis=0)
    y_std = est.y.std(axis=0)
    for name, std in (("u", u_std), ("y", y_std)):
        if np.any(std <= 0) or not np.all(np.isfinite(std)):
            channel = int(np.argmin(std))
            raise DegenerateDataError(f"channel {name}[{channel}] has zero variance")
    norm = NormalizationTransforms(
        u_mean=est.u.mean(axis=0),
        u_scale=1.0 / u_std,
        y_mean=est.y.mean(axis=0),
        y_scale=1.0 / y_std,
    )
    logger.info(f"Fitted normalization: sigma_u={u_std}, sigma_y={y_std}")
    return norm
