"""One-class spoofing detector: reconstruction error against a 3-sigma threshold."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ae
from .imaging import GridSpec, HistogramImage, normalize_image

SIGMA_MULTIPLIER = 3.0


class Decision(str, enum.Enum):
    LEGITIMATE = "legitimate"
    SPOOFED = "spoofed"


class DetectorCompatibilityError(ValueError):
    """Image geometry does not match what the detector was trained on."""


@dataclass(frozen=True)
class Verdict:
    mse: float
    tau: float
    decision: Decision

    @property
    def spoofed(self) -> bool:
        return self.decision is Decision.SPOOFED


@dataclass
class DetectorState:
    model: ae.AeModel
    tau: float
    mse_train: np.ndarray
    mean_train: float
    std_train: float
    grid: GridSpec | None = None
    info: dict = field(default_factory=dict)


def fit_threshold(mse_train) -> tuple[float, float, float]:
    """Return ``(tau, mean, std)`` with ``tau = mean + 3 * std``.

    ``std`` is the sample standard deviation (``n - 1`` denominator).
    """
    values = np.asarray(mse_train, dtype=np.float64).reshape(-1)
    if len(values) < 2:
        raise ValueError(f"need at least 2 training MSE values, got {len(values)}")
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise ValueError("training MSE values must be finite and non-negative")
    mean = math.fsum(values) / len(values)
    std = math.sqrt(math.fsum((values - mean) ** 2) / (len(values) - 1))
    return mean + SIGMA_MULTIPLIER * std, mean, std


def decide(mse: float, tau: float) -> Decision:
    return Decision.LEGITIMATE if mse <= tau else Decision.SPOOFED


def from_model(model: ae.AeModel, train_x: np.ndarray, grid: GridSpec | None = None) -> DetectorState:
    """Score the training images with ``model`` and fit the threshold on them."""
    mse_train = np.atleast_1d(ae.reconstruction_mse(model, np.atleast_2d(train_x)))
    tau, mean, std = fit_threshold(mse_train)
    return DetectorState(model, tau, mse_train, mean, std, grid)


def fit_detector(train_x: np.ndarray, cfg: ae.TrainConfig, grid: GridSpec | None = None) -> tuple[DetectorState, ae.TrainResult]:
    result = ae.fit(train_x, cfg)
    return from_model(result.model, train_x, grid), result


def _image_vector(d: DetectorState, image) -> np.ndarray:
    if isinstance(image, HistogramImage):
        if d.grid is not None and image.grid != d.grid:
            raise DetectorCompatibilityError(f"image grid {image.grid} does not match detector grid {d.grid}")
        x = normalize_image(image)
    else:
        x = np.asarray(image, dtype=np.float64).reshape(-1)
    if x.shape[0] != d.model.dims.d:
        raise DetectorCompatibilityError(f"image has {x.shape[0]} pixels, model expects {d.model.dims.d}")
    return x


def classify(d: DetectorState, image: HistogramImage | np.ndarray) -> Verdict:
    mse = float(ae.reconstruction_mse(d.model, _image_vector(d, image)))
    return Verdict(mse, d.tau, decide(mse, d.tau))


def score(d: DetectorState, x: np.ndarray) -> np.ndarray:
    """Reconstruction MSE for every row of a normalized image matrix."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != d.model.dims.d:
        raise DetectorCompatibilityError(f"images have {x.shape[1]} pixels, model expects {d.model.dims.d}")
    return np.atleast_1d(ae.reconstruction_mse(d.model, x))


# -- persistence ------------------------------------------------------------

def sidecar_path(model_path) -> Path:
    return Path(model_path).with_suffix(".json")


def save_detector(d: DetectorState, model_path) -> tuple[Path, Path]:
    """Write the model file and its JSON sidecar; returns both paths."""
    model_path = Path(model_path)
    side = sidecar_path(model_path)
    if side == model_path:
        raise ValueError("model path must not end in .json")
    model_path.write_bytes(ae.save_model(d.model))
    doc = {
        "model_file": model_path.name,
        "tau": d.tau,
        "mean_train": d.mean_train,
        "std_train": d.std_train,
        "mse_train": [float(v) for v in d.mse_train],
        "grid": d.grid.to_dict() if d.grid is not None else None,
        "info": d.info,
    }
    side.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return model_path, side


def load_detector(model_path) -> DetectorState:
    model_path = Path(model_path)
    model = ae.load_model(model_path.read_bytes())
    doc = json.loads(sidecar_path(model_path).read_text(encoding="utf-8"))
    grid = GridSpec.from_dict(doc["grid"]) if doc.get("grid") else None
    return DetectorState(
        model,
        float(doc["tau"]),
        np.asarray(doc["mse_train"], dtype=np.float64),
        float(doc["mean_train"]),
        float(doc["std_train"]),
        grid,
        doc.get("info", {}),
    )
