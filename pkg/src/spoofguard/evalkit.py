"""Evaluation protocol: ROC AUC, K-fold runs, SNR overlap and overhead timing."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from . import ae, detector
from .imaging import GridSpec, make_histogram, pgm_bytes
from .iq import IqChunk, chunk_snr

QUANTILE_LEVELS = (0.05, 0.5, 0.95)


def roc_auc(scores_legit, scores_spoof) -> float:
    """Area under the ROC curve for "spoof scores higher than legit scores".

    Computed as the Mann-Whitney statistic from mid-ranks, so ties count 1/2.
    """
    a = np.asarray(scores_legit, dtype=np.float64).reshape(-1)
    b = np.asarray(scores_spoof, dtype=np.float64).reshape(-1)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both score sets must be non-empty")
    ranks = rankdata(np.concatenate([a, b]))
    n_a, n_b = len(a), len(b)
    u = ranks[n_a:].sum() - n_b * (n_b + 1) / 2.0
    return float(u / (n_a * n_b))


def fold_quantiles(values: Sequence[float]) -> tuple[float, float, float]:
    """Linear-interpolation quantiles at 0.05, 0.5 and 0.95."""
    q = np.quantile(np.asarray(values, dtype=np.float64), QUANTILE_LEVELS, method="linear")
    return float(q[0]), float(q[1]), float(q[2])


def kfold_indices(n: int, k: int, seed: int = 0) -> list[np.ndarray]:
    """Shuffled partition of ``range(n)`` into ``k`` near-equal folds."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if n < k:
        raise ValueError(f"cannot split {n} images into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


@dataclass
class Overhead:
    tau_img_ms: float
    tau_ae_ms: float
    tau_total_ms: float
    model_bytes: int
    image_bytes: int
    reps: int


@dataclass
class FoldResult:
    fold: int
    n_train: int
    n_test_legit: int
    auc: float
    tau: float
    false_alarm_rate: float
    detection_rate: float
    final_loss: float
    iterations: int


@dataclass
class EvalReport:
    fold_aucs: list[float]
    quantiles: tuple[float, float, float]
    n_legit: int
    n_spoof: int
    folds: list[FoldResult] = field(default_factory=list)
    timing: Overhead | None = None
    config: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.fold_aucs)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "fold_aucs": self.fold_aucs,
            "quantiles": dict(zip(("q05", "q50", "q95"), self.quantiles)),
            "quantile_method": "linear interpolation on sorted fold AUCs",
            "n_legit": self.n_legit,
            "n_spoof": self.n_spoof,
            "folds": [asdict(f) for f in self.folds],
            "timing": asdict(self.timing) if self.timing else None,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "auc", "tau", "false_alarm_rate", "detection_rate", "n_train"])
        for f in self.folds:
            w.writerow([f.fold, repr(f.auc), repr(f.tau), repr(f.false_alarm_rate), repr(f.detection_rate), f.n_train])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [
            f"legitimate images: {self.n_legit}   spoofed images: {self.n_spoof}   folds: {self.k}",
            "",
            f"{'fold':>4}  {'train':>6}  {'ROC AUC':>8}  {'tau':>11}  {'FAR':>6}  {'DR':>6}",
        ]
        for f in self.folds:
            lines.append(
                f"{f.fold:>4}  {f.n_train:>6}  {f.auc:>8.4f}  {f.tau:>11.4e}  "
                f"{f.false_alarm_rate:>6.3f}  {f.detection_rate:>6.3f}"
            )
        q05, q50, q95 = self.quantiles
        lines += ["", f"ROC AUC quantiles  q0.05={q05:.4f}  q0.5={q50:.4f}  q0.95={q95:.4f}"]
        if self.timing:
            t = self.timing
            lines += [
                "",
                f"{'tau_img (ms)':<16}{t.tau_img_ms:.4f}",
                f"{'tau_ae (ms)':<16}{t.tau_ae_ms:.4f}",
                f"{'M_ae (MB)':<16}{t.model_bytes / 1e6:.2f}",
                f"{'M_image (KB)':<16}{t.image_bytes / 1e3:.2f}",
            ]
        return "\n".join(lines) + "\n"


def kfold_eval(
    legit_x: np.ndarray,
    spoof_x: np.ndarray,
    k: int,
    cfg: ae.TrainConfig,
    seed: int = 0,
    grid: GridSpec | None = None,
    on_fold: Callable[[int, detector.DetectorState, ae.TrainResult], None] | None = None,
) -> EvalReport:
    """K-fold evaluation over legitimate images; the spoof set is pure test data.

    Each fold trains the autoencoder and threshold on the other ``k - 1``
    legitimate folds, then scores the held-out legitimate fold together with
    every spoofed image.
    """
    legit_x = np.atleast_2d(np.asarray(legit_x, dtype=np.float64))
    spoof_x = np.atleast_2d(np.asarray(spoof_x, dtype=np.float64))
    if spoof_x.size == 0:
        raise ValueError("spoofed image set is empty")
    folds = kfold_indices(len(legit_x), k, seed)
    results = []
    for i, test_idx in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        if len(train_idx) < 2:
            raise ValueError(f"fold {i} has fewer than 2 training images")
        det, tr = detector.fit_detector(legit_x[train_idx], cfg, grid)
        s_legit = detector.score(det, legit_x[test_idx])
        s_spoof = detector.score(det, spoof_x)
        results.append(FoldResult(
            fold=i,
            n_train=len(train_idx),
            n_test_legit=len(test_idx),
            auc=roc_auc(s_legit, s_spoof),
            tau=det.tau,
            false_alarm_rate=float(np.mean(s_legit > det.tau)),
            detection_rate=float(np.mean(s_spoof > det.tau)),
            final_loss=tr.loss.total,
            iterations=tr.lbfgs.n_iter if tr.lbfgs else 0,
        ))
        if on_fold is not None:
            on_fold(i, det, tr)
    aucs = [r.auc for r in results]
    return EvalReport(aucs, fold_quantiles(aucs), len(legit_x), len(spoof_x), results, None, {
        "k": k, "seed": seed, "train": cfg.to_dict(), "grid": grid.to_dict() if grid else None,
    })


def snr_overlap(legit_chunks: Sequence[IqChunk], spoof_chunks: Sequence[IqChunk]) -> float:
    """Fraction of spoofed chunks whose SNR falls inside the legitimate [min, max] range.

    This is the complement of the "outside the legitimate interval" fraction.
    """
    if not legit_chunks or not spoof_chunks:
        raise ValueError("both chunk sets must be non-empty")
    legit = np.array([chunk_snr(c) for c in legit_chunks])
    spoof = np.array([chunk_snr(c) for c in spoof_chunks])
    inside = (spoof >= legit.min()) & (spoof <= legit.max())
    return float(np.mean(inside))


def snr_baseline_auc(legit_chunks: Sequence[IqChunk], spoof_chunks: Sequence[IqChunk]) -> float:
    """Best single-threshold AUC achievable from chunk SNR alone, either polarity."""
    auc = roc_auc([chunk_snr(c) for c in legit_chunks], [chunk_snr(c) for c in spoof_chunks])
    return max(auc, 1.0 - auc)


def measure_overhead(det: detector.DetectorState, c: IqChunk, grid: GridSpec, reps: int = 1000) -> Overhead:
    """Median wall-clock cost per chunk of imaging and of classification."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    t_img, t_ae, t_total = [], [], []
    clock = time.perf_counter
    for _ in range(reps):
        t0 = clock()
        img = make_histogram(c, grid)
        t1 = clock()
        detector.classify(det, img)
        t2 = clock()
        t_img.append(t1 - t0)
        t_ae.append(t2 - t1)
        t_total.append(t2 - t0)
    img = make_histogram(c, grid)
    return Overhead(
        tau_img_ms=1e3 * float(np.median(t_img)),
        tau_ae_ms=1e3 * float(np.median(t_ae)),
        tau_total_ms=1e3 * float(np.median(t_total)),
        model_bytes=len(ae.save_model(det.model)),
        image_bytes=len(pgm_bytes(img)),
        reps=reps,
    )

