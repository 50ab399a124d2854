"""Sparse autoencoder with a sigmoid encoder and a two-hidden-layer decoder.

Architecture (D inputs, L latent units, hidden widths h2, h3)::

    z  = sigmoid(W1 x + b1)            # L
    z2 = act2(W2 z + b2)               # h2
    z3 = act3(W3 z2 + b3)              # h3
    x^ = W4 z3 + b4                    # D, linear output

Training objective on a batch ``X`` of n images::

    total = mse + beta * sum_j KL(rho || rho_hat_j) + lambda * 0.5 * sum(W**2)

where ``rho_hat_j`` is the batch-mean activation of latent unit j and the
L2 term covers the four weight matrices only.

Parameters are flattened in the canonical order
``W1, b1, W2, b2, W3, b3, W4, b4`` (matrices row-major) for the optimizer
and for the on-disk format.
"""

from __future__ import annotations

import logging
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .lbfgs import LbfgsResult, minimize_lbfgs

log = logging.getLogger(__name__)

MAGIC = b"AEMD"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised when a serialized model cannot be decoded."""


class TrainingError(RuntimeError):
    """Raised when the objective becomes non-finite during optimization."""


def sigmoid(a: np.ndarray) -> np.ndarray:
    # split by sign so large |a| never overflows exp
    out = np.empty_like(a, dtype=np.float64)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


ACTIVATIONS = {
    # name: (code, f(a), f'(a) given (a, f(a)))
    "sigmoid": (1, sigmoid, lambda a, y: y * (1.0 - y)),
    "tanh": (2, np.tanh, lambda a, y: 1.0 - y * y),
    "linear": (3, lambda a: a, lambda a, y: np.ones_like(a)),
}
_ACT_BY_CODE = {code: name for name, (code, _, _) in ACTIVATIONS.items()}


@dataclass(frozen=True)
class AeDims:
    d: int
    latent: int = 16
    h2: int = 16
    h3: int = 16
    act2: str = "sigmoid"
    act3: str = "sigmoid"

    def __post_init__(self):
        for name in ("d", "latent", "h2", "h3"):
            if getattr(self, name) < 1:
                raise ValueError(f"layer size {name} must be >= 1, got {getattr(self, name)}")
        for name in ("act2", "act3"):
            if getattr(self, name) not in ACTIVATIONS:
                raise ValueError(f"unknown activation {getattr(self, name)!r}")

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        d, L, h2, h3 = self.d, self.latent, self.h2, self.h3
        return [(L, d), (L,), (h2, L), (h2,), (h3, h2), (h3,), (d, h3), (d,)]

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 250
    sparsity_weight: float = 0.5
    sparsity_target: float = 0.05
    l2_weight: float = 0.01
    latent: int = 16
    hidden: tuple[int, int] = (16, 16)
    seed: int = 0
    history_size: int = 10
    grad_tol: float = 1e-7

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.sparsity_weight < 0 or self.l2_weight < 0:
            raise ValueError("regularization weights must be >= 0")
        if not 0.0 < self.sparsity_target < 1.0:
            raise ValueError("sparsity_target must lie in (0, 1)")

    def dims_for(self, d: int) -> AeDims:
        return AeDims(d, self.latent, self.hidden[0], self.hidden[1])

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "sparsity_weight": self.sparsity_weight,
            "sparsity_target": self.sparsity_target,
            "l2_weight": self.l2_weight,
            "latent": self.latent,
            "hidden": list(self.hidden),
            "seed": self.seed,
            "history_size": self.history_size,
            "grad_tol": self.grad_tol,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    mse: float
    sparsity_penalty: float
    l2_penalty: float


@dataclass
class AeModel:
    dims: AeDims
    params: list[np.ndarray]  # canonical order, see module docstring
    config: TrainConfig = field(default_factory=TrainConfig)

    @property
    def enc_weights(self) -> np.ndarray:
        return self.params[0]

    @property
    def enc_bias(self) -> np.ndarray:
        return self.params[1]

    @property
    def dec_hidden(self) -> list[tuple[np.ndarray, np.ndarray, str]]:
        return [
            (self.params[2], self.params[3], self.dims.act2),
            (self.params[4], self.params[5], self.dims.act3),
        ]

    @property
    def out_weights(self) -> np.ndarray:
        return self.params[6]

    @property
    def out_bias(self) -> np.ndarray:
        return self.params[7]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for p in self.params])

    def with_vector(self, theta: np.ndarray) -> "AeModel":
        return AeModel(self.dims, unpack(self.dims, theta), self.config)

    def copy(self) -> "AeModel":
        return AeModel(self.dims, [p.copy() for p in self.params], self.config)


def unpack(dims: AeDims, theta: np.ndarray) -> list[np.ndarray]:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (dims.n_params,):
        raise ValueError(f"expected {dims.n_params} parameters, got {theta.shape}")
    out, pos = [], 0
    for shape in dims.shapes:
        size = int(np.prod(shape))
        out.append(theta[pos:pos + size].reshape(shape).copy())
        pos += size
    return out


def init_model(dims: AeDims, seed: int = 0, config: TrainConfig | None = None) -> AeModel:
    """Uniform fan-in/fan-out initialization, zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    for shape in dims.shapes:
        if len(shape) == 2:
            fan_out, fan_in = shape
            r = np.sqrt(6.0 / (fan_in + fan_out))
            params.append(rng.uniform(-r, r, size=shape))
        else:
            params.append(np.zeros(shape))
    return AeModel(dims, params, config or TrainConfig(latent=dims.latent, hidden=(dims.h2, dims.h3), seed=seed))


def _as_batch(x: np.ndarray, d: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != d:
        raise ValueError(f"input dimension mismatch: model expects {d}, got {x.shape}")
    return x2, single


def _forward(m: AeModel, X: np.ndarray) -> tuple[np.ndarray, ...]:
    W1, b1, W2, b2, W3, b3, W4, b4 = m.params
    _, f2, _ = ACTIVATIONS[m.dims.act2]
    _, f3, _ = ACTIVATIONS[m.dims.act3]
    z = sigmoid(X @ W1.T + b1)
    a2 = z @ W2.T + b2
    z2 = f2(a2)
    a3 = z2 @ W3.T + b3
    z3 = f3(a3)
    xh = z3 @ W4.T + b4
    return z, a2, z2, a3, z3, xh


def encode(m: AeModel, x: np.ndarray) -> np.ndarray:
    X, single = _as_batch(x, m.dims.d)
    z = sigmoid(X @ m.params[0].T + m.params[1])
    return z[0] if single else z


def decode(m: AeModel, z: np.ndarray) -> np.ndarray:
    Z, single = _as_batch(z, m.dims.latent)
    _, W2, b2, W3, b3, W4, b4 = m.params[1:]
    _, f2, _ = ACTIVATIONS[m.dims.act2]
    _, f3, _ = ACTIVATIONS[m.dims.act3]
    z3 = f3(f2(Z @ W2.T + b2) @ W3.T + b3)
    xh = z3 @ W4.T + b4
    return xh[0] if single else xh


def reconstruct(m: AeModel, x: np.ndarray) -> np.ndarray:
    X, single = _as_batch(x, m.dims.d)
    xh = _forward(m, X)[-1]
    return xh[0] if single else xh


def reconstruction_mse(m: AeModel, x: np.ndarray) -> float | np.ndarray:
    """Mean squared pixel error; a vector when ``x`` is a batch."""
    X, single = _as_batch(x, m.dims.d)
    err = np.mean((_forward(m, X)[-1] - X) ** 2, axis=1)
    return float(err[0]) if single else err


def _kl(rho: float, rho_hat: np.ndarray) -> np.ndarray:
    return rho * np.log(rho / rho_hat) + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - rho_hat))


def _objective(m: AeModel, X: np.ndarray, cfg: TrainConfig, need_grad: bool):
    n, d = X.shape
    W1, b1, W2, b2, W3, b3, W4, b4 = m.params
    z, a2, z2, a3, z3, xh = _forward(m, X)
    diff = xh - X
    mse = float(np.sum(diff * diff) / (n * d))

    rho, beta, lam = cfg.sparsity_target, cfg.sparsity_weight, cfg.l2_weight
    rho_hat = np.clip(z.mean(axis=0), 1e-300, 1.0 - 1e-16)
    sparsity = float(np.sum(_kl(rho, rho_hat)))
    l2 = 0.5 * float(sum(np.sum(W * W) for W in (W1, W2, W3, W4)))
    parts = LossBreakdown(mse + beta * sparsity + lam * l2, mse, sparsity, l2)
    if not need_grad:
        return parts, None

    _, _, d2 = ACTIVATIONS[m.dims.act2]
    _, _, d3 = ACTIVATIONS[m.dims.act3]
    dxh = (2.0 / (n * d)) * diff
    gW4 = dxh.T @ z3 + lam * W4
    gb4 = dxh.sum(axis=0)
    da3 = (dxh @ W4) * d3(a3, z3)
    gW3 = da3.T @ z2 + lam * W3
    gb3 = da3.sum(axis=0)
    da2 = (da3 @ W3) * d2(a2, z2)
    gW2 = da2.T @ z + lam * W2
    gb2 = da2.sum(axis=0)
    dz = da2 @ W2 + (beta / n) * (-rho / rho_hat + (1.0 - rho) / (1.0 - rho_hat))
    da1 = dz * z * (1.0 - z)
    gW1 = da1.T @ X + lam * W1
    gb1 = da1.sum(axis=0)
    grad = np.concatenate([g.reshape(-1) for g in (gW1, gb1, gW2, gb2, gW3, gb3, gW4, gb4)])
    return parts, grad


def _check_batch(m: AeModel, batch) -> np.ndarray:
    X, _ = _as_batch(batch, m.dims.d)
    if X.shape[0] == 0:
        raise ValueError("batch must contain at least one image")
    return X


def loss(m: AeModel, batch, cfg: TrainConfig) -> LossBreakdown:
    return _objective(m, _check_batch(m, batch), cfg, need_grad=False)[0]


def gradient(m: AeModel, batch, cfg: TrainConfig) -> np.ndarray:
    """Gradient of ``loss(...).total`` in canonical parameter order."""
    return _objective(m, _check_batch(m, batch), cfg, need_grad=True)[1]


@dataclass
class TrainResult:
    model: AeModel
    loss: LossBreakdown
    initial_loss: LossBreakdown
    best_history: list[float]  # best total loss after each iteration, index 0 = initial
    lbfgs: LbfgsResult | None


def fit(images, cfg: TrainConfig, callback=None) -> TrainResult:
    """Full-batch L-BFGS training; keeps the lowest-loss iterate seen."""
    X = np.asarray(images, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("training needs at least two images as an (n, D) matrix")
    model = init_model(cfg.dims_for(X.shape[1]), cfg.seed, cfg)
    initial, _ = _objective(model, X, cfg, need_grad=False)
    if cfg.epochs == 0:
        return TrainResult(model, initial, initial, [initial.total], None)

    def fun(theta):
        parts, grad = _objective(model.with_vector(theta), X, cfg, need_grad=True)
        return parts.total, grad

    result = minimize_lbfgs(
        fun,
        model.to_vector(),
        max_iter=cfg.epochs,
        history_size=cfg.history_size,
        grad_tol=cfg.grad_tol,
        callback=callback,
    )
    if not result.finite:
        raise TrainingError(f"objective became non-finite at iteration {result.n_iter}: {result.message}")
    best = model.with_vector(result.x)
    final, _ = _objective(best, X, cfg, need_grad=False)
    log.info("trained %d iterations (%s): loss %.6g -> %.6g", result.n_iter, result.message, initial.total, final.total)
    return TrainResult(best, final, initial, result.best_history, result)


def train(images, cfg: TrainConfig) -> AeModel:
    return fit(images, cfg).model


# -- persistence ------------------------------------------------------------

_HEADER = struct.Struct("<4sI")
_DIMS = struct.Struct("<QIIIBB")
_HYPER = struct.Struct("<IdddIIIIqId")


def save_model(m: AeModel) -> bytes:
    """Serialize as magic, version, dims, hyperparameters, float64 blob, CRC32."""
    dims, cfg = m.dims, m.config
    body = bytearray(_HEADER.pack(MAGIC, FORMAT_VERSION))
    body += _DIMS.pack(
        dims.d, dims.latent, dims.h2, dims.h3,
        ACTIVATIONS[dims.act2][0], ACTIVATIONS[dims.act3][0],
    )
    body += _HYPER.pack(
        cfg.epochs, cfg.sparsity_weight, cfg.sparsity_target, cfg.l2_weight,
        cfg.latent, cfg.hidden[0], cfg.hidden[1], cfg.history_size, cfg.seed,
        0, cfg.grad_tol,
    )
    body += m.to_vector().astype("<f8").tobytes()
    body += struct.pack("<I", zlib.crc32(body))
    return bytes(body)


def load_model(data: bytes) -> AeModel:
    fixed = _HEADER.size + _DIMS.size + _HYPER.size
    if len(data) < fixed + 4:
        raise ModelFormatError("model data truncated")
    magic, version = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise ModelFormatError("checksum mismatch")
    d, latent, h2, h3, c2, c3 = _DIMS.unpack_from(data, _HEADER.size)
    try:
        dims = AeDims(d, latent, h2, h3, _ACT_BY_CODE[c2], _ACT_BY_CODE[c3])
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"invalid dims block: {exc}") from None
    (epochs, beta, rho, lam, c_lat, c_h2, c_h3, hist, seed, _, gtol) = _HYPER.unpack_from(
        data, _HEADER.size + _DIMS.size
    )
    try:
        cfg = TrainConfig(epochs, beta, rho, lam, c_lat, (c_h2, c_h3), seed, hist, gtol)
    except ValueError as exc:
        raise ModelFormatError(f"invalid hyperparameter block: {exc}") from None
    blob = data[fixed:-4]
    if len(blob) != 8 * dims.n_params:
        raise ModelFormatError(f"expected {dims.n_params} parameters, found {len(blob) // 8}")
    theta = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(theta)):
        raise ModelFormatError("non-finite parameter values")
    return AeModel(dims, unpack(dims, theta), cfg)

