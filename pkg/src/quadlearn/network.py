"""Per-axis feed-forward controller network.

Each axis network is ``scale -> tanh hidden layers -> linear output -> unscale``.
Parameters live in one flat float64 vector, layer by layer, each layer stored
as its weight matrix (out x in, row-major) followed by its bias.

The forward pass contracts with ``einsum`` instead of ``matmul``: BLAS kernels
round differently for 1-row and many-row operands, and the online trainer
relies on a sample's recomputed output matching, bit for bit, the output
produced when it was recorded.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import CorruptFile, EmptyBatch, NonFinite, VersionMismatch

FEATURE_CLAMP = 5.0
NSE_DENOM_FLOOR = 1e-12
MODEL_FORMAT = "quadlearn-model"
MODEL_VERSION = 1
AXES = ("x", "y", "z")


@dataclass(frozen=True)
class Architecture:
    n_inputs: int = 6
    hidden: tuple[int, ...] = (6, 6)
    n_outputs: int = 1

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.n_inputs, *self.hidden, self.n_outputs)

    @cached_property
    def shapes(self) -> list[tuple[int, int]]:
        s = self.sizes
        return [(s[i + 1], s[i]) for i in range(len(s) - 1)]

    @cached_property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.shapes)


@dataclass(frozen=True)
class ScalingParams:
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: float = 0.0
    out_std: float = 1.0
    clamp: float = FEATURE_CLAMP

    @classmethod
    def identity(cls, n_inputs: int = 6) -> "ScalingParams":
        return cls(np.zeros(n_inputs), np.ones(n_inputs))

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray, clamp: float = FEATURE_CLAMP) -> "ScalingParams":
        """Mean/std statistics; near-constant channels get std = 1."""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        sd = X.std(axis=0)
        sd = np.where(sd < 1e-9, 1.0, sd)
        ysd = float(y.std())
        return cls(X.mean(axis=0), sd, float(y.mean()), ysd if ysd >= 1e-9 else 1.0, clamp)

    def scale(self, X: np.ndarray) -> np.ndarray:
        return np.clip((X - self.in_mean) / self.in_std, -self.clamp, self.clamp)

    def scale_output(self, y):
        return (np.asarray(y, dtype=float) - self.out_mean) / self.out_std

    def unscale_output(self, z):
        return np.asarray(z, dtype=float) * self.out_std + self.out_mean

    def to_dict(self) -> dict[str, Any]:
        return {
            "in_mean": self.in_mean.tolist(),
            "in_std": self.in_std.tolist(),
            "out_mean": self.out_mean,
            "out_std": self.out_std,
            "clamp": self.clamp,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScalingParams":
        return cls(
            np.array(d["in_mean"], dtype=float),
            np.array(d["in_std"], dtype=float),
            float(d["out_mean"]),
            float(d["out_std"]),
            float(d["clamp"]),
        )


def unpack(params: np.ndarray, arch: Architecture) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``(W, b)`` into the flat parameter vector."""
    layers = []
    k = 0
    for o, i in arch.shapes:
        W = params[k : k + o * i].reshape(o, i)
        k += o * i
        layers.append((W, params[k : k + o]))
        k += o
    return layers


def _affine(A: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    # row-independent rounding, see module docstring
    return b + np.einsum("ni,oi->no", A, W)


def _activations(params, arch, scaling, X, prescaled: bool = False) -> list[np.ndarray]:
    acts = [X if prescaled else scaling.scale(X)]
    layers = unpack(params, arch)
    for W, b in layers[:-1]:
        acts.append(np.tanh(_affine(acts[-1], W, b)))
    W, b = layers[-1]
    acts.append(_affine(acts[-1], W, b))
    return acts


def forward_batch(params: np.ndarray, arch: Architecture, scaling: ScalingParams, X: np.ndarray) -> np.ndarray:
    """Unscaled outputs for a batch of feature rows, shape (N,)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = _activations(params, arch, scaling, X)[-1][:, 0]
    y = scaling.unscale_output(z)
    if not np.all(np.isfinite(y)):
        raise NonFinite("network output is not finite")
    return y


def forward(params: np.ndarray, arch: Architecture, scaling: ScalingParams, features) -> float:
    return float(forward_batch(params, arch, scaling, np.reshape(features, (1, -1)))[0])


def nse_denominator(targets: np.ndarray) -> tuple[float, bool]:
    """Returns (denominator, fallback); fallback means plain MSE is used."""
    y = np.asarray(targets, dtype=float)
    d = float(np.sum((y - y.mean()) ** 2))
    if d < NSE_DENOM_FLOOR:
        return float(y.size), True
    return d, False


def loss_nse(predictions, targets) -> float:
    """Normalized squared error; falls back to MSE for (near-)constant targets."""
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(targets, dtype=float)
    if p.size == 0 or y.size == 0:
        raise EmptyBatch("loss of an empty batch")
    if p.shape != y.shape:
        raise ValueError("predictions and targets differ in length")
    d, _ = nse_denominator(y)
    return float(np.sum((p - y) ** 2) / d)


def loss_and_gradient(
    params: np.ndarray,
    arch: Architecture,
    scaling: ScalingParams,
    X: np.ndarray,
    y: np.ndarray,
    denom: float | None = None,
    prescaled: bool = False,
) -> tuple[float, np.ndarray]:
    """NSE loss over the batch and its exact gradient by reverse-mode accumulation.

    ``prescaled`` means X already went through ``scaling.scale`` (trainers do
    this once per call rather than once per evaluation).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise EmptyBatch("gradient of an empty batch")
    if denom is None:
        denom, _ = nse_denominator(y)
    acts = _activations(params, arch, scaling, X, prescaled)
    pred = scaling.unscale_output(acts[-1][:, 0])
    r = pred - y
    loss = float(np.sum(r * r) / denom)

    grad = np.empty_like(params)
    layers = unpack(params, arch)
    # d loss / d z_out, through the unscaling neuron
    delta = (2.0 * scaling.out_std / denom) * r[:, None]
    k = arch.n_params
    for li in range(len(layers) - 1, -1, -1):
        W, b = layers[li]
        a_in = acts[li]
        o, i = W.shape
        k -= o
        grad[k : k + o] = delta.sum(axis=0)
        k -= o * i
        grad[k : k + o * i] = (delta.T @ a_in).ravel()
        if li > 0:
            delta = (delta @ W) * (1.0 - a_in * a_in)
    if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NonFinite("non-finite loss or gradient")
    return loss, grad


def gradient(params, arch, scaling, X, y) -> np.ndarray:
    return loss_and_gradient(params, arch, scaling, X, y)[1]


def batch_loss(params, arch, scaling, X, y, denom: float | None = None) -> float:
    pred = forward_batch(params, arch, scaling, X)
    if denom is None:
        return loss_nse(pred, y)
    return float(np.sum((pred - np.asarray(y)) ** 2) / denom)


def evaluation_subset(n: int, max_rows: int = 2000) -> np.ndarray:
    """Evenly strided row indices, deterministic in ``n``."""
    if n <= max_rows:
        return np.arange(n)
    return np.linspace(0, n - 1, max_rows).round().astype(int)


def init_random_search(
    arch: Architecture,
    scaling: ScalingParams,
    X: np.ndarray,
    y: np.ndarray,
    n_candidates: int,
    seed: int,
    low: float = -0.5,
    high: float = 0.5,
) -> np.ndarray:
    """Best of ``n_candidates`` uniform draws, scored by NSE on a fixed subset."""
    if n_candidates < 1:
        raise ValueError("need at least one candidate")
    if len(y) == 0:
        raise EmptyBatch("random search needs data")
    rng = np.random.default_rng(seed)
    idx = evaluation_subset(len(y))
    Xs, ys = np.asarray(X)[idx], np.asarray(y)[idx]
    best, best_loss = None, math.inf
    for _ in range(n_candidates):
        cand = rng.uniform(low, high, arch.n_params)
        loss = batch_loss(cand, arch, scaling, Xs, ys)
        if loss < best_loss:
            best, best_loss = cand, loss
    return best


@dataclass
class AxisNetwork:
    """One axis controller: architecture, frozen scaling and trainable parameters."""

    arch: Architecture
    scaling: ScalingParams
    params: np.ndarray

    def __post_init__(self) -> None:
        self.params = np.asarray(self.params, dtype=float)
        if self.params.shape != (self.arch.n_params,):
            raise ValueError(f"expected {self.arch.n_params} parameters, got {self.params.shape}")

    def __call__(self, features) -> float:
        return forward(self.params, self.arch, self.scaling, features)

    def predict(self, X) -> np.ndarray:
        return forward_batch(self.params, self.arch, self.scaling, X)

    def copy(self) -> "AxisNetwork":
        return AxisNetwork(self.arch, self.scaling, self.params.copy())


@dataclass
class ControllerModel:
    """The three axis networks plus provenance, i.e. what a model file holds."""

    nets: list[AxisNetwork]
    metadata: dict[str, Any] = field(default_factory=dict)

    def copy(self) -> "ControllerModel":
        return ControllerModel([n.copy() for n in self.nets], json.loads(json.dumps(self.metadata)))

    def outputs(self, windows: np.ndarray) -> np.ndarray:
        return np.array([net(w) for net, w in zip(self.nets, windows)])


def model_to_dict(model: ControllerModel) -> dict[str, Any]:
    arch = model.nets[0].arch
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "architecture": {"n_inputs": arch.n_inputs, "hidden": list(arch.hidden), "n_outputs": arch.n_outputs},
        "axes": {
            name: {"scaling": net.scaling.to_dict(), "weights": net.params.tolist()}
            for name, net in zip(AXES, model.nets)
        },
        "metadata": model.metadata,
    }


def model_from_dict(d: dict[str, Any]) -> ControllerModel:
    if not isinstance(d, dict) or d.get("format") != MODEL_FORMAT:
        raise CorruptFile("not a model file")
    if d.get("version") != MODEL_VERSION:
        raise VersionMismatch(f"model version {d.get('version')!r}, expected {MODEL_VERSION}")
    try:
        a = d["architecture"]
        arch = Architecture(int(a["n_inputs"]), tuple(int(h) for h in a["hidden"]), int(a["n_outputs"]))
        nets = [
            AxisNetwork(arch, ScalingParams.from_dict(d["axes"][name]["scaling"]), np.array(d["axes"][name]["weights"]))
            for name in AXES
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"malformed model file: {exc}") from exc
    return ControllerModel(nets, dict(d.get("metadata", {})))


def serialize_model(model: ControllerModel, path: str | Path) -> None:
    # json writes shortest-repr floats, so the round trip is bit-exact
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def deserialize_model(path: str | Path) -> ControllerModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    return model_from_dict(d)


def new_model(arch: Architecture, scalings: Sequence[ScalingParams], params: Sequence[np.ndarray], **metadata) -> ControllerModel:
    return ControllerModel([AxisNetwork(arch, s, p) for s, p in zip(scalings, params)], dict(metadata))
