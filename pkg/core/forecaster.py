"""
Forecasting networks with hand-derived derivatives.

Both architectures share one interface over a flat float64 parameter vector:
a batched forward pass returning a cache, summed and per-sample
vector-Jacobian products, a Jacobian-vector product and the exact
Hessian-vector product of the mean squared error.
"""
import logging
from abc import ABC, abstractmethod
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from models.configs import ArchKind, ArchSpec
from models.params import LossValue, ModelDims, ModelParams
from .projector import SegmentProjector, full_projector

logger = logging.getLogger(__name__)

Cache = Dict[str, Any]


class Forecaster(ABC):
    """Parameter layout plus the derivative kernels of one architecture."""

    def __init__(self, arch: ArchSpec, dims: ModelDims):
        self.arch = arch
        self.dims = ModelDims(*dims)
        self.shapes: List[Tuple[str, Tuple[int, ...]]] = self._build_shapes()
        sizes = [int(np.prod(shape)) for _, shape in self.shapes]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        if self._offsets[-1] != arch.param_count(self.dims):
            raise AssertionError("parameter layout disagrees with ArchSpec.param_count")

    @property
    def n_params(self) -> int:
        return int(self._offsets[-1])

    def unpack(self, theta: np.ndarray) -> Dict[str, np.ndarray]:
        """Views of theta, one per named parameter block."""
        return {
            name: theta[self._offsets[k]:self._offsets[k + 1]].reshape(shape)
            for k, (name, shape) in enumerate(self.shapes)
        }

    def pack(self, blocks: Dict[str, np.ndarray], lead: Tuple[int, ...] = ()) -> np.ndarray:
        """Concatenate blocks back into theta layout; `lead` keeps leading batch axes."""
        return np.concatenate([blocks[name].reshape(lead + (-1,)) for name, _ in self.shapes], axis=-1)

    def check_inputs(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        expected = (self.dims.n_features, self.dims.input_len)
        if X.ndim != 3 or X.shape[1:] != expected:
            raise ValueError(f"input shape {X.shape} does not match (batch,) + {expected}")
        return X

    def initial_theta(self, rng: np.random.Generator) -> np.ndarray:
        """Weights uniform in +-1/sqrt(fan_in), biases zero, drawn block by block."""
        blocks = {}
        for name, shape in self.shapes:
            fan_in = self._fan_in(name, shape)
            if fan_in is None:
                blocks[name] = np.zeros(shape)
            else:
                bound = 1.0 / np.sqrt(fan_in)
                blocks[name] = rng.uniform(-bound, bound, size=shape)
        return self.pack(blocks)

    @abstractmethod
    def _build_shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        ...

    @abstractmethod
    def _fan_in(self, name: str, shape: Tuple[int, ...]) -> Optional[int]:
        """Fan-in of a weight block, None for biases."""

    @abstractmethod
    def forward(self, theta: np.ndarray, X: np.ndarray) -> Tuple[np.ndarray, Cache]:
        """(B, D, L1) -> (B, L2) outputs and the cache used by the derivative kernels."""

    @abstractmethod
    def vjp(self, theta: np.ndarray, cache: Cache, cotangent: np.ndarray) -> np.ndarray:
        """(B, L2) cotangent -> (P,) gradient summed over the batch."""

    @abstractmethod
    def vjp_batch(self, theta: np.ndarray, cache: Cache, cotangents: np.ndarray) -> np.ndarray:
        """(B, R, L2) cotangents -> (B, R, P), one product per sample and row."""

    @abstractmethod
    def jvp(self, theta: np.ndarray, cache: Cache, tangent: np.ndarray) -> np.ndarray:
        """(P,) tangent -> (B, L2) directional derivative of the outputs."""

    @abstractmethod
    def loss_hvp(self, theta: np.ndarray, X: np.ndarray, Y: np.ndarray, tangent: np.ndarray) -> np.ndarray:
        """Exact Hessian of the batch-mean MSE times tangent, (P,)."""


class MLPForecaster(Forecaster):
    """
    Fully connected ReLU network on the flattened D x L1 input.

    ReLU uses the subgradient 0 at exactly zero pre-activation.
    """

    def _build_shapes(self):
        sizes = self.arch.layer_sizes(self.dims)
        shapes = []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
            shapes.append((f"W{k}", (fan_out, fan_in)))
            if self.arch.bias:
                shapes.append((f"b{k}", (fan_out,)))
        return shapes

    def _fan_in(self, name, shape):
        return shape[1] if name.startswith("W") else None

    @property
    def n_layers(self) -> int:
        return self.arch.layers

    def forward(self, theta, X):
        p = self.unpack(theta)
        a = X.reshape(X.shape[0], -1)
        acts, pre = [a], []
        for k in range(1, self.n_layers + 1):
            z = a @ p[f"W{k}"].T
            if self.arch.bias:
                z = z + p[f"b{k}"]
            pre.append(z)
            if k < self.n_layers:
                a = np.maximum(z, 0.0)
                acts.append(a)
        return z, {"acts": acts, "pre": pre}

    def vjp(self, theta, cache, cotangent):
        p = self.unpack(theta)
        acts, pre = cache["acts"], cache["pre"]
        grads = {}
        delta = cotangent
        for k in range(self.n_layers, 0, -1):
            grads[f"W{k}"] = delta.T @ acts[k - 1]
            if self.arch.bias:
                grads[f"b{k}"] = delta.sum(axis=0)
            if k > 1:
                delta = (delta @ p[f"W{k}"]) * (pre[k - 2] > 0)
        return self.pack(grads)

    def vjp_batch(self, theta, cache, cotangents):
        p = self.unpack(theta)
        acts, pre = cache["acts"], cache["pre"]
        grads = {}
        delta = cotangents
        for k in range(self.n_layers, 0, -1):
            grads[f"W{k}"] = delta[..., :, None] * acts[k - 1][:, None, None, :]
            if self.arch.bias:
                grads[f"b{k}"] = delta
            if k > 1:
                delta = (delta @ p[f"W{k}"]) * (pre[k - 2] > 0)[:, None, :]
        return self.pack(grads, lead=cotangents.shape[:2])

    def _tangents(self, p, t, cache):
        """Forward-mode pass; returns output tangent and the tangents of every activation."""
        acts, pre = cache["acts"], cache["pre"]
        dacts = [None]
        da = None
        for k in range(1, self.n_layers + 1):
            dz = acts[k - 1] @ t[f"W{k}"].T
            if self.arch.bias:
                dz = dz + t[f"b{k}"]
            if da is not None:
                dz = dz + da @ p[f"W{k}"].T
            if k < self.n_layers:
                da = dz * (pre[k - 1] > 0)
                dacts.append(da)
        return dz, dacts

    def jvp(self, theta, cache, tangent):
        out, _ = self._tangents(self.unpack(theta), self.unpack(tangent), cache)
        return out

    def loss_hvp(self, theta, X, Y, tangent):
        out, cache = self.forward(theta, X)
        p, t = self.unpack(theta), self.unpack(tangent)
        r_out, dacts = self._tangents(p, t, cache)
        acts, pre = cache["acts"], cache["pre"]
        scale = 2.0 / (self.dims.output_len * X.shape[0])
        delta, r_delta = scale * (out - Y), scale * r_out
        grads = {}
        for k in range(self.n_layers, 0, -1):
            hw = r_delta.T @ acts[k - 1]
            if dacts[k - 1] is not None:
                hw = hw + delta.T @ dacts[k - 1]
            grads[f"W{k}"] = hw
            if self.arch.bias:
                grads[f"b{k}"] = r_delta.sum(axis=0)
            if k > 1:
                mask = pre[k - 2] > 0
                w, v = p[f"W{k}"], t[f"W{k}"]
                r_delta, delta = (r_delta @ w + delta @ v) * mask, (delta @ w) * mask
        return self.pack(grads)


def moving_average_matrix(length: int, kernel: int) -> np.ndarray:
    """Centered moving average with edge replication, as an L x L matrix."""
    pad = (kernel - 1) // 2
    rows = np.repeat(np.arange(length), kernel)
    cols = np.clip(rows + np.tile(np.arange(kernel), length) - pad, 0, length - 1)
    matrix = np.zeros((length, length))
    np.add.at(matrix, (rows, cols), 1.0 / kernel)
    return matrix


class DLinearForecaster(Forecaster):
    """
    Trend/remainder decomposition with one shared linear map per component.

    Every channel is decomposed and mapped L1 -> L2; with the output projection
    the channels are mixed by wp and shifted by bp, otherwise the single
    channel is the output.
    """

    def __init__(self, arch: ArchSpec, dims: ModelDims):
        self.projected = arch.uses_projection(dims[0])
        super().__init__(arch, dims)
        self._trend_T = moving_average_matrix(self.dims.input_len, arch.kernel).T

    def _build_shapes(self):
        _, input_len, output_len = self.dims
        shapes = [
            ("Ws", (output_len, input_len)), ("bs", (output_len,)),
            ("Wt", (output_len, input_len)), ("bt", (output_len,)),
        ]
        if self.projected:
            shapes += [("wp", (self.dims.n_features,)), ("bp", (1,))]
        return shapes

    def _fan_in(self, name, shape):
        if name in ("Ws", "Wt"):
            return shape[1]
        if name == "wp":
            return shape[0]
        return None

    def decompose(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        trend = X @ self._trend_T
        return X - trend, trend

    def forward(self, theta, X):
        p = self.unpack(theta)
        seasonal, trend = self.decompose(X)
        z = seasonal @ p["Ws"].T + p["bs"] + trend @ p["Wt"].T + p["bt"]
        if self.projected:
            out = np.einsum("bdo,d->bo", z, p["wp"]) + p["bp"][0]
        else:
            out = z[:, 0, :]
        return out, {"seasonal": seasonal, "trend": trend, "z": z}

    def _channel_cotangent(self, p, cotangent):
        if self.projected:
            return cotangent[..., None, :] * p["wp"][:, None]
        return cotangent[..., None, :]

    def vjp(self, theta, cache, cotangent):
        p = self.unpack(theta)
        grads = {}
        if self.projected:
            grads["wp"] = np.einsum("bo,bdo->d", cotangent, cache["z"])
            grads["bp"] = np.array([cotangent.sum()])
        dz = self._channel_cotangent(p, cotangent)
        grads["Ws"] = np.einsum("bdo,bdi->oi", dz, cache["seasonal"])
        grads["bs"] = dz.sum(axis=(0, 1))
        grads["Wt"] = np.einsum("bdo,bdi->oi", dz, cache["trend"])
        grads["bt"] = grads["bs"].copy()
        return self.pack(grads)

    def vjp_batch(self, theta, cache, cotangents):
        p = self.unpack(theta)
        grads = {}
        if self.projected:
            grads["wp"] = np.einsum("bro,bdo->brd", cotangents, cache["z"])
            grads["bp"] = cotangents.sum(axis=-1, keepdims=True)
        dz = self._channel_cotangent(p, cotangents)
        grads["Ws"] = np.einsum("brdo,bdi->broi", dz, cache["seasonal"])
        grads["bs"] = dz.sum(axis=2)
        grads["Wt"] = np.einsum("brdo,bdi->broi", dz, cache["trend"])
        grads["bt"] = grads["bs"].copy()
        return self.pack(grads, lead=cotangents.shape[:2])

    def _tangents(self, p, t, cache):
        r_z = cache["seasonal"] @ t["Ws"].T + t["bs"] + cache["trend"] @ t["Wt"].T + t["bt"]
        if self.projected:
            r_out = (np.einsum("bdo,d->bo", r_z, p["wp"])
                     + np.einsum("bdo,d->bo", cache["z"], t["wp"]) + t["bp"][0])
        else:
            r_out = r_z[:, 0, :]
        return r_out, r_z

    def jvp(self, theta, cache, tangent):
        out, _ = self._tangents(self.unpack(theta), self.unpack(tangent), cache)
        return out

    def loss_hvp(self, theta, X, Y, tangent):
        out, cache = self.forward(theta, X)
        p, t = self.unpack(theta), self.unpack(tangent)
        r_out, r_z = self._tangents(p, t, cache)
        scale = 2.0 / (self.dims.output_len * X.shape[0])
        delta, r_delta = scale * (out - Y), scale * r_out
        grads = {}
        if self.projected:
            grads["wp"] = np.einsum("bo,bdo->d", r_delta, cache["z"]) + np.einsum("bo,bdo->d", delta, r_z)
            grads["bp"] = np.array([r_delta.sum()])
            r_dz = r_delta[:, None, :] * p["wp"][:, None] + delta[:, None, :] * t["wp"][:, None]
        else:
            r_dz = r_delta[:, None, :]
        grads["Ws"] = np.einsum("bdo,bdi->oi", r_dz, cache["seasonal"])
        grads["bs"] = r_dz.sum(axis=(0, 1))
        grads["Wt"] = np.einsum("bdo,bdi->oi", r_dz, cache["trend"])
        grads["bt"] = grads["bs"].copy()
        return self.pack(grads)


class ForecasterFactory:
    """Factory class returning one shared Forecaster per (arch, dims)"""

    ARCH_DEFAULTS = {
        ArchKind.MLP: {"layers": 3, "hidden": 128, "bias": True},
        ArchKind.DLINEAR: {"kernel": 25, "output_projection": None},
    }

    _registry = {
        ArchKind.MLP: MLPForecaster,
        ArchKind.DLINEAR: DLinearForecaster,
    }
    _instances: Dict[Tuple[ArchSpec, ModelDims], Forecaster] = {}

    @classmethod
    def default_arch(cls, kind: ArchKind, **overrides) -> ArchSpec:
        settings = {**cls.ARCH_DEFAULTS[ArchKind(kind)], **overrides}
        return ArchSpec(kind=kind, **settings)

    @classmethod
    def create(cls, arch: ArchSpec, dims: ModelDims) -> Forecaster:
        """
        Args:
            arch: Architecture descriptor
            dims: (D, L1, L2)

        Returns:
            Forecaster for the pair, built once and reused

        Raises:
            ValueError: dims not positive or architecture invalid for dims
        """
        dims = ModelDims(*(int(d) for d in dims))
        if min(dims) < 1:
            raise ValueError(f"dims must be positive, got {tuple(dims)}")
        key = (arch, dims)
        forecaster = cls._instances.get(key)
        if forecaster is None:
            forecaster = cls._registry[arch.kind](arch, dims)
            cls._instances[key] = forecaster
            logger.debug(f"Built {arch.kind.value} forecaster for dims {tuple(dims)} with P={forecaster.n_params}")
        return forecaster

    @classmethod
    def for_params(cls, params: ModelParams) -> Forecaster:
        return cls.create(params.arch, params.dims)


# Second derivative d^2 L / (df dy) of each supported loss, as an L2 x L2 matrix.
LOSS_CROSS_DERIVATIVES: Dict[str, Callable[[int], np.ndarray]] = {
    "mse": lambda output_len: -(2.0 / output_len) * np.eye(output_len),
}


def loss_cross_derivative(output_len: int, loss_name: str = "mse") -> np.ndarray:
    """
    Raises:
        ValueError: loss without a closed-form label cross-derivative
    """
    try:
        return LOSS_CROSS_DERIVATIVES[loss_name](output_len)
    except KeyError:
        raise ValueError(
            f"unsupported loss '{loss_name}': only {sorted(LOSS_CROSS_DERIVATIVES)} have a label cross-derivative"
        ) from None


def init_params(arch: ArchSpec, dims: ModelDims, seed: int) -> ModelParams:
    forecaster = ForecasterFactory.create(arch, dims)
    theta = forecaster.initial_theta(np.random.default_rng(seed))
    return ModelParams(theta=theta, arch=arch, dims=forecaster.dims)


def predict(params: ModelParams, X: np.ndarray) -> np.ndarray:
    forecaster = ForecasterFactory.for_params(params)
    out, _ = forecaster.forward(params.theta, forecaster.check_inputs(X))
    return out


def forward(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Output vector (L2,) for one (D, L1) input, or (B, L2) for a batch."""
    out = predict(params, X)
    return out[0] if np.ndim(X) == 2 else out


def loss(f_out: np.ndarray, y: np.ndarray) -> LossValue:
    """Mean squared error over the horizon and its output gradient."""
    f_out, y = np.asarray(f_out, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if f_out.shape != y.shape:
        raise ValueError(f"output {f_out.shape} and target {y.shape} differ in shape")
    residual = f_out - y
    return LossValue(value=float(np.mean(residual ** 2)), grad_output=2.0 * residual / residual.shape[-1])


def per_sample_loss(params: ModelParams, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return np.mean((predict(params, X) - np.asarray(Y)) ** 2, axis=1)


def param_grad(params: ModelParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the loss w.r.t. theta; summed over samples for a batch."""
    forecaster = ForecasterFactory.for_params(params)
    X = forecaster.check_inputs(X)
    Y = np.asarray(y, dtype=np.float64).reshape(X.shape[0], -1)
    out, cache = forecaster.forward(params.theta, X)
    return forecaster.vjp(params.theta, cache, 2.0 * (out - Y) / Y.shape[1])


def output_jacobians(params: ModelParams, X: np.ndarray,
                     proj: Optional[SegmentProjector] = None) -> np.ndarray:
    """(B, r, P) Jacobians of the segment-averaged outputs, one VJP per segment."""
    forecaster = ForecasterFactory.for_params(params)
    X = forecaster.check_inputs(X)
    proj = proj or full_projector(forecaster.dims.output_len)
    if proj.output_len != forecaster.dims.output_len:
        raise ValueError(f"projector covers {proj.output_len} outputs, model has {forecaster.dims.output_len}")
    _, cache = forecaster.forward(params.theta, X)
    cotangents = np.broadcast_to(proj.A, (X.shape[0],) + proj.A.shape)
    return forecaster.vjp_batch(params.theta, cache, cotangents)


def output_jacobian(params: ModelParams, X: np.ndarray,
                    proj: Optional[SegmentProjector] = None) -> np.ndarray:
    """(r, P) Jacobian of the segment-averaged outputs for one input."""
    return output_jacobians(params, np.asarray(X)[None], proj)[0]


def ntk(params: ModelParams, X_a: np.ndarray, X_b: np.ndarray,
        proj: Optional[SegmentProjector] = None) -> np.ndarray:
    """r x r tangent kernel J_a J_b^T of the projected outputs."""
    jac_a = output_jacobian(params, X_a, proj)
    jac_b = jac_a if X_b is X_a else output_jacobian(params, X_b, proj)
    return jac_a @ jac_b.T


def jvp(params: ModelParams, X: np.ndarray, tangent: np.ndarray) -> np.ndarray:
    forecaster = ForecasterFactory.for_params(params)
    X = forecaster.check_inputs(X)
    _, cache = forecaster.forward(params.theta, X)
    return forecaster.jvp(params.theta, cache, np.asarray(tangent, dtype=np.float64))


def loss_hvp(params: ModelParams, X: np.ndarray, Y: np.ndarray, tangent: np.ndarray) -> np.ndarray:
    forecaster = ForecasterFactory.for_params(params)
    X = forecaster.check_inputs(X)
    return forecaster.loss_hvp(params.theta, X, np.asarray(Y, dtype=np.float64),
                               np.asarray(tangent, dtype=np.float64))
