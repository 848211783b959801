"""Fully connected network stack: parameters, forward pass, exact
reverse-mode gradients, Adam, and the stepped learning-rate schedule.

Hidden layers are relu; the output layer is linear or sigmoid. Everything is
float64 and deterministic given a seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scipy.special import expit

from . import autodiff as ad
from .errors import InputError

# sigmoid outputs are clamped into the open unit interval at float
# resolution so saturated nets still satisfy strict (0, 1) bounds
_SIG_LO = np.finfo(np.float64).tiny
_SIG_HI = np.nextafter(1.0, 0.0)


@dataclass
class MlpParams:
    """Weights/biases per layer; weights[l] has shape (d_in, d_out)."""

    sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "linear"

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams(
            sizes=list(self.sizes),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            output_activation=self.output_activation,
        )

    def flat(self) -> list[np.ndarray]:
        """Parameter arrays in a stable order (w0, b0, w1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


def init_mlp(sizes: list[int], output_activation: str = "linear", seed: int = 0) -> MlpParams:
    """He-style uniform fan-in init: W ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)),
    zero biases. ``sizes`` lists layer widths input first, e.g. [48,128,128,48].
    """
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise InputError(f"bad layer sizes {sizes}")
    if output_activation not in ("linear", "sigmoid"):
        raise InputError(f"unknown output activation {output_activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / d_in)
        weights.append(rng.uniform(-limit, limit, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return MlpParams(sizes=list(sizes), weights=weights, biases=biases,
                     output_activation=output_activation)


def forward(mlp: MlpParams, x: np.ndarray) -> np.ndarray:
    """Plain numpy forward pass. x is (d_in,) or (B, d_in); output matches."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != mlp.sizes[0]:
        raise InputError(f"input width {h.shape[1]} != {mlp.sizes[0]}")
    last = mlp.n_layers - 1
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w + b
        if l < last:
            h = np.maximum(h, 0.0)
        elif mlp.output_activation == "sigmoid":
            h = np.clip(expit(h), _SIG_LO, _SIG_HI)
    return h[0] if single else h


def wrap_params(mlp: MlpParams) -> list[ad.Var]:
    """Wrap parameter arrays as tape Vars (same order as MlpParams.flat)."""
    return [ad.Var(p) for p in mlp.flat()]


def forward_tape(mlp: MlpParams, x: ad.Var, params: list[ad.Var]) -> ad.Var:
    """Forward pass on the tape; ``params`` comes from :func:`wrap_params`.
    x must be 2D (B, d_in)."""
    h = x
    last = mlp.n_layers - 1
    for l in range(mlp.n_layers):
        h = h @ params[2 * l] + params[2 * l + 1]
        if l < last:
            h = ad.relu(h)
        elif mlp.output_activation == "sigmoid":
            h = ad.sigmoid(h)
    return h


def grad(mlp: MlpParams, x_batch: np.ndarray, loss_adjoint: np.ndarray) -> list[np.ndarray]:
    """Exact reverse-mode parameter gradients of the scalar loss whose
    derivative w.r.t. the network output is ``loss_adjoint``.

    Returns arrays in MlpParams.flat() order.
    """
    x_batch = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
    loss_adjoint = np.atleast_2d(np.asarray(loss_adjoint, dtype=np.float64))
    if loss_adjoint.shape[0] != x_batch.shape[0]:
        raise InputError("adjoint batch size does not match input batch size")
    params = wrap_params(mlp)
    y = forward_tape(mlp, ad.Var(x_batch), params)
    loss = ad.vsum(y * loss_adjoint)
    loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]


def jacobian(mlp: MlpParams, x: np.ndarray) -> np.ndarray:
    """Exact Jacobian d(output)/d(input) at a single input, shape
    (d_out, d_in). Relu makes it piecewise constant in x."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != mlp.sizes[0]:
        raise InputError(f"expected input of width {mlp.sizes[0]}, got {x.shape}")
    h = x
    pre = []
    last = mlp.n_layers - 1
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if l < last else z
    # chain rule back through the layers; row convention y = x W + b
    jac = mlp.weights[last].T
    if mlp.output_activation == "sigmoid":
        s = expit(pre[last])
        jac = (s * (1.0 - s))[:, None] * jac
    for l in range(last - 1, -1, -1):
        jac = (jac * (pre[l] > 0)) @ mlp.weights[l].T
    return jac


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators for a flat list of parameter arrays."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState, lr: float) -> None:
    """One Adam update, in place. Zero gradients leave parameters unchanged."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise InputError("params/grads/state length mismatch")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class LrSchedule:
    """Stepped decay: lr(e) = base * factor**(e // interval)."""

    base: float = 1e-3
    factor: float = 0.5
    interval: int = 1000


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise InputError(f"epoch must be nonnegative, got {epoch}")
    return schedule.base * schedule.factor ** (epoch // schedule.interval)
