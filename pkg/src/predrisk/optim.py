"""Adam, finite-difference gradient checking, and the JSON checkpoint format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import FormatError, ShapeError

CHECKPOINT_FORMAT = "predrisk-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **kw) -> "AdamState":
        return cls(
            m=[np.zeros(p.shape) for p in params],
            v=[np.zeros(p.shape) for p in params],
            **kw,
        )


def adam_step(params: Sequence[Tensor], grads, state: AdamState, lr: float = 0.001):
    """One bias-corrected Adam update, applied to ``params`` in place.

    A ``None`` gradient is treated as zero. Returns ``(params, state)``.
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError(
            f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.m)} moment buffers"
        )
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step_count
    c2 = 1.0 - b2**state.step_count
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros(p.shape)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam_step: incompatible shapes {p.shape} and {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    n_coords: int = 256,
    seed: int = 0,
    floor: float = 1e-8,
) -> float:
    """Worst relative error between backprop and central differences.

    ``fn`` rebuilds the scalar loss from the current values of ``params``.
    When the parameters hold more than ``n_coords`` scalars, a random
    subset of that many coordinates is compared. Relative error is
    ``|a - b| / max(|a| + |b|, floor)``; the floor keeps exact zeros (where
    backprop returns round-off) from reading as large relative errors.
    """
    for p in params:
        p.zero_grad()
    loss = fn()
    loss.backward()
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if len(coords) > n_coords:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]

    worst = 0.0
    for i, j in coords:
        flat = params[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        up = fn().item()
        flat[j] = orig - eps
        down = fn().item()
        flat[j] = orig
        numeric = (up - down) / (2 * eps)
        a = analytic[i].reshape(-1)[j]
        worst = max(worst, abs(a - numeric) / max(abs(a) + abs(numeric), floor))
    for p in params:
        p.zero_grad()
    return worst


def _encode_array(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": [float(v) for v in arr.reshape(-1)]}


def _decode_array(obj: dict) -> np.ndarray:
    return np.array(obj["data"], dtype=np.float64).reshape(obj["shape"])


def save_checkpoint(path, params: dict[str, np.ndarray], seed: int, meta: dict | None = None,
                    adam: AdamState | None = None, param_order: Sequence[str] | None = None):
    """Write named arrays plus metadata as canonical JSON.

    Floats use Python's shortest round-trip repr and keys are sorted, so the
    bytes depend only on the values.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": int(seed),
        "meta": meta or {},
        "params": {k: _encode_array(np.asarray(v)) for k, v in params.items()},
    }
    if adam is not None:
        order = list(param_order or params.keys())
        doc["adam"] = {
            "step_count": adam.step_count,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
            "m": {k: _encode_array(m) for k, m in zip(order, adam.m)},
            "v": {k: _encode_array(v) for k, v in zip(order, adam.v)},
        }
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_checkpoint(path) -> dict:
    """Read a checkpoint; arrays come back as numpy float64 arrays."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    doc["params"] = {k: _decode_array(v) for k, v in doc["params"].items()}
    if "adam" in doc:
        a = doc["adam"]
        a["m"] = {k: _decode_array(v) for k, v in a["m"].items()}
        a["v"] = {k: _decode_array(v) for k, v in a["v"].items()}
    return doc
