"""Named trainable parameters, Adam updates, and the checkpoint file format."""

from __future__ import annotations

import json
import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import Tensor, backward

CHECKPOINT_MAGIC = b"SLUKITCKPT1\n"


class Parameters:
    """Flat registry of named trainable tensors.

    Insertion order is preserved; checkpoint serialization sorts by name so
    byte-identical files do not depend on build order.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    @contextmanager
    def frozen(self):
        """Disable gradient recording; forward passes build no graph."""
        for t in self._tensors.values():
            t.requires_grad = False
        try:
            yield
        finally:
            for t in self._tensors.values():
                t.requires_grad = True

    def grad_arrays(self) -> dict[str, np.ndarray | None]:
        return {name: t.grad for name, t in self._tensors.items()}

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.values for name, t in self._tensors.items()}

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self._tensors.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._tensors) - set(arrays)
        extra = set(arrays) - set(self._tensors)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, t in self._tensors.items():
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != t.values.shape:
                raise ValueError(f"shape mismatch for {name!r}: {a.shape} vs {t.values.shape}")
            t.values = a.copy()

    def to_vector(self) -> np.ndarray:
        return np.concatenate([t.values.reshape(-1) for t in self._tensors.values()])

    def from_vector(self, vec: np.ndarray) -> None:
        lo = 0
        for t in self._tensors.values():
            n = t.values.size
            t.values = vec[lo : lo + n].reshape(t.values.shape).copy()
            lo += n
        if lo != vec.size:
            raise ValueError(f"vector length {vec.size} does not match parameter count {lo}")


def param_grad_check(
    params: Parameters,
    loss_builder: Callable[[], Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Finite-difference check of a loss against every registered parameter.

    loss_builder must rebuild the scalar loss from the current parameter
    values on each call. Returns the max over (optionally sampled)
    coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    params.zero_grads()
    loss = loss_builder()
    if loss.values.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    backward(loss)
    analytic = {
        name: (t.grad if t.grad is not None else np.zeros_like(t.values)) for name, t in params.items()
    }

    coords = [(name, idx) for name, t in params.items() for idx in range(t.values.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(chosen)]

    # numeric passes need no graphs
    for _, t in params.items():
        t.requires_grad = False
    try:
        worst = 0.0
        for name, idx in coords:
            flat = params[name].values.reshape(-1)
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = loss_builder().item()
            flat[idx] = orig - eps
            f_minus = loss_builder().item()
            flat[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise ValueError(f"non-finite evaluation perturbing {name!r}[{idx}]")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[name].reshape(-1)[idx]
            worst = max(worst, abs(a - numeric) / max(1e-8, abs(a) + abs(numeric)))
    finally:
        for _, t in params.items():
            t.requires_grad = True
    return worst


# --- initializers -----------------------------------------------------------


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def normal_rows(rng: np.random.Generator, rows: int, cols: int, std: float = 0.02) -> np.ndarray:
    return rng.normal(0.0, std, size=(rows, cols))


# --- Adam -------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter first and second moments plus the shared step counter."""

    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0


def adam_update(
    params: Parameters,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam step, in place on the parameter values."""
    if lr <= 0:
        raise ValueError(f"adam: lr must be positive, got {lr}")
    b1, b2 = betas
    for name, t in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise ValueError(f"adam: non-finite gradient for parameter {name!r}")
        if g.shape != t.values.shape:
            raise ValueError(f"adam: gradient shape {g.shape} does not match {name!r} {t.values.shape}")
    state.step_count += 1
    step = state.step_count
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    for name, t in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(t.values)
            v = np.zeros_like(t.values)
            state.first_moment[name] = m
            state.second_moment[name] = v
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        t.values = t.values - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# --- checkpoint file --------------------------------------------------------


def save_checkpoint(path: str, arrays: dict[str, np.ndarray], metadata: dict) -> None:
    """Write a deterministic binary map of name -> shape -> row-major values."""
    meta_bytes = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            a = np.ascontiguousarray(arrays[name], dtype=np.float64)
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", a.ndim))
            for dim in a.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(a.tobytes(order="C"))


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        metadata = json.loads(fh.read(meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            n_items = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n_items), dtype=np.float64).reshape(shape)
            arrays[name] = data.copy()
    return arrays, metadata
