"""The trainable student: optional tanh trunk, projection into text space, and
two prediction heads (FC classifier or cosine scoring against class embeddings)."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimError, FormatError, IoError
from .teacher import TeacherTable

STUDENT_FORMAT = "rise-student-v1"

HEAD_MODES = ("fc", "text_cosine")

# Canonical parameter order; initialization draws and serialization follow it.
PARAM_ORDER = ("trunk.weight", "trunk.bias", "proj.weight", "proj.bias",
               "clf.weight", "clf.bias")


@dataclass
class StudentModel:
    feature_dim: int
    hidden_dim: int | None
    text_dim: int
    num_classes: int
    head_mode: str
    seed: int
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def has_trunk(self) -> bool:
        return self.hidden_dim is not None

    def param_names(self) -> list[str]:
        names = [n for n in PARAM_ORDER if not n.startswith("trunk.") or self.has_trunk]
        return names

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        for k in self.param_names():
            self.params[k][...] = params[k]


def init_student(feature_dim: int, hidden_dim: int | None, text_dim: int,
                 num_classes: int, head_mode: str = "fc", seed: int = 0) -> StudentModel:
    """Build a student with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights
    and zero biases; bitwise deterministic for a given seed."""
    for name, val in (("feature_dim", feature_dim), ("text_dim", text_dim),
                      ("num_classes", num_classes)):
        if val is None or val < 1:
            raise ConfigError(f"{name} must be a positive integer, got {val}")
    if hidden_dim is not None and hidden_dim < 1:
        raise ConfigError(f"hidden_dim must be positive or None, got {hidden_dim}")
    if head_mode not in HEAD_MODES:
        raise ConfigError(f"head_mode must be one of {HEAD_MODES}, got {head_mode!r}")

    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}

    def affine(name: str, out_dim: int, in_dim: int) -> None:
        half_width = 1.0 / np.sqrt(in_dim)
        params[f"{name}.weight"] = rng.uniform(-half_width, half_width, size=(out_dim, in_dim))
        params[f"{name}.bias"] = np.zeros(out_dim)

    proj_in = feature_dim
    if hidden_dim is not None:
        affine("trunk", hidden_dim, feature_dim)
        proj_in = hidden_dim
    affine("proj", text_dim, proj_in)
    affine("clf", num_classes, text_dim)

    return StudentModel(feature_dim=feature_dim, hidden_dim=hidden_dim, text_dim=text_dim,
                        num_classes=num_classes, head_mode=head_mode, seed=seed, params=params)


def forward_batch(model: StudentModel, features: np.ndarray,
                  table: TeacherTable | None = None, want_cache: bool = False):
    """Batched forward pass.

    Returns (U, logits) where U has shape (n, text_dim); with want_cache=True
    additionally returns the intermediates needed for backpropagation.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.feature_dim:
        raise DimError(f"feature dim {X.shape[1]} does not match model ({model.feature_dim})")

    p = model.params
    if model.has_trunk:
        H = np.tanh(X @ p["trunk.weight"].T + p["trunk.bias"])
    else:
        H = X
    U = H @ p["proj.weight"].T + p["proj.bias"]

    if model.head_mode == "fc":
        Z = U @ p["clf.weight"].T + p["clf.bias"]
        head_cache = None
    else:
        if table is None:
            raise ConfigError("text_cosine head requires a teacher table")
        if table.dim != model.text_dim:
            raise DimError(f"table dim {table.dim} does not match model ({model.text_dim})")
        G = table.generic / np.linalg.norm(table.generic, axis=1, keepdims=True)
        u_norm = np.linalg.norm(U, axis=1, keepdims=True)
        safe = np.maximum(u_norm, 1e-300)
        cos = (U @ G.T) / safe
        Z = table.logit_scale * cos
        head_cache = (G, safe, cos)

    if not want_cache:
        return U, Z
    return U, Z, {"X": X, "H": H, "U": U, "head": head_cache}


def backprop(model: StudentModel, cache: dict, dU: np.ndarray, dZ: np.ndarray,
             table: TeacherTable | None = None) -> dict[str, np.ndarray]:
    """Gradients of a summed scalar loss with respect to every parameter.

    dU and dZ are the partials with respect to the projected embedding and
    the logits; the head, projection, and trunk are then peeled off in
    reverse. Caller divides by the batch size for a mean reduction.
    """
    p = model.params
    grads: dict[str, np.ndarray] = {}
    X, H = cache["X"], cache["H"]

    dU_total = dU.copy()
    if model.head_mode == "fc":
        grads["clf.weight"] = dZ.T @ cache["U"]
        grads["clf.bias"] = dZ.sum(axis=0)
        dU_total += dZ @ p["clf.weight"]
    else:
        G, safe, cos = cache["head"]
        s = table.logit_scale
        u_hat = cache["U"] / safe
        # d z_i / d u = s * (g_hat_i - cos_i * u_hat) / ||u||
        coef = dZ * s                                     # (n, C)
        dU_total += (coef @ G - (coef * cos).sum(axis=1, keepdims=True) * u_hat) / safe
        grads["clf.weight"] = np.zeros_like(p["clf.weight"])
        grads["clf.bias"] = np.zeros_like(p["clf.bias"])

    grads["proj.weight"] = dU_total.T @ H
    grads["proj.bias"] = dU_total.sum(axis=0)

    if model.has_trunk:
        dH = dU_total @ p["proj.weight"]
        dA = dH * (1.0 - H * H)                           # tanh'
        grads["trunk.weight"] = dA.T @ X
        grads["trunk.bias"] = dA.sum(axis=0)

    return grads


def forward(model: StudentModel, feature, table: TeacherTable | None = None):
    """Single-sample forward: (projected embedding u, logits)."""
    U, Z = forward_batch(model, np.asarray(feature, dtype=np.float64)[None, :], table)
    return U[0], Z[0]


def predict(model: StudentModel, feature, table: TeacherTable | None = None) -> int:
    """Predicted class index; ties break toward the smallest index."""
    _, logits = forward(model, feature, table)
    return int(np.argmax(logits))


def predict_batch(model: StudentModel, features: np.ndarray,
                  table: TeacherTable | None = None) -> np.ndarray:
    _, Z = forward_batch(model, features, table)
    return np.argmax(Z, axis=1)


def save_student(model: StudentModel, path) -> None:
    """Write a checkpoint in the line-oriented rise-student-v1 format."""
    header = {
        "format": STUDENT_FORMAT,
        "feature_dim": model.feature_dim,
        "hidden_dim": model.hidden_dim,
        "text_dim": model.text_dim,
        "num_classes": model.num_classes,
        "head_mode": model.head_mode,
        "seed": model.seed,
    }
    lines = [json.dumps(header, allow_nan=False)]
    for name in model.param_names():
        arr = model.params[name]
        lines.append(json.dumps(
            {"name": name, "shape": list(arr.shape), "data": arr.ravel().tolist()},
            allow_nan=False,
        ))
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write checkpoint to {path}: {exc}") from exc


def load_student(path) -> StudentModel:
    """Load a rise-student-v1 checkpoint, validating shapes against the header."""
    if not os.path.exists(path):
        raise IoError(f"checkpoint file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint from {path}: {exc}") from exc
    if not lines:
        raise FormatError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line 1: invalid JSON ({exc.msg})") from exc
    if header.get("format") != STUDENT_FORMAT:
        raise FormatError(f"{path}: expected format {STUDENT_FORMAT!r}, "
                          f"got {header.get('format')!r}")

    model = init_student(
        feature_dim=int(header["feature_dim"]),
        hidden_dim=None if header["hidden_dim"] is None else int(header["hidden_dim"]),
        text_dim=int(header["text_dim"]),
        num_classes=int(header["num_classes"]),
        head_mode=str(header["head_mode"]),
        seed=int(header["seed"]),
    )
    seen = set()
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
        name = rec.get("name")
        if name not in model.param_names():
            raise FormatError(f"{path}: line {lineno}: unexpected parameter {name!r}")
        arr = np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])
        if arr.shape != model.params[name].shape:
            raise FormatError(f"{path}: line {lineno}: parameter {name!r} has shape "
                              f"{arr.shape}, expected {model.params[name].shape}")
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"{path}: line {lineno}: parameter {name!r} is non-finite")
        model.params[name] = arr
        seen.add(name)
    missing = set(model.param_names()) - seen
    if missing:
        raise FormatError(f"{path}: missing parameter record(s) {sorted(missing)}")
    return model
