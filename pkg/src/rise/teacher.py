"""Frozen teacher tables: generic and anchor text embeddings plus zero-shot scoring.

A teacher table holds one frozen vision-language teacher's text-side
embeddings: one generic embedding per class (prompt-ensemble mean), an
optional single-template variant, and one anchor embedding per
(domain, class) pair. Tables are immutable after load.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (ConfigError, DegenerateVector, DimError, EmptyInput,
                     FormatError, IoError)
from .vectors import mean_embedding, normalize, softmax_with_temperature

TEACHER_FORMAT = "rise-teacher-v1"

SUPERVISION_SOURCES = ("text_ensemble", "text_single", "image_mean")


@dataclass(frozen=True)
class TeacherTable:
    """Frozen per-class and per-(domain, class) text embeddings.

    Arrays are marked read-only on construction; `generic` has shape
    (num_classes, dim), `anchors` (num_domains, num_classes, dim) or None
    when the table carries no anchor records.
    """

    dim: int
    classes: tuple[str, ...]
    domains: tuple[str, ...]
    generic: np.ndarray
    anchors: np.ndarray | None = None
    generic_single: np.ndarray | None = None
    teacher_id: str = "unknown"
    logit_scale: float = 100.0

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.logit_scale <= 0:
            raise ConfigError(f"logit_scale must be positive, got {self.logit_scale}")
        for name, arr, shape in (
            ("generic", self.generic, (len(self.classes), self.dim)),
            ("generic_single", self.generic_single, (len(self.classes), self.dim)),
            ("anchors", self.anchors, (len(self.domains), len(self.classes), self.dim)),
        ):
            if arr is None:
                continue
            if arr.shape != shape:
                raise DimError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise FormatError(f"{name} contains non-finite entries")
            if np.any(np.linalg.norm(arr, axis=-1) == 0.0):
                raise FormatError(f"{name} contains a zero-norm embedding")
            arr.flags.writeable = False

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def num_domains(self) -> int:
        return len(self.domains)

    def class_index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise ConfigError(f"unknown class {name!r}") from None

    def domain_index(self, name: str) -> int:
        try:
            return self.domains.index(name)
        except ValueError:
            raise ConfigError(f"unknown domain {name!r}") from None

    def anchor_matrix(self, domain_indices) -> np.ndarray:
        """Anchors restricted to the given domain indices, shape (k, C, dim).

        Training goes through this accessor so protocol-hygiene tests can
        observe exactly which domains were requested.
        """
        if self.anchors is None:
            raise ConfigError("teacher table has no anchor embeddings")
        idx = list(domain_indices)
        if len(idx) == 0:
            raise EmptyInput("at least one anchor domain is required")
        return self.anchors[idx]


def teacher_logits(img_emb, table: TeacherTable) -> np.ndarray:
    """Zero-shot logits: logit_scale * cos(img_emb, generic[i]) per class."""
    v = np.asarray(img_emb, dtype=np.float64)
    if v.shape != (table.dim,):
        raise DimError(f"image embedding has shape {v.shape}, expected ({table.dim},)")
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise DegenerateVector("image embedding has zero norm")
    g = table.generic
    cos = (g @ v) / (np.linalg.norm(g, axis=1) * nv)
    return table.logit_scale * cos


def teacher_soft_targets(logits, t: float) -> np.ndarray:
    """Temperature-softened teacher distribution over classes."""
    return softmax_with_temperature(logits, t)


def supervision_target(table: TeacherTable, samples, class_i: int, source: str) -> np.ndarray:
    """Embedding used as the distance-loss target for one class.

    text_ensemble -> the class's generic embedding; text_single -> the
    single-template variant; image_mean -> mean of the teacher image
    embeddings of that class among `samples` (the training split).
    """
    if not 0 <= class_i < table.num_classes:
        raise IndexError(f"class index {class_i} out of range [0, {table.num_classes})")
    if source == "text_ensemble":
        return table.generic[class_i]
    if source == "text_single":
        if table.generic_single is None:
            raise ConfigError("table has no single-template embeddings")
        return table.generic_single[class_i]
    if source == "image_mean":
        embs = [s.teacher_emb for s in samples if s.label == class_i]
        if not embs:
            raise EmptyInput(f"no samples of class index {class_i} to average")
        return mean_embedding(embs)
    raise ConfigError(f"unknown supervision source {source!r}")


def supervision_matrix(table: TeacherTable, samples, source: str) -> np.ndarray:
    """Stacked supervision targets for every class, shape (C, dim)."""
    return np.stack(
        [supervision_target(table, samples, i, source) for i in range(table.num_classes)]
    )


def derive_teacher_variant(table: TeacherTable, seed: int, jitter: float = 0.3) -> TeacherTable:
    """A second teacher over the same embedding space.

    Adds a seeded unit-norm perturbation of relative size `jitter` to every
    embedding and renormalizes to the original norms, mimicking a different
    checkpoint's text encoder for mix-teacher experiments.
    """
    if jitter <= 0:
        raise ConfigError(f"jitter must be positive, got {jitter}")
    rng = np.random.default_rng(seed)

    def perturb(arr: np.ndarray) -> np.ndarray:
        noise = rng.standard_normal(arr.shape)
        noise = noise / np.linalg.norm(noise, axis=-1, keepdims=True)
        norms = np.linalg.norm(arr, axis=-1, keepdims=True)
        return normalize(arr / norms + jitter * noise) * norms

    return replace(
        table,
        generic=perturb(table.generic),
        generic_single=None if table.generic_single is None else perturb(table.generic_single),
        anchors=None if table.anchors is None else perturb(table.anchors),
        teacher_id=f"{table.teacher_id}-var{seed}",
    )


def save_teacher_table(table: TeacherTable, path) -> None:
    """Write a table in the line-oriented rise-teacher-v1 format."""
    header = {
        "format": TEACHER_FORMAT,
        "dim": table.dim,
        "teacher_id": table.teacher_id,
        "logit_scale": table.logit_scale,
        "classes": list(table.classes),
        "domains": list(table.domains),
    }
    lines = [json.dumps(header, allow_nan=False)]
    for i, cls in enumerate(table.classes):
        lines.append(
            json.dumps({"kind": "generic", "class": cls, "vec": table.generic[i].tolist()},
                       allow_nan=False)
        )
    if table.generic_single is not None:
        for i, cls in enumerate(table.classes):
            lines.append(
                json.dumps(
                    {"kind": "generic_single", "class": cls,
                     "vec": table.generic_single[i].tolist()},
                    allow_nan=False,
                )
            )
    if table.anchors is not None:
        for d, dom in enumerate(table.domains):
            for i, cls in enumerate(table.classes):
                lines.append(
                    json.dumps(
                        {"kind": "anchor", "domain": dom, "class": cls,
                         "vec": table.anchors[d, i].tolist()},
                        allow_nan=False,
                    )
                )
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write teacher table to {path}: {exc}") from exc


def load_teacher_table(path) -> TeacherTable:
    """Load and validate a rise-teacher-v1 file.

    Raises IoError if the file is missing and FormatError (naming the
    offending record) on any structural problem.
    """
    if not os.path.exists(path):
        raise IoError(f"teacher table file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read teacher table from {path}: {exc}") from exc
    if not lines:
        raise FormatError(f"{path}: empty file")

    header = _parse_json_line(path, 1, lines[0])
    if header.get("format") != TEACHER_FORMAT:
        raise FormatError(f"{path}: line 1: expected format {TEACHER_FORMAT!r}, "
                          f"got {header.get('format')!r}")
    for key in ("dim", "classes", "domains", "teacher_id", "logit_scale"):
        if key not in header:
            raise FormatError(f"{path}: line 1: header missing {key!r}")
    dim = int(header["dim"])
    classes = tuple(header["classes"])
    domains = tuple(header["domains"])

    generic: dict[int, np.ndarray] = {}
    single: dict[int, np.ndarray] = {}
    anchors: dict[tuple[int, int], np.ndarray] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        rec = _parse_json_line(path, lineno, raw)
        kind = rec.get("kind")
        if kind not in ("generic", "generic_single", "anchor"):
            raise FormatError(f"{path}: line {lineno}: unknown record kind {kind!r}")
        cls = rec.get("class")
        if cls not in classes:
            raise FormatError(f"{path}: line {lineno}: unknown class {cls!r}")
        vec = np.asarray(rec.get("vec", []), dtype=np.float64)
        ci = classes.index(cls)
        if kind == "anchor":
            dom = rec.get("domain")
            if dom not in domains:
                raise FormatError(f"{path}: line {lineno}: unknown domain {dom!r}")
            key_name = f"({dom},{cls})"
            di = domains.index(dom)
        else:
            key_name = cls
        if vec.shape != (dim,):
            raise FormatError(
                f"{path}: line {lineno}: {kind} {key_name} has dim {vec.shape[0] if vec.ndim == 1 else vec.shape}, expected {dim}"
            )
        if kind == "generic":
            generic[ci] = vec
        elif kind == "generic_single":
            single[ci] = vec
        else:
            anchors[(di, ci)] = vec

    missing = [classes[i] for i in range(len(classes)) if i not in generic]
    if missing:
        raise FormatError(f"{path}: missing generic embedding for class(es) {missing}")
    generic_arr = np.stack([generic[i] for i in range(len(classes))])

    single_arr = None
    if single:
        missing = [classes[i] for i in range(len(classes)) if i not in single]
        if missing:
            raise FormatError(f"{path}: missing generic_single embedding for class(es) {missing}")
        single_arr = np.stack([single[i] for i in range(len(classes))])

    anchors_arr = None
    if anchors:
        holes = [
            f"({domains[d]},{classes[c]})"
            for d in range(len(domains))
            for c in range(len(classes))
            if (d, c) not in anchors
        ]
        if holes:
            raise FormatError(f"{path}: missing anchor embedding for {holes}")
        anchors_arr = np.stack(
            [np.stack([anchors[(d, c)] for c in range(len(classes))]) for d in range(len(domains))]
        )

    try:
        return TeacherTable(
            dim=dim,
            classes=classes,
            domains=domains,
            generic=generic_arr,
            anchors=anchors_arr,
            generic_single=single_arr,
            teacher_id=str(header["teacher_id"]),
            logit_scale=float(header["logit_scale"]),
        )
    except (DimError, ConfigError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _parse_json_line(path, lineno: int, raw: str) -> dict:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise FormatError(f"{path}: line {lineno}: expected a JSON object")
    return obj
