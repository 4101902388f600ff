"""Analytic-vs-numeric gradient verification for every loss term.

Central finite differences over every model parameter are the independent
oracle here; the analytic side comes from the batched backprop path. The
relative error uses a unit floor in the denominator,

    rel = |a - n| / max(1, |a|, |n|),

so coordinates whose true gradient is near zero are checked absolutely
(finite-difference noise there sits around 1e-9, far below the 1e-4
tolerance, while a genuine backprop bug shifts coordinates by the gradient's
own magnitude).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import LabeledSample
from .errors import ConfigError
from .losses import LossConfig, batch_loss, batch_terms, make_loss_context
from .student import StudentModel, forward_batch, init_student
from .teacher import TeacherTable
from .vectors import normalize

# Small-but-real problem sizes: trunk + projection + classifier all exercised.
FEATURE_DIM = 5
HIDDEN_DIM = 4
TEXT_DIM = 6
NUM_CLASSES = 3
NUM_DOMAINS = 2
BATCH = 3

DEFAULT_STEP = 1e-5


def term_cases() -> list[tuple[str, LossConfig, str]]:
    """Every (term, metric) combination to verify, as (name, cfg, head_mode)."""
    cases: list[tuple[str, LossConfig, str]] = []
    base = dict(temperature=1.7, contrastive_tau=0.6)
    cases.append(("ce", LossConfig(1, 0, 0, **base), "fc"))
    cases.append(("hint", LossConfig(0, 1, 0, **base), "fc"))
    cases.append(("hint_t2", LossConfig(0, 1, 0, hint_t_squared=True, **base), "fc"))
    for metric in ("cosine", "l1", "l2", "sup_contrastive"):
        cases.append((f"ad_{metric}",
                      LossConfig(0, 0, 1, ad_metric=metric, use_rd=False, **base), "fc"))
    for outer in ("mse", "l1", "kl_on_softmax"):
        for inner in ("cosine_sim", "l2"):
            cases.append((f"rd_{outer}_{inner}",
                          LossConfig(0, 0, 1, rd_outer=outer, rd_inner=inner,
                                     use_ad=False, **base), "fc"))
    cases.append(("total", LossConfig(0.7, 0.9, 0.6, **base), "fc"))
    cases.append(("total_text_head", LossConfig(0.7, 0.9, 0.6, **base), "text_cosine"))
    return cases


def _flatten(model: StudentModel) -> np.ndarray:
    return np.concatenate([model.params[n].ravel() for n in model.param_names()])


def _set_flat(model: StudentModel, flat: np.ndarray) -> None:
    off = 0
    for n in model.param_names():
        p = model.params[n]
        p[...] = flat[off:off + p.size].reshape(p.shape)
        off += p.size


def _coordinate_name(model: StudentModel, flat_index: int) -> tuple[str, int]:
    off = 0
    for n in model.param_names():
        size = model.params[n].size
        if flat_index < off + size:
            return n, flat_index - off
        off += size
    raise IndexError(flat_index)


def _random_problem(rng: np.random.Generator, head_mode: str):
    """A random small table, batch, and parameter point."""
    generic = normalize(rng.standard_normal((NUM_CLASSES, TEXT_DIM)))
    single = normalize(rng.standard_normal((NUM_CLASSES, TEXT_DIM)))
    anchors = normalize(rng.standard_normal((NUM_DOMAINS, NUM_CLASSES, TEXT_DIM)))
    table = TeacherTable(dim=TEXT_DIM,
                         classes=tuple(f"c{i}" for i in range(NUM_CLASSES)),
                         domains=tuple(f"d{i}" for i in range(NUM_DOMAINS)),
                         generic=generic, anchors=anchors, generic_single=single,
                         teacher_id="gradcheck", logit_scale=4.0)
    samples = []
    for i in range(BATCH):
        samples.append(LabeledSample(
            id=f"s{i}",
            feature=rng.uniform(-1.0, 1.0, size=FEATURE_DIM),
            teacher_emb=normalize(rng.standard_normal(TEXT_DIM)),
            label=int(rng.integers(NUM_CLASSES)),
            domain=int(rng.integers(NUM_DOMAINS)),
        ))
    model = init_student(FEATURE_DIM, HIDDEN_DIM, TEXT_DIM, NUM_CLASSES,
                         head_mode=head_mode, seed=int(rng.integers(2**31)))
    flat = rng.uniform(-0.7, 0.7, size=_flatten(model).size)
    _set_flat(model, flat)
    return table, samples, model


def _kink_distance(model, X, y, ctx, cfg) -> float:
    """Distance to the nearest non-smooth point of the active metrics.

    Points too close to an absolute-value or norm kink are resampled, since
    central differences straddling a kink do not estimate a derivative.
    """
    table = ctx.head_table if model.head_mode == "text_cosine" else None
    U, _ = forward_batch(model, X, table)
    dist = float(np.min(np.linalg.norm(U, axis=1)))  # cosine metrics need ||u|| > 0
    if cfg.ad_active and cfg.ad_metric == "l1":
        dist = min(dist, float(np.min(np.abs(U - ctx.targets[y]))))
    if cfg.ad_active and cfg.ad_metric == "l2":
        dist = min(dist, float(np.min(np.linalg.norm(U - ctx.targets[y], axis=1))))
    if cfg.rd_active:
        if cfg.rd_inner == "l2":
            diffs = U[None, :, :] - ctx.anchors[:, y, :]
            S = np.linalg.norm(diffs, axis=2).T
            dist = min(dist, float(np.min(S)))
        else:
            u_hat = U / np.linalg.norm(U, axis=1, keepdims=True)
            S = np.einsum("nd,knd->nk", u_hat, ctx.anchors_hat[:, y, :])
        if cfg.rd_outer == "l1":
            dist = min(dist, float(np.min(np.abs(S - ctx.ref_inner[y]))))
    return dist


def check_term(name: str, cfg: LossConfig, head_mode: str, seed: int,
               trials: int, step: float = DEFAULT_STEP) -> dict:
    """Worst relative error for one term over `trials` random points."""
    rng = np.random.default_rng(seed)
    worst = {"term": name, "max_rel_err": 0.0, "trial": -1,
             "param": None, "index": None, "analytic": None, "numeric": None}
    done = 0
    attempts = 0
    while done < trials:
        attempts += 1
        if attempts > trials * 50:
            raise RuntimeError(f"could not sample a kink-free point for {name}")
        table, samples, model = _random_problem(rng, head_mode)
        ctx = make_loss_context(samples, table, cfg)
        X = np.stack([s.feature for s in samples])
        y = np.array([s.label for s in samples])
        if _kink_distance(model, X, y, ctx, cfg) < 1e-2:
            continue
        done += 1

        _, grads = batch_terms(model, X, y, ctx.teacher_probs, ctx, cfg, want_grads=True)
        analytic = np.concatenate([grads[n].ravel() for n in model.param_names()])

        flat = _flatten(model)
        numeric = np.empty_like(flat)
        for j in range(flat.size):
            saved = flat[j]
            flat[j] = saved + step
            _set_flat(model, flat)
            up = batch_loss(model, X, y, ctx.teacher_probs, ctx, cfg).total
            flat[j] = saved - step
            _set_flat(model, flat)
            dn = batch_loss(model, X, y, ctx.teacher_probs, ctx, cfg).total
            flat[j] = saved
            numeric[j] = (up - dn) / (2 * step)
        _set_flat(model, flat)

        denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
        rel = np.abs(analytic - numeric) / denom
        j = int(np.argmax(rel))
        if rel[j] > worst["max_rel_err"]:
            pname, pidx = _coordinate_name(model, j)
            worst.update(max_rel_err=float(rel[j]), trial=done - 1, param=pname,
                         index=pidx, analytic=float(analytic[j]), numeric=float(numeric[j]))
    return worst


def run_gradcheck(seed: int = 0, trials: int = 20, tolerance: float = 1e-4,
                  step: float = DEFAULT_STEP) -> tuple[bool, list[dict]]:
    """Run every term case; returns (all_passed, per-term worst errors)."""
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    if tolerance <= 0:
        raise ConfigError(f"tolerance must be positive, got {tolerance}")
    results = []
    for i, (name, cfg, head_mode) in enumerate(term_cases()):
        res = check_term(name, cfg, head_mode, seed=seed + 7919 * i,
                         trials=trials, step=step)
        res["passed"] = res["max_rel_err"] < tolerance
        results.append(res)
    return all(r["passed"] for r in results), results
