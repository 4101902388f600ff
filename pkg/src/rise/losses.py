"""Every term of the training objective, as pure value functions with
matching analytic gradients.

Four terms: cross-entropy on the student logits, a temperature-softened
KL hint against the frozen teacher's zero-shot distribution, an absolute
distance pulling the projected student embedding toward its class target,
and a relative distance matching the embedding's per-anchor profile to the
target's. The weighted combination is

    total = ce_weight * ce + hint_weight * hint + dist_weight * (ad + rd)

Scalar per-sample functions are the reference implementations; the batched
path used by training is cross-checked against them in the test suite, and
every gradient is verified against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DimError, EmptyInput
from .student import StudentModel, backprop, forward_batch
from .teacher import TeacherTable, supervision_matrix, teacher_logits
from .vectors import (
    KL_FLOOR,
    as_vector,
    check_same_dim,
    cosine_similarity,
    kl_divergence,
    l1_distance,
    l2_distance,
    softmax_rows,
    softmax_with_temperature,
)

AD_METRICS = ("cosine", "l1", "l2", "sup_contrastive")
RD_OUTER_METRICS = ("mse", "l1", "kl_on_softmax")
RD_INNER_METRICS = ("cosine_sim", "l2")


@dataclass(frozen=True)
class LossConfig:
    """Weights and metric selections for the combined objective."""

    ce_weight: float = 1.0
    hint_weight: float = 1.0
    dist_weight: float = 0.05
    temperature: float = 2.0
    ad_metric: str = "cosine"
    rd_outer: str = "mse"
    rd_inner: str = "cosine_sim"
    hint_t_squared: bool = False
    contrastive_tau: float = 0.5
    use_ad: bool = True
    use_rd: bool = True

    def __post_init__(self):
        for name in ("ce_weight", "hint_weight", "dist_weight"):
            w = getattr(self, name)
            if not (np.isfinite(w) and w >= 0):
                raise ConfigError(f"{name} must be a finite non-negative real, got {w}")
        if self.ce_weight == 0 and self.hint_weight == 0 and self.dist_weight == 0:
            raise ConfigError("at least one loss weight must be positive")
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not (np.isfinite(self.contrastive_tau) and self.contrastive_tau > 0):
            raise ConfigError(f"contrastive_tau must be positive, got {self.contrastive_tau}")
        if self.ad_metric not in AD_METRICS:
            raise ConfigError(f"ad_metric must be one of {AD_METRICS}, got {self.ad_metric!r}")
        if self.rd_outer not in RD_OUTER_METRICS:
            raise ConfigError(f"rd_outer must be one of {RD_OUTER_METRICS}, got {self.rd_outer!r}")
        if self.rd_inner not in RD_INNER_METRICS:
            raise ConfigError(f"rd_inner must be one of {RD_INNER_METRICS}, got {self.rd_inner!r}")

    @property
    def ad_active(self) -> bool:
        return self.dist_weight > 0 and self.use_ad

    @property
    def rd_active(self) -> bool:
        return self.dist_weight > 0 and self.use_rd


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term values plus their weighted combination."""

    ce: float
    hint: float
    ad: float
    rd: float
    total: float


def combine_terms(ce: float, hint: float, ad: float, rd: float, cfg: LossConfig) -> LossBreakdown:
    total = cfg.ce_weight * ce + cfg.hint_weight * hint + cfg.dist_weight * (ad + rd)
    return LossBreakdown(ce=ce, hint=hint, ad=ad, rd=rd, total=total)


# ---------------------------------------------------------------------------
# Scalar reference implementations (one sample)
# ---------------------------------------------------------------------------

def cross_entropy_loss(student_logits, label: int) -> float:
    """-ln softmax(logits)[label], computed via log-sum-exp."""
    z = as_vector(student_logits, "student_logits")
    if not 0 <= label < z.shape[0]:
        raise IndexError(f"label {label} out of range [0, {z.shape[0]})")
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    return max(0.0, float(lse - z[label]))


def cross_entropy_grad(student_logits, label: int) -> np.ndarray:
    z = as_vector(student_logits, "student_logits")
    if not 0 <= label < z.shape[0]:
        raise IndexError(f"label {label} out of range [0, {z.shape[0]})")
    g = softmax_with_temperature(z, 1.0)
    g[label] -= 1.0
    return g


def hint_loss(student_logits, teacher_logits, t: float, t_squared: bool = False) -> float:
    """KL(teacher || student) between temperature-softened distributions,
    optionally multiplied by t^2."""
    zs = as_vector(student_logits, "student_logits")
    zt = as_vector(teacher_logits, "teacher_logits")
    check_same_dim(zs, zt, "logit")
    p = softmax_with_temperature(zt, t)
    q = softmax_with_temperature(zs, t)
    val = kl_divergence(p, q)
    return val * t * t if t_squared else val


def hint_grad(student_logits, teacher_logits, t: float, t_squared: bool = False) -> np.ndarray:
    zs = as_vector(student_logits, "student_logits")
    zt = as_vector(teacher_logits, "teacher_logits")
    check_same_dim(zs, zt, "logit")
    p = softmax_with_temperature(zt, t)
    q = softmax_with_temperature(zs, t)
    g = (q - p) / t
    return g * t * t if t_squared else g


def absolute_distance_loss(u, target, metric: str = "cosine") -> float:
    """Distance between the projected student embedding and its class target.

    cosine -> 1 - cos(u, target); l1/l2 -> the respective distance. The
    sup_contrastive variant is supervised_contrastive_loss below.
    """
    if metric == "cosine":
        return max(0.0, 1.0 - cosine_similarity(u, target))
    if metric == "l1":
        return l1_distance(u, target)
    if metric == "l2":
        return l2_distance(u, target)
    raise ConfigError(f"unsupported absolute-distance metric {metric!r}")


def absolute_distance_grad(u, target, metric: str = "cosine") -> np.ndarray:
    u = as_vector(u, "u")
    e = as_vector(target, "target")
    check_same_dim(u, e)
    if metric == "cosine":
        un = np.linalg.norm(u)
        en = np.linalg.norm(e)
        cos = float(np.dot(u, e) / (un * en))
        return -(e / en - cos * u / un) / un
    if metric == "l1":
        return np.sign(u - e)
    if metric == "l2":
        d = np.linalg.norm(u - e)
        return (u - e) / d if d > 0 else np.zeros_like(u)
    raise ConfigError(f"unsupported absolute-distance metric {metric!r}")


def supervised_contrastive_loss(u, table: TeacherTable, label: int, tau: float) -> float:
    """InfoNCE over class embeddings: the positive pair is (u, target of the
    true class), negatives are the other classes' targets."""
    return _sup_contrastive(u, table.generic, label, tau)[0]


def supervised_contrastive_grad(u, class_targets: np.ndarray, label: int,
                                tau: float) -> np.ndarray:
    return _sup_contrastive(u, class_targets, label, tau)[1]


def _sup_contrastive(u, class_targets, label, tau):
    if tau <= 0:
        raise ConfigError(f"contrastive_tau must be positive, got {tau}")
    u = as_vector(u, "u")
    targets = np.asarray(class_targets, dtype=np.float64)
    if not 0 <= label < targets.shape[0]:
        raise IndexError(f"label {label} out of range [0, {targets.shape[0]})")
    check_same_dim(u, targets)
    un = np.linalg.norm(u)
    that = targets / np.linalg.norm(targets, axis=1, keepdims=True)
    cos = that @ (u / un)
    q = softmax_with_temperature(cos, tau)
    value = max(0.0, float(-np.log(q[label])))
    w = q.copy()
    w[label] -= 1.0
    w /= tau
    uhat = u / un
    grad = (w @ that - float(w @ cos) * uhat) / un
    return value, grad


def relative_distance_loss(u, generic_i, anchors_i, outer: str = "mse",
                           inner: str = "cosine_sim") -> float:
    """Mismatch between the student's and the target's anchor profiles.

    For each anchor a_d, inner(u, a_d) is compared against inner(generic_i,
    a_d); the outer metric reduces the per-anchor discrepancies (mse / l1 are
    means over anchors, kl_on_softmax compares softmaxed profiles).
    """
    s, r = _anchor_profiles(u, generic_i, anchors_i, inner)
    if outer == "mse":
        return float(np.mean((s - r) ** 2))
    if outer == "l1":
        return float(np.mean(np.abs(s - r)))
    if outer == "kl_on_softmax":
        return max(0.0, kl_divergence(softmax_with_temperature(r, 1.0),
                                      softmax_with_temperature(s, 1.0)))
    raise ConfigError(f"unsupported relative-distance outer metric {outer!r}")


def relative_distance_grad(u, generic_i, anchors_i, outer: str = "mse",
                           inner: str = "cosine_sim") -> np.ndarray:
    u = as_vector(u, "u")
    anchors = np.stack([as_vector(a, "anchor") for a in anchors_i])
    s, r = _anchor_profiles(u, generic_i, anchors_i, inner)
    k = s.shape[0]
    if outer == "mse":
        w = 2.0 * (s - r) / k
    elif outer == "l1":
        w = np.sign(s - r) / k
    elif outer == "kl_on_softmax":
        w = softmax_with_temperature(s, 1.0) - softmax_with_temperature(r, 1.0)
    else:
        raise ConfigError(f"unsupported relative-distance outer metric {outer!r}")

    if inner == "cosine_sim":
        un = np.linalg.norm(u)
        ahat = anchors / np.linalg.norm(anchors, axis=1, keepdims=True)
        uhat = u / un
        return (w @ ahat - float(w @ s) * uhat) / un
    # inner == "l2"
    diff = u[None, :] - anchors
    safe = np.where(s > 0, s, 1.0)
    per = np.where(s[:, None] > 0, diff / safe[:, None], 0.0)
    return w @ per


def _anchor_profiles(u, generic_i, anchors_i, inner):
    u = as_vector(u, "u")
    g = as_vector(generic_i, "generic_i")
    check_same_dim(u, g)
    if len(anchors_i) == 0:
        raise EmptyInput("relative distance requires at least one anchor")
    anchors = np.stack([as_vector(a, "anchor") for a in anchors_i])
    check_same_dim(u, anchors, "anchor")
    if inner == "cosine_sim":
        s = np.array([cosine_similarity(u, a) for a in anchors])
        r = np.array([cosine_similarity(g, a) for a in anchors])
    elif inner == "l2":
        s = np.array([l2_distance(u, a) for a in anchors])
        r = np.array([l2_distance(g, a) for a in anchors])
    else:
        raise ConfigError(f"unsupported relative-distance inner metric {inner!r}")
    return s, r


def total_loss(sample_outputs, sample, table: TeacherTable, cfg: LossConfig,
               targets: np.ndarray | None = None,
               anchor_domains=None) -> LossBreakdown:
    """Per-sample weighted objective.

    `sample_outputs` is the (student_logits, u) pair from the forward pass.
    `targets` overrides the per-class supervision embeddings (defaults to the
    table's generic embeddings); `anchor_domains` restricts the relative
    distance to the given domain indices (defaults to all table domains).
    Inactive terms (zero weight or disabled) are reported as 0.
    """
    student_logits, u = sample_outputs
    if targets is None:
        targets = table.generic
    ce = hint = ad = rd = 0.0
    if cfg.ce_weight > 0:
        ce = cross_entropy_loss(student_logits, sample.label)
    if cfg.hint_weight > 0:
        t_logits = teacher_logits(sample.teacher_emb, table)
        hint = hint_loss(student_logits, t_logits, cfg.temperature, cfg.hint_t_squared)
    if cfg.ad_active:
        if cfg.ad_metric == "sup_contrastive":
            ad = _sup_contrastive(u, targets, sample.label, cfg.contrastive_tau)[0]
        else:
            ad = absolute_distance_loss(u, targets[sample.label], cfg.ad_metric)
    if cfg.rd_active:
        anchors = table.anchor_matrix(
            range(table.num_domains) if anchor_domains is None else anchor_domains
        )
        rd = relative_distance_loss(u, targets[sample.label],
                                    anchors[:, sample.label, :],
                                    cfg.rd_outer, cfg.rd_inner)
    return combine_terms(ce, hint, ad, rd, cfg)


# ---------------------------------------------------------------------------
# Batched path (training and finite-difference checks)
# ---------------------------------------------------------------------------

@dataclass
class LossContext:
    """Frozen-teacher quantities precomputed once per training run."""

    targets: np.ndarray              # (C, D) supervision embeddings
    targets_hat: np.ndarray          # row-normalized targets
    teacher_probs: np.ndarray        # (N, C) softened teacher distributions
    anchors: np.ndarray | None       # (K, C, D) source-domain anchors
    anchors_hat: np.ndarray | None
    ref_inner: np.ndarray | None     # (C, K) inner metric target-vs-anchor
    head_table: TeacherTable | None  # only for the text_cosine head


def make_loss_context(samples, table: TeacherTable, cfg: LossConfig,
                      supervision_source: str = "text_ensemble",
                      anchor_domains=None) -> LossContext:
    """Precompute supervision targets, teacher distributions, and anchor
    profiles for a fixed sample list."""
    targets = supervision_matrix(table, samples, supervision_source)
    targets_hat = targets / np.linalg.norm(targets, axis=1, keepdims=True)

    te = np.stack([np.asarray(s.teacher_emb, dtype=np.float64) for s in samples])
    g = table.generic
    cos = (te @ g.T) / (np.linalg.norm(te, axis=1, keepdims=True)
                        * np.linalg.norm(g, axis=1))
    teacher_probs = softmax_rows(table.logit_scale * cos, cfg.temperature)

    anchors = anchors_hat = ref_inner = None
    if cfg.rd_active:
        idx = list(range(table.num_domains)) if anchor_domains is None else list(anchor_domains)
        anchors = table.anchor_matrix(idx)                      # (K, C, D)
        anchors_hat = anchors / np.linalg.norm(anchors, axis=2, keepdims=True)
        if cfg.rd_inner == "cosine_sim":
            ref_inner = np.einsum("cd,kcd->ck", targets_hat, anchors_hat)
        else:
            ref_inner = np.linalg.norm(targets[None, :, :] - anchors, axis=2).T
    return LossContext(targets=targets, targets_hat=targets_hat,
                       teacher_probs=teacher_probs, anchors=anchors,
                       anchors_hat=anchors_hat, ref_inner=ref_inner,
                       head_table=table)


def batch_terms(model: StudentModel, X: np.ndarray, labels: np.ndarray,
                teacher_probs: np.ndarray, ctx: LossContext, cfg: LossConfig,
                want_grads: bool = True):
    """Mean loss terms over a batch, optionally with parameter gradients.

    teacher_probs must be the rows of ctx.teacher_probs matching X.
    Returns (LossBreakdown, grads-or-None); gradients are of the mean total.
    """
    n = X.shape[0]
    if n == 0:
        raise EmptyInput("batch must be non-empty")
    y = np.asarray(labels)
    table = ctx.head_table if model.head_mode == "text_cosine" else None
    U, Z, cache = forward_batch(model, X, table, want_cache=True)
    rows = np.arange(n)

    dZ = np.zeros_like(Z)
    dU = np.zeros_like(U)

    ce = hint = ad = rd = 0.0

    if cfg.ce_weight > 0:
        m = Z.max(axis=1, keepdims=True)
        lse = (m[:, 0] + np.log(np.exp(Z - m).sum(axis=1)))
        ce = float(np.mean(np.maximum(0.0, lse - Z[rows, y])))
        if want_grads:
            g = softmax_rows(Z)
            g[rows, y] -= 1.0
            dZ += cfg.ce_weight * g

    if cfg.hint_weight > 0:
        t = cfg.temperature
        P = teacher_probs
        Q = softmax_rows(Z, t)
        Qf = np.maximum(Q, KL_FLOOR)
        Qf = Qf / Qf.sum(axis=1, keepdims=True)
        terms = np.where(P > 0, P * (np.log(np.where(P > 0, P, 1.0)) - np.log(Qf)), 0.0)
        per = terms.sum(axis=1)
        if cfg.hint_t_squared:
            per = per * t * t
        hint = float(np.mean(per))
        if want_grads:
            g = (Q - P) * (t if cfg.hint_t_squared else 1.0 / t)
            dZ += cfg.hint_weight * g

    u_norm = np.linalg.norm(U, axis=1, keepdims=True)
    safe_un = np.maximum(u_norm, 1e-300)
    U_hat = U / safe_un

    if cfg.ad_active:
        if cfg.ad_metric == "cosine":
            E_hat = ctx.targets_hat[y]
            cos = np.einsum("nd,nd->n", U_hat, E_hat)
            ad = float(np.mean(np.maximum(0.0, 1.0 - cos)))
            if want_grads:
                dU += cfg.dist_weight * (-(E_hat - cos[:, None] * U_hat) / safe_un)
        elif cfg.ad_metric == "l1":
            diff = U - ctx.targets[y]
            ad = float(np.mean(np.abs(diff).sum(axis=1)))
            if want_grads:
                dU += cfg.dist_weight * np.sign(diff)
        elif cfg.ad_metric == "l2":
            diff = U - ctx.targets[y]
            d = np.linalg.norm(diff, axis=1, keepdims=True)
            ad = float(np.mean(d))
            if want_grads:
                dU += cfg.dist_weight * np.where(d > 0, diff / np.where(d > 0, d, 1.0), 0.0)
        else:  # sup_contrastive
            tau = cfg.contrastive_tau
            cosM = U_hat @ ctx.targets_hat.T                  # (n, C)
            q = softmax_rows(cosM / tau)
            ad = float(np.mean(np.maximum(0.0, -np.log(q[rows, y]))))
            if want_grads:
                w = q.copy()
                w[rows, y] -= 1.0
                w /= tau
                term = w @ ctx.targets_hat
                term -= np.einsum("nc,nc->n", w, cosM)[:, None] * U_hat
                dU += cfg.dist_weight * term / safe_un

    if cfg.rd_active:
        A = ctx.anchors[:, y, :]                              # (K, n, D)
        A_hat = ctx.anchors_hat[:, y, :]
        R = ctx.ref_inner[y]                                  # (n, K)
        k = A.shape[0]
        if cfg.rd_inner == "cosine_sim":
            S = np.einsum("nd,knd->nk", U_hat, A_hat)
        else:
            diffs = U[None, :, :] - A                         # (K, n, D)
            S = np.linalg.norm(diffs, axis=2).T               # (n, K)

        if cfg.rd_outer == "mse":
            rd = float(np.mean(np.mean((S - R) ** 2, axis=1)))
            W = 2.0 * (S - R) / k
        elif cfg.rd_outer == "l1":
            rd = float(np.mean(np.mean(np.abs(S - R), axis=1)))
            W = np.sign(S - R) / k
        else:  # kl_on_softmax
            Pr = softmax_rows(R)
            Qs = softmax_rows(S)
            Qf = np.maximum(Qs, KL_FLOOR)
            Qf = Qf / Qf.sum(axis=1, keepdims=True)
            terms = np.where(Pr > 0, Pr * (np.log(np.where(Pr > 0, Pr, 1.0)) - np.log(Qf)), 0.0)
            rd = float(np.mean(np.maximum(0.0, terms.sum(axis=1))))
            W = Qs - Pr

        if want_grads:
            if cfg.rd_inner == "cosine_sim":
                term = np.einsum("nk,knd->nd", W, A_hat)
                term -= np.einsum("nk,nk->n", W, S)[:, None] * U_hat
                dU += cfg.dist_weight * term / safe_un
            else:
                safe_s = np.where(S > 0, S, 1.0)
                per = np.where(S.T[:, :, None] > 0, diffs / safe_s.T[:, :, None], 0.0)
                dU += cfg.dist_weight * np.einsum("nk,knd->nd", W, per)

    breakdown = combine_terms(ce, hint, ad, rd, cfg)
    if not want_grads:
        return breakdown, None
    grads = backprop(model, cache, dU, dZ, table)
    for name in grads:
        grads[name] /= n
    return breakdown, grads


def batch_loss(model: StudentModel, X, labels, teacher_probs, ctx: LossContext,
               cfg: LossConfig) -> LossBreakdown:
    """Mean loss terms over a batch without gradients (finite-difference side)."""
    breakdown, _ = batch_terms(model, X, labels, teacher_probs, ctx, cfg, want_grads=False)
    return breakdown


def loss_gradients(batch, model: StudentModel, table: TeacherTable, cfg: LossConfig,
                   supervision_source: str = "text_ensemble",
                   anchor_domains=None) -> dict[str, np.ndarray]:
    """Analytic gradient of the mean total loss over `batch` with respect to
    every trainable parameter. Frozen-teacher quantities receive none."""
    if len(batch) == 0:
        raise EmptyInput("batch must be non-empty")
    ctx = make_loss_context(batch, table, cfg, supervision_source, anchor_domains)
    X = np.stack([np.asarray(s.feature, dtype=np.float64) for s in batch])
    y = np.array([s.label for s in batch])
    _, grads = batch_terms(model, X, y, ctx.teacher_probs, ctx, cfg, want_grads=True)
    return grads
