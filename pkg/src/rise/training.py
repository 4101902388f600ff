"""Training loop, leave-one-domain-out protocol, evaluation, and sweeps.

A run is bitwise deterministic in (samples, table, config): initialization,
the train/validation split, and per-epoch shuffles all derive from the
config seed, and batch reductions happen in fixed index order. After every
epoch the model is scored on the held-in validation split; the returned
parameters are the snapshot from the best validation epoch (earliest wins
ties), never the final epoch.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, stack_samples
from .errors import ConfigError, EmptyInput, TrainingDiverged
from .losses import LossConfig, batch_terms, make_loss_context
from .student import StudentModel, forward_batch, init_student
from .teacher import TeacherTable
from .vectors import softmax_rows

OPTIMIZERS = ("adam", "sgd_momentum")

# Search ranges used when a run opts into range enforcement; mirrors the
# sweep space the method was tuned over.
SEARCH_RANGE = {"ce_weight": (0.1, 1.0), "hint_weight": (0.1, 1.0),
                "dist_weight": (0.1, 1.0), "temperature": (1.0, 3.0)}


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 300
    val_fraction: float = 0.10
    seed: int = 0
    supervision_source: str = "text_ensemble"
    held_out_domain: str | None = None
    hidden_dim: int | None = 256
    head_mode: str = "fc"
    enforce_search_range: bool = False

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive integers")
        if not 0 < self.val_fraction < 1:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.enforce_search_range:
            values = {"ce_weight": self.loss.ce_weight, "hint_weight": self.loss.hint_weight,
                      "dist_weight": self.loss.dist_weight,
                      "temperature": self.loss.temperature}
            for name, (lo, hi) in SEARCH_RANGE.items():
                v = values[name]
                if not lo <= v <= hi:
                    raise ConfigError(
                        f"{name}={v} outside the search range [{lo}, {hi}]")


@dataclass
class EvalReport:
    per_domain_accuracy: dict[str, float] = field(default_factory=dict)
    held_out_accuracy: float | None = None
    val_accuracy_history: list[float] = field(default_factory=list)
    selected_epoch: int | None = None


# ---------------------------------------------------------------------------
# Optimizers (plain numpy; deterministic, zero-gradient is a no-op)
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


class SGDMomentum:
    def __init__(self, params: dict[str, np.ndarray], lr: float, momentum: float = 0.9):
        self.lr, self.momentum = lr, momentum
        self.vel = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k in params:
            self.vel[k] = self.momentum * self.vel[k] + grads[k]
            params[k] -= self.lr * self.vel[k]


def make_optimizer(cfg: TrainConfig, params: dict[str, np.ndarray]):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    return SGDMomentum(params, cfg.lr, cfg.momentum)


# ---------------------------------------------------------------------------
# Splitting and accuracy
# ---------------------------------------------------------------------------

def split_train_val(samples, fraction: float, seed: int):
    """Stratified-by-(domain, class) shuffled split, deterministic in the seed.

    Per stratum, round(fraction * n) samples go to validation; strata with a
    single sample keep it in training (with a warning).
    """
    if not 0 < fraction < 1:
        raise ConfigError(f"fraction must be in (0, 1), got {fraction}")
    groups: dict[tuple[int, int], list] = {}
    for s in samples:
        groups.setdefault((s.domain, s.label), []).append(s)
    rng = np.random.default_rng(seed)
    train, val = [], []
    for key in sorted(groups):
        members = groups[key]
        if len(members) < 2:
            warnings.warn(f"stratum (domain={key[0]}, class={key[1]}) has "
                          f"{len(members)} sample(s); keeping all in train")
            train.extend(members)
            continue
        order = rng.permutation(len(members))
        n_val = min(int(len(members) * fraction + 0.5), len(members) - 1)
        val.extend(members[i] for i in order[:n_val])
        train.extend(members[i] for i in order[n_val:])
    return train, val


def accuracy(model: StudentModel, X: np.ndarray, y: np.ndarray,
             table: TeacherTable | None = None) -> float:
    _, Z = forward_batch(model, X, table)
    return float(np.mean(np.argmax(Z, axis=1) == y))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train(samples, table: TeacherTable, cfg: TrainConfig):
    """Minibatch training on the mean combined loss.

    Returns (model-with-best-validation-parameters, EvalReport). The report's
    per-domain accuracies cover the domains present in `samples`; the caller
    owns held-out evaluation.
    """
    if len(samples) == 0:
        raise EmptyInput("no training samples")
    source_domains = sorted({s.domain for s in samples})
    if cfg.held_out_domain is not None and cfg.held_out_domain in table.domains:
        held_idx = table.domain_index(cfg.held_out_domain)
        if held_idx in source_domains:
            raise ConfigError(
                f"held-out domain {cfg.held_out_domain!r} appears in the training samples")
    if cfg.loss.rd_active:
        if table.anchors is None:
            raise ConfigError("relative distance requires anchor embeddings in the table")
        if len(source_domains) < 2:
            raise ConfigError("relative distance requires at least two source domains")

    train_samples, val_samples = split_train_val(samples, cfg.val_fraction, cfg.seed)
    X, _, y, _ = stack_samples(train_samples)
    ctx = make_loss_context(train_samples, table, cfg.loss, cfg.supervision_source,
                            anchor_domains=source_domains)
    model = init_student(X.shape[1], cfg.hidden_dim, table.dim, table.num_classes,
                         head_mode=cfg.head_mode, seed=cfg.seed)
    head_table = table if cfg.head_mode == "text_cosine" else None

    if val_samples:
        Xv, _, yv, _ = stack_samples(val_samples)
    else:
        warnings.warn("validation split is empty; selecting on training accuracy")
        Xv, yv = X, y

    opt = make_optimizer(cfg, model.params)
    shuffle_rng = np.random.default_rng([cfg.seed, 0x5EED])
    n = X.shape[0]

    history: list[float] = []
    best_acc = -1.0
    best_epoch = 0
    best_params = model.copy_params()
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            breakdown, grads = batch_terms(model, X[idx], y[idx],
                                           ctx.teacher_probs[idx], ctx, cfg.loss)
            if not np.isfinite(breakdown.total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            opt.step(model.params, grads)
        if any(not np.all(np.isfinite(v)) for v in model.params.values()):
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}", epoch=epoch)
        val_acc = accuracy(model, Xv, yv, head_table)
        history.append(val_acc)
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_params = model.copy_params()

    model.load_params(best_params)
    report = EvalReport(val_accuracy_history=history, selected_epoch=best_epoch)
    all_X, _, all_y, all_dom = stack_samples(samples)
    for d in source_domains:
        mask = all_dom == d
        report.per_domain_accuracy[table.domains[d]] = accuracy(
            model, all_X[mask], all_y[mask], head_table)
    return model, report


def leave_one_domain_out(dataset: Dataset, table: TeacherTable, cfg: TrainConfig,
                         target_domain: str):
    """Hold one domain out entirely, train on the rest, report its accuracy.

    Neither the target domain's samples nor its anchor embedding are touched
    during training. Returns (model, EvalReport).
    """
    if target_domain not in dataset.domains:
        raise ConfigError(f"unknown target domain {target_domain!r}")
    if tuple(dataset.classes) != tuple(table.classes):
        raise ConfigError("dataset and table class vocabularies differ")
    if tuple(dataset.domains) != tuple(table.domains):
        raise ConfigError("dataset and table domain vocabularies differ")
    target_idx = dataset.domains.index(target_domain)
    source = [s for s in dataset.samples if s.domain != target_idx]
    if not source:
        raise EmptyInput("no source-domain samples remain")
    model, report = train(source, table, replace(cfg, held_out_domain=target_domain))

    head_table = table if cfg.head_mode == "text_cosine" else None
    X, _, y, dom = stack_samples(dataset.samples)
    for d, name in enumerate(dataset.domains):
        mask = dom == d
        if np.any(mask):
            report.per_domain_accuracy[name] = accuracy(model, X[mask], y[mask], head_table)
    report.held_out_accuracy = report.per_domain_accuracy[target_domain]
    return model, report


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------

def ensemble_probabilities(models, X: np.ndarray, table: TeacherTable) -> np.ndarray:
    """Mean of the per-model softmax distributions, each under its own head."""
    if len(models) == 0:
        raise EmptyInput("ensemble requires at least one model")
    classes = models[0].num_classes
    for m in models:
        if m.num_classes != classes:
            raise ConfigError("ensemble members disagree on class count")
    acc = np.zeros((X.shape[0], classes))
    for m in models:
        head_table = table if m.head_mode == "text_cosine" else None
        _, Z = forward_batch(m, X, head_table)
        acc += softmax_rows(Z)
    return acc / len(models)


def evaluate_ensemble(models, samples, table: TeacherTable) -> EvalReport:
    """Probability-averaged ensemble accuracy over `samples`.

    A single-model list degenerates to plain evaluation; duplicated members
    change nothing. held_out_accuracy is the overall accuracy on the given
    samples.
    """
    X, _, y, dom = stack_samples(samples)
    probs = ensemble_probabilities(models, X, table)
    preds = np.argmax(probs, axis=1)
    report = EvalReport(held_out_accuracy=float(np.mean(preds == y)))
    for d in sorted(set(dom.tolist())):
        mask = dom == d
        report.per_domain_accuracy[table.domains[d]] = float(np.mean(preds[mask] == y[mask]))
    return report


# ---------------------------------------------------------------------------
# Ablation sweeps
# ---------------------------------------------------------------------------

def loss_suite(base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    """Row structure of the per-term ablation: plain supervised training,
    + hint, + each distance term, + both."""
    L = base.loss
    return [
        ("erm", replace(base, loss=replace(L, hint_weight=0.0, dist_weight=0.0))),
        ("erm_hint", replace(base, loss=replace(L, dist_weight=0.0))),
        ("erm_hint_ad", replace(base, loss=replace(L, use_rd=False))),
        ("erm_hint_rd", replace(base, loss=replace(L, use_ad=False))),
        ("erm_hint_ad_rd", base),
    ]


def supervision_suite(base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    rows = []
    for term, lk in (("ad", dict(use_rd=False)), ("rd", dict(use_ad=False))):
        for src in ("text_ensemble", "image_mean"):
            label = "text" if src == "text_ensemble" else "image"
            rows.append((f"{term}_{label}",
                         replace(base, supervision_source=src,
                                 loss=replace(base.loss, **lk))))
    return rows


def template_suite(base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    rows = []
    for term, lk in (("ad", dict(use_rd=False)), ("rd", dict(use_ad=False))):
        for src in ("text_single", "text_ensemble"):
            label = "single" if src == "text_single" else "ensemble"
            rows.append((f"{term}_{label}",
                         replace(base, supervision_source=src,
                                 loss=replace(base.loss, **lk))))
    return rows


def metric_suite(base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    """Distance-metric rows: each absolute metric, then each outer relative
    metric with the inner fixed to cosine similarity."""
    rows = []
    for k in ("cosine", "sup_contrastive", "l1", "l2"):
        rows.append((f"ad_{k}", replace(base, loss=replace(
            base.loss, ad_metric=k, use_rd=False))))
    for k1 in ("kl_on_softmax", "l1", "mse"):
        rows.append((f"rd_{k1}", replace(base, loss=replace(
            base.loss, rd_outer=k1, rd_inner="cosine_sim", use_ad=False))))
    return rows


SUITES = ("losses", "metrics", "templates", "supervision", "mix")


def suite_variants(suite: str, base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    builders = {"losses": loss_suite, "supervision": supervision_suite,
                "templates": template_suite, "metrics": metric_suite}
    if suite not in builders:
        raise ConfigError(f"unknown suite {suite!r}; expected one of {SUITES}")
    return builders[suite](base)


def _sweep_cell(args):
    dataset, table, name, cfg, domain, seed = args
    _, report = leave_one_domain_out(dataset, table,
                                     replace(cfg, seed=seed), domain)
    return {"variant": name, "target_domain": domain, "seed": seed,
            "accuracy": report.held_out_accuracy,
            "selected_epoch": report.selected_epoch}


def ablation_sweep(dataset: Dataset, tables, variants, seeds,
                   target_domains=None, jobs: int = 1) -> list[dict]:
    """Run leave-one-domain-out per (variant, target domain, seed).

    Returns one row dict per cell, ordered by (variant, domain, seed)
    regardless of execution order. `tables` may be one table or a list; the
    generic sweep uses the first, mix-teacher rows are built separately.
    """
    if not variants:
        raise ConfigError("variant grid must be non-empty")
    if not seeds:
        raise ConfigError("at least one seed is required")
    table = tables[0] if isinstance(tables, (list, tuple)) else tables
    domains = list(target_domains) if target_domains else list(dataset.domains)
    cells = [(dataset, table, name, cfg, dom, seed)
             for name, cfg in variants for dom in domains for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    order = {name: i for i, (name, _) in enumerate(variants)}
    rows.sort(key=lambda r: (order[r["variant"]], r["target_domain"], r["seed"]))
    return rows


def mix_teacher_sweep(dataset: Dataset, tables, cfg: TrainConfig, seeds,
                      target_domains=None) -> list[dict]:
    """Mix-teacher rows: one student per teacher, their probability-averaged
    ensemble, and a same-teacher two-seed ensemble for comparison."""
    if len(tables) < 2:
        raise ConfigError("mix-teacher sweep needs at least two teacher tables")
    domains = list(target_domains) if target_domains else list(dataset.domains)
    rows = []
    for dom in domains:
        target_idx = dataset.domains.index(dom)
        target_samples = [s for s in dataset.samples if s.domain == target_idx]
        for seed in seeds:
            run_cfg = replace(cfg, seed=seed)
            students = []
            for table in tables:
                model, report = leave_one_domain_out(dataset, table, run_cfg, dom)
                students.append(model)
                rows.append({"variant": f"teacher_{table.teacher_id}",
                             "target_domain": dom, "seed": seed,
                             "accuracy": report.held_out_accuracy,
                             "selected_epoch": report.selected_epoch})
            mix = evaluate_ensemble(students, target_samples, tables[0])
            rows.append({"variant": "mix_ensemble", "target_domain": dom, "seed": seed,
                         "accuracy": mix.held_out_accuracy, "selected_epoch": None})
            twin, _ = leave_one_domain_out(dataset, tables[0],
                                           replace(cfg, seed=seed + 1000), dom)
            same = evaluate_ensemble([students[0], twin], target_samples, tables[0])
            rows.append({"variant": "same_teacher_ensemble", "target_domain": dom,
                         "seed": seed, "accuracy": same.held_out_accuracy,
                         "selected_epoch": None})
    return rows


def summarize_rows(rows) -> list[dict]:
    """Mean accuracy per variant (and per variant-domain) summary records."""
    by_variant: dict[str, list[float]] = {}
    by_pair: dict[tuple[str, str], list[float]] = {}
    for r in rows:
        by_variant.setdefault(r["variant"], []).append(r["accuracy"])
        by_pair.setdefault((r["variant"], r["target_domain"]), []).append(r["accuracy"])
    out = []
    for (variant, dom), accs in sorted(by_pair.items()):
        out.append({"summary": "variant_domain", "variant": variant,
                    "target_domain": dom, "mean_accuracy": float(np.mean(accs)),
                    "runs": len(accs)})
    for variant, accs in sorted(by_variant.items()):
        out.append({"summary": "variant", "variant": variant,
                    "mean_accuracy": float(np.mean(accs)), "runs": len(accs)})
    return out
