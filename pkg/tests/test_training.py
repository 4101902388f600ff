"""Training loop, splits, protocol hygiene, optimizers, and ensembling."""

import numpy as np
import pytest

from rise.data import Dataset, LabeledSample, SynthParams, generate_synthetic
from rise.errors import ConfigError, TrainingDiverged
from rise.losses import LossConfig
from rise.student import forward_batch, init_student
from rise.teacher import TeacherTable
from rise.training import (Adam, EvalReport, SGDMomentum, TrainConfig, ablation_sweep,
                           evaluate_ensemble, leave_one_domain_out, loss_suite,
                           metric_suite, split_train_val, supervision_suite,
                           template_suite, train)
from rise.vectors import normalize


def make_samples(n_per, classes, domains, dim, seed=0, noise=0.05):
    """Tiny dataset where features equal (noisy) teacher embeddings."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, classes)))
    protos = q.T
    samples = []
    for d in range(domains):
        for c in range(classes):
            for k in range(n_per):
                emb = normalize(protos[c] + noise * rng.standard_normal(dim))
                samples.append(LabeledSample(id=f"{d}-{c}-{k}", feature=emb,
                                             teacher_emb=emb, label=c, domain=d))
    table = TeacherTable(dim=dim, classes=tuple(f"c{i}" for i in range(classes)),
                         domains=tuple(f"d{j}" for j in range(domains)),
                         generic=protos.copy(),
                         anchors=normalize(protos[None, :, :].repeat(domains, axis=0)
                                           + 0.1 * rng.standard_normal((domains, classes, dim))),
                         teacher_id="tiny", logit_scale=10.0)
    ds = Dataset(feature_dim=dim, text_dim=dim,
                 classes=table.classes, domains=table.domains, samples=samples)
    return ds, table


# --- split ------------------------------------------------------------------------

def test_split_fraction_and_determinism():
    ds, _ = make_samples(10, 2, 5, 6)  # 100 samples, 10 strata of 10
    tr1, va1 = split_train_val(ds.samples, 0.10, seed=3)
    tr2, va2 = split_train_val(ds.samples, 0.10, seed=3)
    assert len(tr1) == 90 and len(va1) == 10
    assert [s.id for s in tr1] == [s.id for s in tr2]
    assert [s.id for s in va1] == [s.id for s in va2]
    assert set(s.id for s in tr1).isdisjoint(s.id for s in va1)


def test_split_different_seed_differs():
    ds, _ = make_samples(10, 2, 5, 6)
    _, va1 = split_train_val(ds.samples, 0.10, seed=3)
    _, va2 = split_train_val(ds.samples, 0.10, seed=4)
    assert set(s.id for s in va1) != set(s.id for s in va2)


def test_split_singleton_stratum_stays_in_train():
    ds, _ = make_samples(1, 2, 2, 6)
    with pytest.warns(UserWarning, match="stratum"):
        tr, va = split_train_val(ds.samples, 0.10, seed=0)
    assert len(tr) == 4 and len(va) == 0


def test_split_rejects_bad_fraction():
    ds, _ = make_samples(5, 2, 2, 6)
    for f in (0.0, 1.0, -0.5):
        with pytest.raises(ConfigError):
            split_train_val(ds.samples, f, seed=0)


def test_split_stratified_by_domain_and_class():
    ds, _ = make_samples(10, 2, 3, 6)
    _, va = split_train_val(ds.samples, 0.10, seed=1)
    cells = {(s.domain, s.label) for s in va}
    assert len(cells) == 6  # one validation draw from every stratum


# --- optimizers --------------------------------------------------------------------

@pytest.mark.parametrize("opt_cls,kwargs", [(Adam, {}), (SGDMomentum, {})])
def test_zero_gradient_is_a_no_op(opt_cls, kwargs):
    params = {"w": np.array([1.0, -2.0, 3.0]), "b": np.array([0.5])}
    before = {k: v.copy() for k, v in params.items()}
    opt = opt_cls(params, lr=0.1, **kwargs)
    for _ in range(5):
        opt.step(params, {k: np.zeros_like(v) for k, v in params.items()})
    for k in params:
        assert np.array_equal(params[k], before[k])


def test_adam_reduces_quadratic():
    params = {"w": np.array([5.0, -3.0])}
    opt = Adam(params, lr=0.1)
    for _ in range(300):
        opt.step(params, {"w": 2 * params["w"]})
    assert np.linalg.norm(params["w"]) < 1e-3


# --- training ----------------------------------------------------------------------

def erm_config(**over):
    base = dict(loss=LossConfig(hint_weight=0.0, dist_weight=0.0),
                epochs=200, batch_size=16, hidden_dim=None, seed=0)
    base.update(over)
    return TrainConfig(**base)


def test_erm_fits_separable_data():
    ds, table = make_samples(20, 2, 2, 6, noise=0.0)
    model, report = train(ds.samples, table, erm_config())
    X = np.stack([s.feature for s in ds.samples])
    y = np.array([s.label for s in ds.samples])
    _, Z = forward_batch(model, X)
    assert float(np.mean(np.argmax(Z, axis=1) == y)) == 1.0


def test_ad_only_reaches_alignment_fixed_point():
    # run the minimization itself (no snapshotting) on an identity-capable
    # model: the distance-only objective must drive u onto the prototypes
    from rise.losses import batch_terms, make_loss_context
    from rise.training import make_optimizer

    ds, table = make_samples(30, 3, 2, 8, noise=0.1)
    cfg = TrainConfig(loss=LossConfig(ce_weight=0.0, hint_weight=0.0, dist_weight=1.0,
                                      use_rd=False),
                      epochs=200, batch_size=32, hidden_dim=None, lr=5e-3, seed=0)
    ctx = make_loss_context(ds.samples, table, cfg.loss)
    X = np.stack([s.feature for s in ds.samples])
    y = np.array([s.label for s in ds.samples])
    model = init_student(X.shape[1], None, table.dim, table.num_classes, seed=0)
    opt = make_optimizer(cfg, model.params)
    rng = np.random.default_rng(0)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, grads = batch_terms(model, X[idx], y[idx], ctx.teacher_probs[idx],
                                   ctx, cfg.loss)
            opt.step(model.params, grads)
    U, _ = forward_batch(model, X)
    cos = np.einsum("nd,nd->n", U / np.linalg.norm(U, axis=1, keepdims=True),
                    table.generic[y])
    assert float(np.mean(1.0 - cos)) < 0.01


def test_ad_only_training_aligns_snapshot_reasonably():
    # through train() the returned best-validation snapshot is still aligned
    ds, table = make_samples(30, 3, 2, 8, noise=0.35)
    cfg = TrainConfig(loss=LossConfig(ce_weight=0.0, hint_weight=0.0, dist_weight=1.0,
                                      use_rd=False),
                      epochs=200, batch_size=32, hidden_dim=None, lr=5e-3,
                      head_mode="text_cosine", seed=0)
    model, _ = train(ds.samples, table, cfg)
    tr, _ = split_train_val(ds.samples, cfg.val_fraction, cfg.seed)
    X = np.stack([s.feature for s in tr])
    y = np.array([s.label for s in tr])
    U, _ = forward_batch(model, X, table)
    cos = np.einsum("nd,nd->n", U / np.linalg.norm(U, axis=1, keepdims=True),
                    table.generic[y])
    assert float(np.mean(1.0 - cos)) < 0.15


def test_table_unchanged_by_training():
    ds, table = make_samples(10, 2, 2, 6)
    before = (table.generic.copy(), table.anchors.copy())
    train(ds.samples, table, TrainConfig(epochs=5, hidden_dim=4, seed=0))
    assert np.array_equal(table.generic, before[0])
    assert np.array_equal(table.anchors, before[1])


def test_training_deterministic():
    ds, table = make_samples(10, 2, 2, 6)
    cfg = TrainConfig(epochs=10, batch_size=8, hidden_dim=4, seed=5)
    m1, r1 = train(ds.samples, table, cfg)
    m2, r2 = train(ds.samples, table, cfg)
    for name in m1.param_names():
        assert np.array_equal(m1.params[name], m2.params[name])
    assert r1.val_accuracy_history == r2.val_accuracy_history
    assert r1.selected_epoch == r2.selected_epoch


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
def test_training_divergence_raises():
    # unbounded SGD steps overflow the parameters within a few batches
    ds, table = make_samples(10, 2, 2, 6)
    cfg = TrainConfig(epochs=10, lr=1e30, optimizer="sgd_momentum",
                      hidden_dim=4, seed=0)
    with pytest.raises(TrainingDiverged) as err:
        train(ds.samples, table, cfg)
    assert err.value.epoch is not None


def test_rd_requires_two_source_domains():
    ds, table = make_samples(10, 2, 1, 6)
    with pytest.raises(ConfigError, match="two source domains"):
        train(ds.samples, table, TrainConfig(epochs=2, seed=0))


def test_selected_epoch_is_earliest_best():
    ds, table = make_samples(10, 2, 2, 6)
    cfg = TrainConfig(epochs=15, hidden_dim=4, seed=1)
    _, report = train(ds.samples, table, cfg)
    hist = report.val_accuracy_history
    best = max(hist)
    assert hist[report.selected_epoch] == best
    assert report.selected_epoch == hist.index(best)


# --- leave one domain out -------------------------------------------------------------

def test_lodo_excludes_target_domain(monkeypatch):
    ds, table = make_samples(8, 2, 3, 6)
    seen = []
    import rise.training as T
    original = T.train

    def spy(samples, table_, cfg):
        seen.extend(samples)
        return original(samples, table_, cfg)

    monkeypatch.setattr(T, "train", spy)
    _, report = leave_one_domain_out(ds, table, TrainConfig(epochs=3, hidden_dim=4, seed=0), "d2")
    target_idx = ds.domains.index("d2")
    assert seen and all(s.domain != target_idx for s in seen)
    assert report.held_out_accuracy == report.per_domain_accuracy["d2"]
    assert set(report.per_domain_accuracy) == {"d0", "d1", "d2"}


def test_lodo_never_touches_target_anchor(monkeypatch):
    ds, table = make_samples(8, 2, 3, 6)
    requested = []
    original = TeacherTable.anchor_matrix

    def spy(self, domain_indices):
        idx = list(domain_indices)
        requested.append(tuple(idx))
        return original(self, idx)

    monkeypatch.setattr(TeacherTable, "anchor_matrix", spy)
    leave_one_domain_out(ds, table, TrainConfig(epochs=3, hidden_dim=4, seed=0), "d1")
    target_idx = ds.domains.index("d1")
    assert requested, "relative distance must read anchors through anchor_matrix"
    for idx in requested:
        assert target_idx not in idx


def test_lodo_unknown_domain():
    ds, table = make_samples(8, 2, 2, 6)
    with pytest.raises(ConfigError):
        leave_one_domain_out(ds, table, TrainConfig(epochs=2, seed=0), "mars")


def test_lodo_vocab_mismatch():
    ds, table = make_samples(8, 2, 2, 6)
    other = TeacherTable(dim=table.dim, classes=("x", "y"), domains=table.domains,
                         generic=table.generic.copy(), anchors=table.anchors.copy(),
                         teacher_id="other")
    with pytest.raises(ConfigError, match="class vocab"):
        leave_one_domain_out(ds, other, TrainConfig(epochs=2, seed=0), "d1")


def test_lodo_perfect_on_noise_free_identity_data():
    ds, table = make_samples(10, 3, 3, 8, noise=0.0)
    cfg = TrainConfig(epochs=60, hidden_dim=None, head_mode="text_cosine",
                      lr=5e-3, batch_size=16, seed=0)
    _, report = leave_one_domain_out(ds, table, cfg, "d2")
    assert report.held_out_accuracy == 1.0


# --- ensembles ----------------------------------------------------------------------

def test_duplicate_model_ensemble_matches_single():
    ds, table = make_samples(10, 2, 2, 6)
    model, _ = train(ds.samples, table, TrainConfig(epochs=5, hidden_dim=4, seed=0))
    single = evaluate_ensemble([model], ds.samples, table)
    double = evaluate_ensemble([model, model], ds.samples, table)
    assert single.held_out_accuracy == double.held_out_accuracy
    assert single.per_domain_accuracy == double.per_domain_accuracy


def test_ensemble_follows_more_confident_member():
    table = TeacherTable(dim=2, classes=("a", "b"), domains=("d0",),
                         generic=np.eye(2), anchors=normalize(np.ones((1, 2, 2))),
                         teacher_id="t")
    m1 = init_student(2, None, 2, 2, seed=0)
    m2 = init_student(2, None, 2, 2, seed=0)
    for m in (m1, m2):
        m.params["proj.weight"][...] = 0.0
        m.params["clf.weight"][...] = 0.0
    m1.params["clf.bias"][...] = [4.0, 0.0]    # confident class a
    m2.params["clf.bias"][...] = [0.0, 2.0]    # mildly confident class b
    samples = [LabeledSample(id="s", feature=np.zeros(2), teacher_emb=np.array([1.0, 0]),
                             label=0, domain=0)]
    report = evaluate_ensemble([m1, m2], samples, table)
    assert report.held_out_accuracy == 1.0  # follows the more confident member


def test_ensemble_class_count_mismatch():
    table = TeacherTable(dim=2, classes=("a", "b"), domains=("d0",),
                         generic=np.eye(2), anchors=normalize(np.ones((1, 2, 2))),
                         teacher_id="t")
    m1 = init_student(2, None, 2, 2, seed=0)
    m2 = init_student(2, None, 2, 3, seed=0)
    samples = [LabeledSample(id="s", feature=np.zeros(2), teacher_emb=np.array([1.0, 0]),
                             label=0, domain=0)]
    with pytest.raises(ConfigError):
        evaluate_ensemble([m1, m2], samples, table)


# --- sweeps -------------------------------------------------------------------------

def test_suite_row_structures():
    base = TrainConfig(epochs=2, seed=0)
    assert [n for n, _ in loss_suite(base)] == [
        "erm", "erm_hint", "erm_hint_ad", "erm_hint_rd", "erm_hint_ad_rd"]
    assert [n for n, _ in supervision_suite(base)] == [
        "ad_text", "ad_image", "rd_text", "rd_image"]
    assert [n for n, _ in template_suite(base)] == [
        "ad_single", "ad_ensemble", "rd_single", "rd_ensemble"]
    names = [n for n, _ in metric_suite(base)]
    assert names == ["ad_cosine", "ad_sup_contrastive", "ad_l1", "ad_l2",
                     "rd_kl_on_softmax", "rd_l1", "rd_mse"]


def test_ablation_sweep_rejects_empty_grid():
    ds, table = make_samples(8, 2, 2, 6)
    with pytest.raises(ConfigError):
        ablation_sweep(ds, table, [], seeds=[0])


def test_ablation_sweep_row_coverage():
    ds, table = make_samples(6, 2, 3, 6)
    base = TrainConfig(epochs=2, hidden_dim=4, seed=0)
    variants = loss_suite(base)[:2]
    rows = ablation_sweep(ds, table, variants, seeds=[0, 1], target_domains=["d0", "d2"])
    assert len(rows) == 2 * 2 * 2
    keys = {(r["variant"], r["target_domain"], r["seed"]) for r in rows}
    assert ("erm", "d0", 0) in keys and ("erm_hint", "d2", 1) in keys
    for r in rows:
        assert 0.0 <= r["accuracy"] <= 1.0


def test_ablation_sweep_defaults_to_every_domain():
    ds, table = make_samples(6, 2, 4, 6)
    base = TrainConfig(epochs=2, hidden_dim=4, seed=0)
    rows = ablation_sweep(ds, table, loss_suite(base)[:1], seeds=[0])
    assert [r["target_domain"] for r in rows] == ["d0", "d1", "d2", "d3"]
