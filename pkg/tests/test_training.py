import csv

import numpy as np
import pytest

from mdcs import tensor as T
from mdcs.network import build_model
from mdcs.tensor import Tensor
from mdcs.training import (
    Adam,
    AdamState,
    EpochRecord,
    PlateauScheduler,
    SplitData,
    TrainingConfig,
    TrainingDiverged,
    adam_step,
    metrics_header,
    plateau_schedule,
    select_best,
    train,
    write_metrics_csv,
)

CFG = TrainingConfig()


class Linear:
    """Logistic-regression stand-in satisfying the model protocol."""

    def __init__(self, n_features):
        self.w = Tensor(np.zeros((2, n_features)), requires_grad=True, name="w")
        self.b = Tensor(np.zeros(2), requires_grad=True, name="b")
        self.gain = Tensor(np.array([1.0]), requires_grad=True, name="stitch.gain")

    def forward(self, x):
        return T.scale(T.dense(Tensor(x), self.w, self.b), self.gain)

    def parameters(self):
        return {"w": self.w, "b": self.b, "stitch.gain": self.gain}

    def is_stitch_param(self, name):
        return name.startswith("stitch")


def separable_split(rng, n, d=4):
    x = rng.standard_normal((n, d))
    labels = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(np.int64)
    x[:, 0] += np.where(labels == 1, 1.0, -1.0)  # margin
    return SplitData((x,), labels, np.arange(n))


# --- Adam ---------------------------------------------------------------------


def test_adam_zero_gradient_is_noop():
    p = np.array([1.0, -2.0, 3.0])
    before = p.copy()
    state = AdamState(np.zeros(3), np.zeros(3))
    for _ in range(3):
        adam_step(p, np.zeros(3), state, 1e-3, CFG)
    assert p.tobytes() == before.tobytes()


def test_adam_first_step_has_size_lr():
    rng = np.random.default_rng(0)
    for g in rng.choice([-1, 1], 10) * 10 ** rng.uniform(-1, 3, 10):
        p = np.zeros(1)
        adam_step(p, np.array([g]), AdamState(np.zeros(1), np.zeros(1)), 2e-4, CFG)
        # by hand at t=1: m_hat = g, v_hat = g^2, step = lr * |g| / (|g| + eps)
        assert abs(abs(p[0]) / 2e-4 - 1.0) <= 1e-6
        assert np.sign(p[0]) == -np.sign(g)


def test_adam_matches_reference_recurrence():
    rng = np.random.default_rng(1)
    grads = rng.standard_normal((5, 3))
    p = np.zeros(3)
    state = AdamState(np.zeros(3), np.zeros(3))
    m = v = np.zeros(3)
    ref = np.zeros(3)
    for t, g in enumerate(grads, start=1):
        adam_step(p, g, state, 0.01, CFG)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g**2
        ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p, ref, rtol=1e-12)


def test_adam_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        adam_step(np.zeros(2), np.array([1.0, np.nan]), AdamState(np.zeros(2), np.zeros(2)), 1e-3, CFG)


def test_two_learning_rate_groups():
    model = Linear(3)
    params = model.parameters()
    for p in params.values():
        p.grad = np.ones_like(p.data)
    opt = Adam(params, model.is_stitch_param, CFG)
    opt.step()
    np.testing.assert_allclose(model.w.data, -2e-4, rtol=1e-6)
    np.testing.assert_allclose(model.gain.data, 1.0 - 1e-3, rtol=1e-9)
    opt.scale_lr(0.2)
    assert opt.base_lr == pytest.approx(4e-5) and opt.stitch_lr == pytest.approx(2e-4)


# --- plateau ------------------------------------------------------------------------


def test_plateau_examples():
    assert plateau_schedule([1.0, 0.9, 0.92, 0.93, 0.95], 2e-4) == pytest.approx(4e-5)
    assert plateau_schedule([1.0, 1.1, 0.8, 1.2], 2e-4) == 2e-4
    assert plateau_schedule(list(np.linspace(1.0, 0.1, 20)), 2e-4) == 2e-4


def test_plateau_equal_loss_is_not_improvement():
    assert plateau_schedule([1.0, 1.0, 1.0, 1.0], 1.0) == pytest.approx(0.2)


def test_plateau_counter_resets_after_decay():
    s = PlateauScheduler()
    decays = [s.update(x) for x in [1.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 0.5]]
    assert decays == [False, False, False, True, False, False, True, False]


def test_plateau_rejects_empty():
    with pytest.raises(ValueError):
        plateau_schedule([], 1.0)


# --- checkpoint selection -----------------------------------------------------


def test_select_best():
    assert select_best([0.8, 0.95, 0.95]) == 2
    assert select_best([0.5]) == 1
    assert select_best([0.9, 0.1, 0.2]) == 1


# --- loop -----------------------------------------------------------------------


def test_toy_task_learns_to_perfect_accuracy():
    rng = np.random.default_rng(2)
    tr, va = separable_split(rng, 256), separable_split(rng, 64)
    config = TrainingConfig(base_lr=0.05, stitch_lr=0.05, max_epochs=5)
    result = train(Linear(4), tr, va, config)
    assert max(r.val_acc for r in result.records) == 1.0
    assert result.best_val_acc == 1.0


def test_training_is_deterministic():
    rng = np.random.default_rng(3)
    tr, va = separable_split(rng, 100), separable_split(rng, 40)
    config = TrainingConfig(base_lr=0.01, max_epochs=3)
    a = train(Linear(4), tr, va, config).records
    b = train(Linear(4), tr, va, config).records
    assert a == b


def test_model_is_left_at_best_epoch():
    rng = np.random.default_rng(4)
    tr, va = separable_split(rng, 64), separable_split(rng, 32)
    model = Linear(4)
    result = train(model, tr, va, TrainingConfig(base_lr=0.05, max_epochs=4))
    for name, p in model.parameters().items():
        assert p.data.tobytes() == result.best_state[name].tobytes()


def test_zero_gradient_step_leaves_parameters_unchanged():
    model = build_model("all", 16)
    before = {n: p.data.copy() for n, p in model.parameters().items()}
    for p in model.parameters().values():
        p.grad = np.zeros_like(p.data)
    Adam(model.parameters(), model.is_stitch_param, CFG).step()
    for n, p in model.parameters().items():
        assert p.data.tobytes() == before[n].tobytes()


def test_full_model_loss_decreases_on_fixed_batch():
    rng = np.random.default_rng(5)
    model = build_model("all", 16)
    x_r, x_d = rng.standard_normal((2, 32, 3, 16, 16))
    labels = np.arange(32) % 2
    x_d[labels == 1] += 0.5
    opt = Adam(model.parameters(), model.is_stitch_param, TrainingConfig(base_lr=1e-3))
    losses = []
    for _ in range(10):
        model.zero_grad()
        with T.Tape() as tape:
            loss = T.softmax_cross_entropy(model(x_r, x_d), labels)
        tape.backward(loss)
        opt.step()
        losses.append(loss.item())
    assert losses[-1] < losses[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_last_good_state():
    rng = np.random.default_rng(6)
    tr, va = separable_split(rng, 64), separable_split(rng, 16)
    tr.inputs[0][5, 0] = np.inf
    model = Linear(4)
    with pytest.raises(TrainingDiverged) as info:
        train(model, tr, va, TrainingConfig(max_epochs=2))
    assert info.value.checkpoint is not None
    assert all(np.all(np.isfinite(p.data)) for p in model.parameters().values())


def test_empty_splits_rejected():
    rng = np.random.default_rng(7)
    tr = separable_split(rng, 8)
    empty = SplitData((np.zeros((0, 4)),), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    with pytest.raises(ValueError):
        train(Linear(4), tr, empty)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(base_lr=0.0)
    with pytest.raises(ValueError):
        TrainingConfig(batch_size=0)


# --- metrics log -------------------------------------------------------------------


def test_metrics_csv_layout(tmp_path):
    header = metrics_header()
    assert header[:6] == ["epoch", "train_loss", "val_loss", "val_acc", "base_lr", "stitch_lr"]
    assert header[6:10] == ["alpha_rr_1", "alpha_rd_1", "alpha_dr_1", "alpha_dd_1"]
    assert len(header) == 22
    records = [EpochRecord(1, 0.7, 0.6, 0.5, 2e-4, 1e-3, [(0.9, 0.1, 0.1, 0.9)])]
    path = tmp_path / "m.csv"
    write_metrics_csv(path, records)
    rows = list(csv.reader(open(path)))
    assert rows[0] == header
    assert rows[1][6:10] == ["0.9", "0.1", "0.1", "0.9"]
    assert rows[1][10:] == [""] * 12
    assert float(rows[1][1]) == 0.7
