import math

import numpy as np
import pytest
import torch

from conftest import TINY_APX, TINY_REF
from vitalconv.synth import build_synthetic
from vitalconv.training import (
    PlateauController,
    RunConfig,
    TrainHistory,
    TrainingError,
    _run_loop,
    load_approx,
    load_refine,
    parse_direction,
    train_apx,
    train_ref,
    train_uni,
)

SMOKE = RunConfig(batch_size=8, max_steps=200, eval_every=20, val_samples=16, lr=3e-3)


@pytest.fixture(scope="module")
def tiny_ds():
    """8 records of L=128."""
    return build_synthetic(4, 2, seed=2, segment_len_s=1.024, min_patients=3)


@pytest.fixture(scope="module")
def ref_ds():
    return build_synthetic(12, 4, seed=2, segment_len_s=1.024, min_patients=3)


# ---------------------------------------------------------------- controller


def test_controller_halves_then_stops():
    ctl = PlateauController(1e-3, scheduler_patience=3, early_stop_patience=5)
    assert ctl.update(1.0) == (True, False)
    seen = []
    for _ in range(5):
        improved, stop = ctl.update(1.0)
        seen.append((ctl.lr, stop))
    assert [s for _, s in seen] == [False, False, False, False, True]
    assert seen[1][0] == 1e-3 and seen[2][0] == 5e-4


def test_controller_resets_on_improvement_and_respects_min_lr():
    ctl = PlateauController(1e-5, 1, 100, min_lr=4e-6)
    ctl.update(1.0)
    for _ in range(4):
        ctl.update(2.0)
    assert ctl.lr == 4e-6
    assert ctl.update(0.5) == (True, False) and ctl.stalls == 0


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(stage="bogus")
    with pytest.raises(ValueError):
        RunConfig(scheduler_patience=0)
    with pytest.raises(ValueError):
        RunConfig(max_steps=0)


# ---------------------------------------------------------------- approximation


def test_apx_smoke_loss_decreases(tiny_ds):
    res = train_apx(SMOKE, tiny_ds, TINY_APX)
    h = res.history
    assert h.rows[-1].train_loss < h.rows[0].train_loss
    assert h.best_val == min(r.val_loss for r in h.rows)
    assert all(r.lr > 0 for r in h.rows)
    assert all(b.lr <= a.lr for a, b in zip(h.rows, h.rows[1:]))


def test_apx_deterministic_float64(tiny_ds, tmp_path):
    cfg = SMOKE.replace(max_steps=40, dtype="float64")
    a = train_apx(cfg, tiny_ds, TINY_APX)
    b = train_apx(cfg, tiny_ds, TINY_APX)
    assert [(r.train_loss, r.val_loss) for r in a.history.rows] == [(r.train_loss, r.val_loss) for r in b.history.rows]
    a.save(tmp_path / "a", "apx")
    b.save(tmp_path / "b", "apx")
    for f in ("apx.ckpt", "apx_history.csv", "apx_summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    back = load_approx(tmp_path / "a" / "apx.ckpt")
    sd = a.model.state_dict()
    assert all(torch.equal(v, sd[k]) for k, v in back.state_dict().items())
    assert TrainHistory.from_csv(tmp_path / "a" / "apx_history.csv").best_val == a.history.best_val


def test_apx_nan_aborts(tiny_ds):
    with pytest.raises(TrainingError, match="non-finite"):
        train_apx(SMOKE.replace(lr=1e30, max_steps=20), tiny_ds, TINY_APX)


def test_early_stop_on_frozen_val():
    model = torch.nn.Linear(2, 1)
    x = torch.randn(4, 2)
    cfg = RunConfig(max_steps=1000, eval_every=1, batch_size=2)
    hist = _run_loop(model, cfg, np.random.default_rng(0), lambda r: model(x).pow(2).mean(), lambda: 1.0)
    assert hist.stop_reason == "early-stop"
    assert len(hist.rows) == 1 + cfg.early_stop_patience
    # lr halved after every scheduler_patience stalls
    assert hist.rows[-1].lr == pytest.approx(cfg.lr * 0.5)
    assert hist.best_step == 1


def test_uni_direction_restriction(tiny_ds):
    assert parse_direction("ECG:ABP") == (0, 2)
    assert parse_direction(("PPG", "ECG")) == (1, 0)
    with pytest.raises(ValueError):
        parse_direction("ECG:ECG")
    with pytest.raises(ValueError):
        parse_direction("ECG:EEG")
    res = train_uni(SMOKE.replace(max_steps=5, eval_every=5), tiny_ds, "PPG:ABP", TINY_APX)
    assert res.meta["direction"] == [1, 2] and res.meta["stage"] == "uni"


# ---------------------------------------------------------------- refinement


def test_finetune_requires_pretrain(ref_ds):
    with pytest.raises(TrainingError, match="pretrain"):
        train_ref(RunConfig(stage="ref-finetune", batch_size=8, max_steps=5), ref_ds, None, TINY_REF)
    with pytest.raises(TrainingError):
        train_ref(RunConfig(stage="apx"), ref_ds)


def test_pretrain_decreases_wcl_and_finetune_runs(ref_ds, tmp_path):
    pre_cfg = RunConfig(stage="ref-pretrain", batch_size=16, max_steps=60, eval_every=10, lr=1e-3, dtype="float64")
    pre = train_ref(pre_cfg, ref_ds, None, TINY_REF)
    h = pre.history
    assert h.best_val < h.rows[0].val_loss or h.rows[-1].train_loss < h.rows[0].train_loss
    pre.save(tmp_path, "ref_pretrain")
    ft_cfg = pre_cfg.replace(stage="ref-finetune", max_steps=20)
    ft = train_ref(ft_cfg, ref_ds, tmp_path / "ref_pretrain.ckpt")
    assert {"val_mae_sbp_ECG", "val_mae_dbp_PPG"} <= set(ft.history.extra)
    assert all(math.isfinite(v) for v in ft.history.extra.values())
    again = train_ref(ft_cfg, ref_ds, load_refine(tmp_path / "ref_pretrain.ckpt"))
    assert [r.val_loss for r in again.history.rows] == [r.val_loss for r in ft.history.rows]


def test_scratch_finetune_when_allowed(ref_ds):
    cfg = RunConfig(stage="ref-finetune", batch_size=8, max_steps=4, eval_every=2, require_pretrain=False)
    res = train_ref(cfg, ref_ds, None, TINY_REF)
    assert res.meta["stage"] == "ref-finetune" and len(res.history.rows) == 2
