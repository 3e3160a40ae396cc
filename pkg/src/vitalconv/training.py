"""Training loops for the approximation model (multi- and uni-directional) and the
two refinement stages, sharing one validation clock, plateau scheduler and early stop.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .approx import ApproxConfig, ApproxNet, apx_loss
from .autodiff import Adam, backward, clip_grad_norm, load_checkpoint, reseed_torch, save_checkpoint
from .refine import SOURCES, RefBatch, RefineConfig, RefineNet, WCLConfig, linearize_pi, ref_loss
from .synth import DIRECTIONS, Dataset, Record, sample_direction_batch

log = logging.getLogger(__name__)

STAGES = ("apx", "uni", "ref-pretrain", "ref-finetune")
KIND_NAMES = ("ECG", "PPG", "ABP")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    stage: str = "apx"
    batch_size: int = 128
    lr: float = 1e-3
    scheduler_patience: int = 3
    early_stop_patience: int = 5
    max_steps: int = 5000
    eval_every: int = 50
    seed: int = 0
    lr_factor: float = 0.5
    min_lr: float = 1e-6
    clip_norm: float = 1.0
    val_samples: int = 384
    dtype: str = "float32"
    use_wcl: bool = True
    use_pi: bool = True
    require_pretrain: bool = True

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.scheduler_patience <= 0 or self.early_stop_patience <= 0:
            raise ValueError("patience values must be positive")
        if self.max_steps <= 0 or self.eval_every <= 0 or self.batch_size < 2:
            raise ValueError("max_steps, eval_every must be positive and batch_size >= 2")
        if not self.lr > 0 or not 0 < self.lr_factor < 1 or not 0 < self.min_lr <= self.lr:
            raise ValueError("need lr > 0, 0 < lr_factor < 1 and 0 < min_lr <= lr")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    def replace(self, **kw) -> "RunConfig":
        return RunConfig(**{**asdict(self), **kw})


# ---------------------------------------------------------------- schedule control


class PlateauController:
    """Plateau LR halving plus early stopping, driven by validation losses.

    Both patiences count consecutive non-improving validations since the last
    best; the LR is cut every ``scheduler_patience`` stalls and training stops
    once ``early_stop_patience`` stalls accumulate.
    """

    def __init__(self, lr: float, scheduler_patience: int, early_stop_patience: int,
                 factor: float = 0.5, min_lr: float = 1e-6):
        self.lr = lr
        self.sp = scheduler_patience
        self.ep = early_stop_patience
        self.factor = factor
        self.min_lr = min_lr
        self.best = math.inf
        self.stalls = 0
        self._since_cut = 0

    def update(self, val: float) -> tuple[bool, bool]:
        """Returns (improved, stop)."""
        if val < self.best:
            self.best, self.stalls, self._since_cut = val, 0, 0
            return True, False
        self.stalls += 1
        self._since_cut += 1
        if self._since_cut >= self.sp:
            self.lr = max(self.min_lr, self.lr * self.factor)
            self._since_cut = 0
        return False, self.stalls >= self.ep


@dataclass
class HistoryRow:
    step: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainHistory:
    rows: list[HistoryRow] = field(default_factory=list)
    best_step: int = -1
    best_val: float = math.inf
    stop_reason: str = ""
    extra: dict = field(default_factory=dict)

    COLUMNS = ("step", "train_loss", "val_loss", "lr")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r.step, repr(r.train_loss), repr(r.val_loss), repr(r.lr)])

    @classmethod
    def from_csv(cls, path) -> "TrainHistory":
        with open(path, newline="") as fh:
            rows = [HistoryRow(int(r["step"]), float(r["train_loss"]), float(r["val_loss"]), float(r["lr"]))
                    for r in csv.DictReader(fh)]
        h = cls(rows)
        if rows:
            best = min(rows, key=lambda r: r.val_loss)
            h.best_step, h.best_val = best.step, best.val_loss
        return h

    def summary(self) -> dict:
        return {"best_step": self.best_step, "best_val": self.best_val, "stop_reason": self.stop_reason,
                "evaluations": len(self.rows), **self.extra}


@dataclass
class TrainResult:
    model: torch.nn.Module
    history: TrainHistory
    meta: dict

    def save(self, run_dir, name: str) -> Path:
        """Write ``<name>.ckpt``, ``<name>_history.csv`` and ``<name>_summary.json`` into ``run_dir``."""
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        ckpt = run_dir / f"{name}.ckpt"
        save_checkpoint(ckpt, self.model.state_dict(), self.meta)
        self.history.to_csv(run_dir / f"{name}_history.csv")
        summary = {**self.history.summary(), "seed": self.meta["run"]["seed"]}
        (run_dir / f"{name}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        return ckpt


def _run_loop(model, cfg: RunConfig, rng: np.random.Generator, step_loss, val_loss) -> TrainHistory:
    """Shared optimizer loop: Adam, grad clipping, eval cadence, plateau, early stop, best restore."""
    # dropout draws from torch's global stream; pin it to the run seed regardless of
    # how much randomness model construction or checkpoint loading consumed
    reseed_torch(rng)
    opt = Adam(model, lr=cfg.lr)
    ctl = PlateauController(cfg.lr, cfg.scheduler_patience, cfg.early_stop_patience, cfg.lr_factor, cfg.min_lr)
    hist = TrainHistory()
    best_state = copy.deepcopy(model.state_dict())
    running: list[float] = []
    for step in range(1, cfg.max_steps + 1):
        model.train()
        loss = step_loss(rng)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"non-finite training loss {value} at step {step} (lr {opt.lr:g}); "
                                "lower the learning rate or check the inputs")
        grads = backward(loss, model)
        clip_grad_norm(grads, cfg.clip_norm)
        opt.step(grads)
        running.append(value)
        if step % cfg.eval_every and step != cfg.max_steps:
            continue
        model.eval()
        with torch.no_grad():
            v = float(val_loss())
        if not math.isfinite(v):
            raise TrainingError(f"non-finite validation loss at step {step}")
        hist.rows.append(HistoryRow(step, float(np.mean(running)), v, opt.lr))
        running = []
        improved, stop = ctl.update(v)
        if improved:
            hist.best_step, hist.best_val = step, v
            best_state = copy.deepcopy(model.state_dict())
        log.info("step %d train %.6g val %.6g lr %.3g", step, hist.rows[-1].train_loss, v, opt.lr)
        opt.lr = ctl.lr
        if stop:
            hist.stop_reason = "early-stop"
            break
    else:
        hist.stop_reason = "max-steps"
    model.load_state_dict(best_state)
    model.eval()
    return hist


# ---------------------------------------------------------------- approximation


def _tensor(a, dtype):
    return torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)


def _fixed_val_batch(inputs, seed: int, n: int, direction=None):
    rng = np.random.default_rng([seed, 7])
    return sample_direction_batch(inputs, np.arange(len(inputs)), n, rng, direction)


def _batched_mse(model, batch, dtype, chunk: int = 64) -> float:
    total = 0.0
    for a in range(0, len(batch.x), chunk):
        x = _tensor(batch.x[a:a + chunk], dtype)
        d = _tensor(batch.d[a:a + chunk], dtype)
        y = _tensor(batch.y[a:a + chunk], dtype)
        total += float(apx_loss(model(x, d), y)) * len(x)
    return total / len(batch.x)


def parse_direction(direction) -> tuple[int, int]:
    """``"ECG:ABP"`` or ``(0, 2)`` -> (source index, target index)."""
    if isinstance(direction, str):
        parts = direction.upper().replace("->", ":").split(":")
        if len(parts) != 2 or any(p not in KIND_NAMES for p in parts):
            raise ValueError(f"direction must look like ECG:ABP, got {direction!r}")
        direction = (KIND_NAMES.index(parts[0]), KIND_NAMES.index(parts[1]))
    direction = tuple(KIND_NAMES.index(v.upper()) if isinstance(v, str) and v.upper() in KIND_NAMES else v
                      for v in direction)
    i, j = (int(v) for v in direction)
    if (i, j) not in DIRECTIONS:
        raise ValueError(f"invalid direction {KIND_NAMES[i] if 0 <= i < 3 else i}->"
                         f"{KIND_NAMES[j] if 0 <= j < 3 else j}; source and target must differ")
    return i, j


def train_apx(cfg: RunConfig, dataset: Dataset, model_cfg: ApproxConfig | None = None,
              direction=None) -> TrainResult:
    """Multi-directional training (or uni-directional when ``direction`` is given)."""
    model_cfg = model_cfg or ApproxConfig.desk()
    model_cfg.check_length(dataset.length)
    if direction is not None:
        direction = parse_direction(direction)
    train = dataset.model_inputs(dataset.split("apx-train"))
    val = dataset.model_inputs(dataset.split("apx-val"))
    dt = cfg.torch_dtype
    rng = np.random.default_rng(cfg.seed)
    reseed_torch(rng)
    model = ApproxNet(model_cfg).to(dt)
    ids = np.arange(len(train))
    vb = _fixed_val_batch(val, cfg.seed, cfg.val_samples, direction)

    def step_loss(r):
        b = sample_direction_batch(train, ids, cfg.batch_size, r, direction)
        return apx_loss(model(_tensor(b.x, dt), _tensor(b.d, dt)), _tensor(b.y, dt))

    hist = _run_loop(model, cfg, rng, step_loss, lambda: _batched_mse(model, vb, dt))
    meta = {"kind": "approx", "stage": "uni" if direction else "apx", "model": model_cfg.to_dict(),
            "run": asdict(cfg), "dataset": dataset.manifest.dataset_id, "best_val": hist.best_val,
            "best_step": hist.best_step, "direction": list(direction) if direction else None}
    return TrainResult(model, hist, meta)


def train_uni(cfg: RunConfig, dataset: Dataset, direction, model_cfg: ApproxConfig | None = None) -> TrainResult:
    """Same architecture trained on a single (source -> target) pair."""
    return train_apx(cfg.replace(stage="uni"), dataset, model_cfg, parse_direction(direction))


# ---------------------------------------------------------------- refinement


class RefData:
    """Stacked refinement inputs for a list of records."""

    def __init__(self, dataset: Dataset, records: list[Record], use_pi: bool):
        if not records:
            raise TrainingError("refinement split is empty")
        x = dataset.model_inputs(records)
        self.x = {"ECG": x[:, 0:1], "PPG": x[:, 1:2]}
        b = dataset.manifest.bounds
        self.sbp = np.array([r.sbp for r in records])
        self.dbp = np.array([r.dbp for r in records])
        self.sbp_norm = b.normalize(self.sbp)
        self.dbp_norm = b.normalize(self.dbp)
        self.use_pi = use_pi and dataset.manifest.pi_available
        profs = [dataset.profiles[r.patient_id] for r in records]
        self.texts = [linearize_pi(p) for p in profs]
        self.ages = np.array([p.age for p in profs], dtype=np.float64)
        self.sexes = np.array([p.sex for p in profs])

    def __len__(self):
        return len(self.sbp)

    def batch(self, rows, dtype) -> RefBatch:
        return RefBatch(
            x={k: _tensor(v[rows], dtype) for k, v in self.x.items()},
            sbp_norm=_tensor(self.sbp_norm[rows], dtype),
            dbp_norm=_tensor(self.dbp_norm[rows], dtype),
            sbp_mmHg=self.sbp[rows],
            dbp_mmHg=self.dbp[rows],
            texts=[self.texts[i] for i in rows] if self.use_pi else None,
            ages=self.ages[rows] if self.use_pi else None,
            sexes=self.sexes[rows] if self.use_pi else None,
        )


def predict_bp_mmHg(model: RefineNet, data: RefData, kind: str, bounds, dtype=torch.float32,
                    chunk: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """(SBP, DBP) in mmHg for every row of ``data`` from the single ``kind`` waveform (+ PI)."""
    model.eval()
    out_s, out_d = [], []
    with torch.no_grad():
        for a in range(0, len(data), chunk):
            rows = np.arange(a, min(a + chunk, len(data)))
            texts = [data.texts[i] for i in rows] if data.use_pi else None
            s, d, _, _ = model(_tensor(data.x[kind][rows], dtype), kind, texts)
            out_s.append(s.double().numpy())
            out_d.append(d.double().numpy())
    return bounds.denormalize(np.concatenate(out_s)), bounds.denormalize(np.concatenate(out_d))


def train_ref(cfg: RunConfig, dataset: Dataset, init: RefineNet | str | Path | None = None,
              model_cfg: RefineConfig | None = None, wcl_cfg: WCLConfig | None = None) -> TrainResult:
    """Refinement training.

    ``ref-pretrain``: contrastive-only objective on the approximation train/val
    segments. ``ref-finetune``: MAE + contrastive objective on the finetune
    splits, initialized from ``init`` (a pretrained model or checkpoint path).
    """
    if cfg.stage not in ("ref-pretrain", "ref-finetune"):
        raise TrainingError(f"train_ref needs stage ref-pretrain or ref-finetune, got {cfg.stage!r}")
    wcl_cfg = wcl_cfg or WCLConfig()
    pretrain = cfg.stage == "ref-pretrain"
    if pretrain and not cfg.use_wcl:
        raise TrainingError("contrastive pretraining requested with use_wcl = false")
    prefix = "ref-pretrain" if pretrain else "ref-finetune"
    train = RefData(dataset, dataset.split(f"{prefix}-train"), cfg.use_pi)
    val = RefData(dataset, dataset.split(f"{prefix}-val"), cfg.use_pi)
    dt = cfg.torch_dtype
    rng = np.random.default_rng(cfg.seed)
    reseed_torch(rng)

    if init is None:
        if not pretrain and cfg.require_pretrain:
            raise TrainingError("finetuning requires a pretrain checkpoint (set require_pretrain = false to train from scratch)")
        model = RefineNet(model_cfg or RefineConfig.desk(), dataset.length)
    elif isinstance(init, RefineNet):
        model = copy.deepcopy(init)
    else:
        model = load_refine(init)
    if model.length != dataset.length:
        raise TrainingError(f"refinement model expects length {model.length}, dataset has {dataset.length}")
    model = model.to(dt)
    use_mae = not pretrain

    def step_loss(r):
        rows = r.choice(len(train), size=min(cfg.batch_size, len(train)), replace=False)
        loss, _ = ref_loss(model, train.batch(rows, dt), wcl_cfg, use_wcl=cfg.use_wcl, use_mae=use_mae)
        return loss

    def val_loss():
        # a full-split objective: contrastive terms over the whole split, MAE averaged
        loss, _ = ref_loss(model, val.batch(np.arange(len(val)), dt), wcl_cfg, use_wcl=cfg.use_wcl, use_mae=use_mae)
        return loss

    hist = _run_loop(model, cfg, rng, step_loss, val_loss)
    extra = {}
    if not pretrain:
        for kind in SOURCES:
            s, d = predict_bp_mmHg(model, val, kind, dataset.manifest.bounds, dt)
            extra[f"val_mae_sbp_{kind}"] = float(np.abs(s - val.sbp).mean())
            extra[f"val_mae_dbp_{kind}"] = float(np.abs(d - val.dbp).mean())
    hist.extra = extra
    meta = {"kind": "refine", "stage": cfg.stage, "model": model.cfg.to_dict(), "length": model.length,
            "run": asdict(cfg), "wcl": asdict(wcl_cfg), "dataset": dataset.manifest.dataset_id,
            "use_pi": train.use_pi, "best_val": hist.best_val, "best_step": hist.best_step}
    return TrainResult(model, hist, meta)


# ---------------------------------------------------------------- checkpoint loading


def load_approx(path) -> ApproxNet:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "approx":
        raise TrainingError(f"{path} is not an approximation checkpoint")
    model = ApproxNet(ApproxConfig(**meta["model"]))
    model.to(next(iter(tensors.values())).dtype)
    model.load_state_dict(tensors)
    model.eval()
    return model


def load_refine(path) -> RefineNet:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "refine":
        raise TrainingError(f"{path} is not a refinement checkpoint")
    model = RefineNet(RefineConfig(**meta["model"]), int(meta["length"]))
    model.to(next(iter(tensors.values())).dtype)
    model.load_state_dict(tensors)
    model.eval()
    return model
