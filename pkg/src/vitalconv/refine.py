"""Refinement model: waveform and patient-info encoders, SBP/DBP regression on the
global-norm scale, and the weighted contrastive objective.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

PI_FIELDS = ("age", "sex", "height", "weight", "bmi")
SOURCES = ("ECG", "PPG")


# ---------------------------------------------------------------- patient info text


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, float) and math.isnan(v):
        return ""
    return f"{float(v):g}"


def linearize_pi(profile) -> str:
    """``"Age/Gender/Height/Weight/BMI"``; missing values become empty fields."""
    get = profile.get if isinstance(profile, dict) else lambda k: getattr(profile, k, None)
    return "/".join(_fmt(get(k)) for k in PI_FIELDS)


def parse_pi(text: str) -> dict:
    parts = text.split("/")
    if len(parts) != len(PI_FIELDS):
        raise ValueError(f"expected {len(PI_FIELDS) - 1} '/' delimiters in {text!r}")
    out = {}
    for k, v in zip(PI_FIELDS, parts):
        out[k] = (v or None) if k == "sex" else (float(v) if v else None)
    return out


PI_VOCAB = {c: i + 2 for i, c in enumerate("0123456789.-MFU")}  # 0 pad, 1 empty field
PI_MAX_CHARS = 8


def tokenize_pi(texts: list[str]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Delimiter-aware character tokens: (ids, field index, position-in-field), each (B, T)."""
    rows = []
    for text in texts:
        toks = []
        for f, part in enumerate(text.split("/")):
            part = part.strip().upper()[:PI_MAX_CHARS]
            if not part:
                toks.append((1, f, 0))
            for p, ch in enumerate(part):
                toks.append((PI_VOCAB.get(ch, PI_VOCAB["U"]), f, p))
        rows.append(toks)
    t = max(len(r) for r in rows)
    ids = torch.zeros(len(rows), t, dtype=torch.long)
    fld = torch.zeros_like(ids)
    pos = torch.zeros_like(ids)
    for b, r in enumerate(rows):
        for j, (i, f, p) in enumerate(r):
            ids[b, j], fld[b, j], pos[b, j] = i, f, p
    return ids, fld, pos


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class RefineConfig:
    hidden: int = 64
    layers: int = 15
    expansion: int = 5
    patch: int = 4
    embed: int = 512
    token_dim: int = 64
    trunk_patch: int = 64
    trunk_layers: int = 2
    head_hidden: int = 64
    dropout: float = 0.1

    @classmethod
    def desk(cls, **overrides) -> "RefineConfig":
        base = dict(hidden=32, layers=4, expansion=2)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class WCLConfig:
    lambda_mae: float = 0.001
    lambda1: float = 0.01
    lambda2: float = 0.01
    tau_bp: float = 4.0
    thr_bp: float = 0.0235
    tau_age: float = 4.0
    thr_age: float = 0.0235
    tau_gender: float = 1.0
    thr_gender: float = 1.0
    tau_w: float = 4.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"{k} must be positive")


# ---------------------------------------------------------------- encoders


class MixerLayer(nn.Module):
    """Patch-mixer layer on (B, N, H): an MLP across patches, then one across features."""

    def __init__(self, n_patches: int, hidden: int, expansion: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(hidden)
        self.temporal = nn.Sequential(
            nn.Linear(n_patches, n_patches * expansion), nn.GELU(), nn.Dropout(dropout),
            nn.Linear(n_patches * expansion, n_patches),
        )
        self.norm2 = nn.LayerNorm(hidden)
        self.feature = nn.Sequential(
            nn.Linear(hidden, hidden * expansion), nn.GELU(), nn.Dropout(dropout),
            nn.Linear(hidden * expansion, hidden),
        )

    def forward(self, x):
        x = x + self.temporal(self.norm1(x).transpose(1, 2)).transpose(1, 2)
        return x + self.feature(self.norm2(x))


class WaveformEncoder(nn.Module):
    """Shared patch-mixer backbone with a light projection head per source kind."""

    def __init__(self, cfg: RefineConfig, length: int):
        super().__init__()
        if length % cfg.patch:
            raise ValueError(f"length {length} not divisible by patch {cfg.patch}")
        self.patch = cfg.patch
        n = length // cfg.patch
        self.embed = nn.Linear(cfg.patch, cfg.hidden)
        self.pos = nn.Parameter(torch.zeros(1, n, cfg.hidden))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.layers = nn.ModuleList(MixerLayer(n, cfg.hidden, cfg.expansion, cfg.dropout) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(cfg.hidden)
        self.heads = nn.ModuleDict({k: nn.Linear(cfg.hidden, cfg.embed) for k in SOURCES})

    def forward(self, x: torch.Tensor, kind: str) -> torch.Tensor:
        if kind not in self.heads:
            raise ValueError(f"refinement sources are {SOURCES}, got {kind!r}")
        b = x.shape[0]
        h = self.embed(x.reshape(b, -1, self.patch)) + self.pos
        for layer in self.layers:
            h = layer(h)
        return self.heads[kind](self.norm(h).mean(dim=1))


class PIEncoder(nn.Module):
    """Tokens -> embeddings -> masked mean pool -> two-layer MLP (GELU, dropout) -> embed dim."""

    def __init__(self, cfg: RefineConfig):
        super().__init__()
        d = cfg.token_dim
        self.tok = nn.Embedding(len(PI_VOCAB) + 2, d, padding_idx=0)
        self.field = nn.Embedding(len(PI_FIELDS), d)
        self.pos = nn.Embedding(PI_MAX_CHARS, d)
        self.mlp = nn.Sequential(nn.Linear(d, cfg.embed), nn.GELU(), nn.Dropout(cfg.dropout), nn.Linear(cfg.embed, cfg.embed))

    def forward(self, ids, fld, pos):
        mask = (ids > 0).unsqueeze(-1).to(self.tok.weight.dtype)
        e = (self.tok(ids) + self.field(fld) + self.pos(pos)) * mask
        pooled = e.sum(dim=1) / mask.sum(dim=1).clamp_min(1.0)
        return self.mlp(pooled)


class BPRegressor(nn.Module):
    """Shared mixer trunk over the concatenated embeddings, then a two-layer head per source."""

    def __init__(self, cfg: RefineConfig):
        super().__init__()
        width = 2 * cfg.embed
        if width % cfg.trunk_patch:
            raise ValueError("2 * embed must be divisible by trunk_patch")
        self.tp = cfg.trunk_patch
        n = width // cfg.trunk_patch
        self.trunk = nn.ModuleList(MixerLayer(n, cfg.trunk_patch, 2, cfg.dropout) for _ in range(cfg.trunk_layers))
        self.norm = nn.LayerNorm(cfg.trunk_patch)
        self.heads = nn.ModuleDict({
            k: nn.Sequential(nn.Linear(width, cfg.head_hidden), nn.GELU(), nn.Linear(cfg.head_hidden, 2))
            for k in SOURCES
        })

    def forward(self, e_w, e_pi, kind: str):
        h = torch.cat([e_w, e_pi], dim=-1)
        b = h.shape[0]
        h = h.reshape(b, -1, self.tp)
        for layer in self.trunk:
            h = layer(h)
        out = self.heads[kind](self.norm(h).reshape(b, -1))
        return out[:, 0], out[:, 1]


class RefineNet(nn.Module):
    def __init__(self, cfg: RefineConfig | None = None, length: int = 512):
        super().__init__()
        cfg = cfg or RefineConfig()
        self.cfg = cfg
        self.length = length
        self.wave = WaveformEncoder(cfg, length)
        self.pi = PIEncoder(cfg)
        self.null_pi = nn.Parameter(torch.zeros(cfg.embed))
        self.regressor = BPRegressor(cfg)

    def encode_waveform(self, x: torch.Tensor, kind: str) -> torch.Tensor:
        return self.wave(x, kind)

    def encode_pi(self, texts: list[str] | None, batch: int) -> torch.Tensor:
        if texts is None:
            return self.null_pi.expand(batch, -1)
        return self.pi(*tokenize_pi(texts))

    def predict_bp(self, e_w, e_pi, kind: str):
        return self.regressor(e_w, e_pi, kind)

    def forward(self, x: torch.Tensor, kind: str, texts: list[str] | None = None):
        """(sbp_norm, dbp_norm, e_W, e_PI) for one source modality."""
        e_w = self.encode_waveform(x, kind)
        e_pi = self.encode_pi(texts, x.shape[0])
        sbp, dbp = self.predict_bp(e_w, e_pi, kind)
        return sbp, dbp, e_w, e_pi


# ---------------------------------------------------------------- weighted contrastive loss


def _threshold(s: np.ndarray, thr: float) -> np.ndarray:
    s = np.where(s < thr, 0.0, s)
    np.fill_diagonal(s, 0.0)
    return s


def wcl_weights(labels, kind: str, cfg: WCLConfig = WCLConfig()) -> np.ndarray:
    """Label-similarity weight matrix with entries below the threshold zeroed and no diagonal.

    ``bp``: labels is (B, 2) of SBP, DBP (mmHg). ``age``: (B,) years. ``gender``: (B,) codes.
    """
    if labels is None:
        raise ValueError(f"missing labels for {kind!r} weights")
    if kind == "bp":
        lab = np.asarray(labels, dtype=np.float64)
        if lab.ndim != 2 or lab.shape[1] != 2:
            raise ValueError("bp labels must be (B, 2) SBP/DBP")
        ds = np.abs(lab[:, None, 0] - lab[None, :, 0])
        dd = np.abs(lab[:, None, 1] - lab[None, :, 1])
        s = 0.5 * (np.exp(-ds / cfg.tau_bp) + np.exp(-dd / cfg.tau_bp))
        return _threshold(s, cfg.thr_bp)
    if kind == "age":
        a = np.asarray(labels, dtype=np.float64)
        if np.isnan(a).any():
            raise ValueError("missing age labels")
        s = np.exp(-np.abs(a[:, None] - a[None, :]) / cfg.tau_age)
        return _threshold(s, cfg.thr_age)
    if kind == "gender":
        g = np.asarray(labels)
        if any(v in (None, "") for v in g.tolist()):
            raise ValueError("missing gender labels")
        s = (g[:, None] == g[None, :]).astype(np.float64)
        return _threshold(s, cfg.thr_gender)
    raise ValueError(f"unknown weight kind {kind!r}")


def pi_weights(ages, sexes, cfg: WCLConfig = WCLConfig()) -> np.ndarray:
    """Patient-info similarity: age weights gated by identical gender."""
    return wcl_weights(ages, "age", cfg) * wcl_weights(sexes, "gender", cfg)


def wcl_loss(emb: torch.Tensor, weights, tau_w: float = 4.0) -> torch.Tensor:
    """Weighted InfoNCE over cosine similarities.

    For anchor i: ``-sum_j wbar_ij * log softmax_{k != i}(cos_ik / tau_w)_j`` with
    ``wbar`` the row-normalized weights; averaged over anchors that have a positive.
    """
    b = emb.shape[0]
    if b < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")
    w = torch.as_tensor(weights, dtype=emb.dtype)
    if w.shape != (b, b):
        raise ValueError(f"weights must be ({b}, {b})")
    z = F.normalize(emb, dim=-1)
    logits = z @ z.T / tau_w
    eye = torch.eye(b, dtype=torch.bool)
    logits = logits.masked_fill(eye, float("-inf"))
    logp = torch.log_softmax(logits, dim=-1).masked_fill(eye, 0.0)
    w = w.masked_fill(eye, 0.0)
    row = w.sum(dim=-1)
    has_pos = row > 0
    if not bool(has_pos.any()):
        return emb.sum() * 0.0
    wbar = w[has_pos] / row[has_pos, None]
    per_anchor = -(wbar * logp[has_pos]).sum(dim=-1)
    return per_anchor.mean()


@dataclass
class RefBatch:
    x: dict[str, torch.Tensor]  # source kind -> (B, 1, L)
    sbp_norm: torch.Tensor
    dbp_norm: torch.Tensor
    sbp_mmHg: np.ndarray
    dbp_mmHg: np.ndarray
    texts: list[str] | None = None
    ages: np.ndarray | None = None
    sexes: np.ndarray | None = None


def ref_loss(model: RefineNet, batch: RefBatch, cfg: WCLConfig = WCLConfig(), use_wcl: bool = True,
             use_mae: bool = True) -> tuple[torch.Tensor, dict[str, float]]:
    """MAE on normalized SBP/DBP summed over ECG and PPG branches plus weighted contrastive terms.

    ``use_mae=False`` gives the contrastive-only pretraining objective.
    """
    missing = [k for k in SOURCES if k not in batch.x]
    if missing:
        raise ValueError(f"refinement batch is missing the {missing} branch")
    n = batch.sbp_norm.shape[0]
    e_pi = model.encode_pi(batch.texts, n)
    use_wcl = use_wcl and n > 1  # a single segment has no pairs to contrast
    w_bp = wcl_weights(np.stack([batch.sbp_mmHg, batch.dbp_mmHg], axis=1), "bp", cfg) if use_wcl else None
    total = torch.zeros((), dtype=e_pi.dtype)
    parts: dict[str, float] = {}
    for kind in SOURCES:
        e_w = model.encode_waveform(batch.x[kind], kind)
        if use_mae:
            sbp, dbp = model.predict_bp(e_w, e_pi, kind)
            term = ((sbp - batch.sbp_norm).abs() + (dbp - batch.dbp_norm).abs()).mean()
            total = total + cfg.lambda_mae * term
            parts[f"mae_{kind}"] = term.item()
        if use_wcl:
            term = wcl_loss(e_w, w_bp, cfg.tau_w)
            total = total + cfg.lambda1 * term
            parts[f"wcl_{kind}"] = term.item()
    if use_wcl and batch.texts is not None:
        term = wcl_loss(e_pi, pi_weights(batch.ages, batch.sexes, cfg), cfg.tau_w)
        total = total + cfg.lambda2 * term
        parts["wcl_PI"] = term.item()
    return total, parts
