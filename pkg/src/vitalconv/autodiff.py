"""Differentiable-array layer: reverse-mode gradients, Adam, finite-difference checks, checkpoints.

Tensors and reverse-mode differentiation come from torch; this module fixes the
contract the networks rely on (named gradient maps, an explicit-state Adam
update, a central-difference oracle, and a versioned checkpoint format) and the
few primitives whose numerics torch does not provide in the required form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
import torch
import torch.nn.functional as F

from . import blob

CHECKPOINT_MAGIC = b"VCCKPT"
CHECKPOINT_VERSION = 1
NORM_EPS = 1e-5


class GraphError(RuntimeError):
    """Loss cannot be differentiated (non-scalar, or not connected to any parameter)."""


# ---------------------------------------------------------------- primitives


def temporal_stats(z: torch.Tensor, eps: float = NORM_EPS):
    """Per-channel mean and population std over the last (temporal) axis."""
    mu = z.mean(dim=-1, keepdim=True)
    sigma = (z - mu).pow(2).mean(dim=-1, keepdim=True).add(1e-12).sqrt()
    return mu, sigma


def instance_norm(z: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """(z - mu) / (sigma + eps) per sample and channel, stats over time."""
    zc = z - z.mean(dim=-1, keepdim=True)
    sigma = zc.pow(2).mean(dim=-1, keepdim=True).add(1e-12).sqrt()
    return zc * (sigma + eps).reciprocal()


def adain(z: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Adaptive instance norm, ``(1 + gamma) * norm(z) + beta``.

    ``z`` is (B, C, L) or (C, L); ``gamma``/``beta`` are (B, C) or (C,).
    """
    if gamma.shape[-1] != z.shape[-2] or beta.shape[-1] != z.shape[-2]:
        raise ValueError(f"style length {gamma.shape[-1]}/{beta.shape[-1]} does not match {z.shape[-2]} channels")
    return (1.0 + gamma.unsqueeze(-1)) * instance_norm(z, eps) + beta.unsqueeze(-1)


def attention(q, k, v, bias: torch.Tensor | None = None, dropout: float = 0.0, training: bool = False):
    """Scaled dot-product attention; ``bias`` is added to the logits (masks use large negatives)."""
    logits = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if bias is not None:
        logits = logits + bias
    w = torch.softmax(logits, dim=-1)
    if dropout > 0:
        w = F.dropout(w, dropout, training)
    return w @ v


def upsample2(x: torch.Tensor, mode: str = "linear") -> torch.Tensor:
    if mode == "nearest":
        return F.interpolate(x, scale_factor=2, mode="nearest")
    return F.interpolate(x, scale_factor=2, mode="linear", align_corners=False)


# ---------------------------------------------------------------- gradients


def backward(loss: torch.Tensor, params: Mapping[str, torch.Tensor] | torch.nn.Module) -> dict[str, torch.Tensor]:
    """Exact reverse-mode gradients of a scalar ``loss`` w.r.t. named parameters.

    Parameters the loss does not reach get zero gradients; a loss that reaches
    none of them is an error.
    """
    if isinstance(params, torch.nn.Module):
        params = dict(params.named_parameters())
    if loss.dim() != 0 and loss.numel() != 1:
        raise GraphError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    if not loss.requires_grad:
        raise GraphError("loss is detached from the graph")
    names = [n for n, p in params.items() if p.requires_grad]
    grads = torch.autograd.grad(loss.reshape(()), [params[n] for n in names], allow_unused=True)
    if all(g is None for g in grads):
        raise GraphError("loss does not depend on any parameter")
    return {n: (torch.zeros_like(params[n]) if g is None else g) for n, g in zip(names, grads)}


def central_difference(f: Callable[[], torch.Tensor], x: torch.Tensor, index, eps: float = 1e-5) -> float:
    """d f / d x[index] by central differences, perturbing ``x`` in place."""
    with torch.no_grad():
        orig = x[index].item()
        x[index] = orig + eps
        hi = f().item()
        x[index] = orig - eps
        lo = f().item()
        x[index] = orig
    return (hi - lo) / (2 * eps)


@dataclass
class GradCheck:
    max_rel_error: float
    checked: int
    worst: tuple = ()

    def ok(self, tol: float = 1e-3) -> bool:
        return self.max_rel_error < tol


def gradcheck(
    f: Callable[[], torch.Tensor],
    tensors: Mapping[str, torch.Tensor],
    rng: np.random.Generator,
    per_tensor: int = 6,
    eps: float = 1e-5,
    floor: float = 1e-6,
) -> GradCheck:
    """Compare analytic gradients against central differences on sampled coordinates.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps
    near-zero gradients from dominating. Runs in whatever dtype the tensors have
    (use float64).
    """
    analytic = backward(f(), tensors)
    worst, worst_at, count = 0.0, (), 0
    for name, t in tensors.items():
        if name not in analytic:
            continue
        flat = np.arange(t.numel())
        picks = rng.choice(flat, size=min(per_tensor, t.numel()), replace=False)
        for p in picks:
            idx = np.unravel_index(int(p), tuple(t.shape))
            a = analytic[name][idx].item()
            n = central_difference(f, t, idx, eps)
            err = abs(a - n) / max(abs(a), abs(n), floor)
            count += 1
            if err > worst:
                worst, worst_at = err, (name, idx, a, n)
    return GradCheck(worst, count, worst_at)


# ---------------------------------------------------------------- optimizer


@dataclass
class Parameter:
    name: str
    tensor: torch.Tensor
    m: torch.Tensor = field(init=False)
    v: torch.Tensor = field(init=False)

    def __post_init__(self):
        self.m = torch.zeros_like(self.tensor)
        self.v = torch.zeros_like(self.tensor)


class Adam:
    """Adam with bias correction and explicit, inspectable state."""

    def __init__(self, params: Mapping[str, torch.Tensor] | torch.nn.Module, lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        if isinstance(params, torch.nn.Module):
            params = dict(params.named_parameters())
        self.params = {n: Parameter(n, p) for n, p in params.items() if p.requires_grad}
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0

    def step(self, grads: Mapping[str, torch.Tensor]) -> None:
        self.t += 1
        adam_step(self.params.values(), grads, self.lr, *self.betas, self.eps, self.t)

    def state_dict(self) -> dict[str, torch.Tensor]:
        out = {"__t__": torch.tensor(float(self.t), dtype=torch.float64)}
        for n, p in self.params.items():
            out[f"{n}.m"] = p.m
            out[f"{n}.v"] = p.v
        return out

    def load_state_dict(self, state: Mapping[str, torch.Tensor]) -> None:
        self.t = int(state["__t__"].item())
        for n, p in self.params.items():
            p.m.copy_(state[f"{n}.m"])
            p.v.copy_(state[f"{n}.v"])


def adam_step(params: Iterable[Parameter], grads: Mapping[str, torch.Tensor], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, t: int = 1) -> None:
    """In-place Adam update of every parameter that has a gradient in ``grads``."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    with torch.no_grad():
        for p in params:
            g = grads.get(p.name)
            if g is None:
                continue
            if g.shape != p.tensor.shape:
                raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.tensor.shape)} for {p.name}")
            p.m.mul_(beta1).add_(g, alpha=1 - beta1)
            p.v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            step = (p.m / bc1) / ((p.v / bc2).sqrt() + eps)
            p.tensor.sub_(lr * step)


def clip_grad_norm(grads: dict[str, torch.Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float(g.double().pow(2).sum()) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g.mul_(scale)
    return total


# ---------------------------------------------------------------- rng


def torch_generator(rng: np.random.Generator) -> torch.Generator:
    """A torch generator seeded from (and advancing) the numpy stream."""
    g = torch.Generator()
    g.manual_seed(int(rng.integers(0, 2**63 - 1)))
    return g


def reseed_torch(rng: np.random.Generator) -> None:
    """Seed torch's default generator (weight init, dropout) from the numpy stream."""
    torch.manual_seed(int(rng.integers(0, 2**63 - 1)))


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, tensors: Mapping[str, torch.Tensor], meta: dict | None = None) -> None:
    arrays = {n: t.detach().cpu().numpy() for n, t in tensors.items()}
    blob.write_blob(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, meta or {}, arrays)


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    meta, arrays = blob.read_blob(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    return {n: torch.from_numpy(np.array(a)) for n, a in arrays.items()}, meta
