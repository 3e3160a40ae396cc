"""Multi-directional approximation model: 1-D U-Net encoder, windowed-attention
bottleneck and a decoder whose normalizations are driven by a target-type style.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .autodiff import adain, attention, instance_norm, upsample2

N_TYPES = 3


@dataclass(frozen=True)
class ApproxConfig:
    filters: int = 64
    embed: int = 256
    window: int = 4
    heads: int = 32
    style_dim: int = 64
    patch: int = 4
    enc_blocks: int = 2
    dec_blocks: int = 2
    mlp_ratio: float = 2.0
    dropout: float = 0.0
    slope: float = 0.2  # LeakyReLU

    def __post_init__(self):
        if self.embed % self.heads:
            raise ValueError(f"embed channels {self.embed} not divisible by {self.heads} heads")
        if self.window % 2:
            raise ValueError("window size must be even (shifted windows move by window/2)")

    @property
    def downsample(self) -> int:
        return 4 * self.patch

    def check_length(self, length: int) -> None:
        if length % (self.downsample * self.window):
            raise ValueError(
                f"length {length} must be divisible by {self.downsample * self.window} "
                f"(x4 encoder downsampling, patch {self.patch}, window {self.window})"
            )

    @classmethod
    def desk(cls, **overrides) -> "ApproxConfig":
        """Small CPU configuration; heads kept at channels/8."""
        base = dict(filters=16, embed=64, heads=8, style_dim=64, enc_blocks=2, dec_blocks=2)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


def one_hot(target, n: int = N_TYPES) -> torch.Tensor:
    idx = torch.as_tensor(target, dtype=torch.long).reshape(-1)
    return F.one_hot(idx, n).to(torch.get_default_dtype())


def check_selector(d: torch.Tensor) -> None:
    if d.dim() != 2 or d.shape[1] != N_TYPES:
        raise ValueError(f"selector must be (B, {N_TYPES}), got {tuple(d.shape)}")
    ok = ((d == 0) | (d == 1)).all() and (d.sum(dim=1) == 1).all()
    if not ok:
        raise ValueError("selector rows must be one-hot")


class StyleSite(nn.Module):
    """Projection of the style vector to one AdaIN site's (gamma, beta); zero-initialized."""

    def __init__(self, style_dim: int, channels: int):
        super().__init__()
        self.proj = nn.Linear(style_dim, 2 * channels)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, s):
        gamma, beta = self.proj(s).chunk(2, dim=-1)
        return gamma, beta


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, slope: float):
        super().__init__()
        self.conv1 = nn.Conv1d(c_in, c_out, 3, padding=1, bias=False)
        self.conv2 = nn.Conv1d(c_out, c_out, 3, padding=1)
        self.skip = nn.Identity() if c_in == c_out else nn.Conv1d(c_in, c_out, 1)
        self.slope = slope

    def forward(self, x):
        h = self.conv1(F.leaky_relu(instance_norm(x), self.slope))
        h = self.conv2(F.leaky_relu(instance_norm(h), self.slope))
        return h + self.skip(x)


class AdaINResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, style_dim: int, slope: float):
        super().__init__()
        self.style1 = StyleSite(style_dim, c_in)
        self.style2 = StyleSite(style_dim, c_out)
        self.conv1 = nn.Conv1d(c_in, c_out, 3, padding=1, bias=False)
        self.conv2 = nn.Conv1d(c_out, c_out, 3, padding=1)
        self.skip = nn.Identity() if c_in == c_out else nn.Conv1d(c_in, c_out, 1)
        self.slope = slope

    def forward(self, x, s):
        h = self.conv1(F.leaky_relu(adain(x, *self.style1(s)), self.slope))
        h = self.conv2(F.leaky_relu(adain(h, *self.style2(s)), self.slope))
        return h + self.skip(x)


class Down(nn.Module):
    """Parallel max-pool and strided-conv paths, concatenated (channels double)."""

    def __init__(self, c: int):
        super().__init__()
        self.conv = nn.Conv1d(c, c, 2, stride=2)

    def forward(self, x):
        return torch.cat([F.max_pool1d(x, 2), self.conv(x)], dim=1)


class Up(nn.Module):
    """Interpolation x2 and transposed-conv paths, concatenated (channels double)."""

    def __init__(self, c: int):
        super().__init__()
        self.deconv = nn.ConvTranspose1d(c, c, 2, stride=2)

    def forward(self, x):
        return torch.cat([upsample2(x), self.deconv(x)], dim=1)


class WindowAttention(nn.Module):
    """Multi-head self-attention inside non-overlapping 1-D windows with relative position bias."""

    def __init__(self, dim: int, window: int, heads: int, dropout: float):
        super().__init__()
        self.window, self.heads = window, heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.rel_bias = nn.Parameter(torch.zeros(2 * window - 1, heads))
        nn.init.trunc_normal_(self.rel_bias, std=0.02)
        pos = torch.arange(window)
        self.register_buffer("rel_index", (pos[:, None] - pos[None, :] + window - 1), persistent=False)
        self.dropout = dropout

    def forward(self, x, mask=None):
        # x: (B*nW, w, C); mask: (nW, w, w) additive
        bw, w, c = x.shape
        qkv = self.qkv(x).reshape(bw, w, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        bias = self.rel_bias[self.rel_index].permute(2, 0, 1).unsqueeze(0)  # (1, h, w, w)
        if mask is not None:
            n_win = mask.shape[0]
            bias = (bias.unsqueeze(0) + mask[None, :, None]).reshape(1, n_win, self.heads, w, w)
            bias = bias.expand(bw // n_win, -1, -1, -1, -1).reshape(bw, self.heads, w, w)
        out = attention(qkv[0], qkv[1], qkv[2], bias, self.dropout, self.training)
        return self.proj(out.transpose(1, 2).reshape(bw, w, c))


def _shift_mask(n_tokens: int, window: int, shift: int, dtype) -> torch.Tensor:
    """Additive mask keeping attention within contiguous spans after a cyclic shift."""
    label = torch.zeros(n_tokens)
    label[n_tokens - window:n_tokens - shift] = 1
    label[n_tokens - shift:] = 2
    lw = label.reshape(-1, window)
    diff = lw[:, :, None] != lw[:, None, :]
    return torch.zeros(diff.shape, dtype=dtype).masked_fill(diff, -100.0)


class SwinBlock(nn.Module):
    """Windowed-attention transformer block on (B, N, C) tokens.

    With ``style_dim`` set, both normalizations are AdaIN over the token axis
    driven by the style vector; otherwise LayerNorm.
    """

    def __init__(self, dim, window, heads, shift, mlp_ratio, dropout, style_dim=None):
        super().__init__()
        self.window, self.shift = window, shift
        self.attn = WindowAttention(dim, window, heads, dropout)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Dropout(dropout), nn.Linear(hidden, dim))
        self.styled = style_dim is not None
        if self.styled:
            self.style1 = StyleSite(style_dim, dim)
            self.style2 = StyleSite(style_dim, dim)
        else:
            self.norm1 = nn.LayerNorm(dim)
            self.norm2 = nn.LayerNorm(dim)
        self.drop = nn.Dropout(dropout)

    def _norm(self, x, which, s):
        if self.styled:
            site = self.style1 if which == 1 else self.style2
            return adain(x.transpose(1, 2), *site(s)).transpose(1, 2)
        return (self.norm1 if which == 1 else self.norm2)(x)

    def forward(self, x, s=None):
        b, n, c = x.shape
        h = self._norm(x, 1, s)
        mask = None
        if self.shift:
            h = torch.roll(h, -self.shift, dims=1)
            mask = _shift_mask(n, self.window, self.shift, h.dtype)
        h = self.attn(h.reshape(b * n // self.window, self.window, c), mask).reshape(b, n, c)
        if self.shift:
            h = torch.roll(h, self.shift, dims=1)
        x = x + self.drop(h)
        return x + self.drop(self.mlp(self._norm(x, 2, s)))


class ApproxNet(nn.Module):
    """f_apx(x, d): normalized source waveform + target selector -> normalized target waveform."""

    def __init__(self, cfg: ApproxConfig | None = None):
        super().__init__()
        cfg = cfg or ApproxConfig()
        self.cfg = cfg
        f, e = cfg.filters, cfg.embed
        self.stem1 = nn.Conv1d(1, f, 3, padding=1, bias=False)
        self.stem2 = nn.Conv1d(f, f, 3, padding=1, bias=False)
        self.enc1 = nn.ModuleList([ResBlock(f, f, cfg.slope), Down(f), ResBlock(2 * f, 2 * f, cfg.slope)])
        self.enc2 = nn.ModuleList([ResBlock(2 * f, 2 * f, cfg.slope), Down(2 * f), ResBlock(4 * f, 4 * f, cfg.slope)])
        self.patch_embed = nn.Conv1d(4 * f, e, cfg.patch, stride=cfg.patch)
        self.embed_norm = nn.LayerNorm(e)
        half = cfg.window // 2
        self.swin_enc = nn.ModuleList(
            SwinBlock(e, cfg.window, cfg.heads, half * (k % 2), cfg.mlp_ratio, cfg.dropout) for k in range(cfg.enc_blocks)
        )
        self.swin_dec = nn.ModuleList(
            SwinBlock(e, cfg.window, cfg.heads, half * (k % 2), cfg.mlp_ratio, cfg.dropout, cfg.style_dim)
            for k in range(cfg.dec_blocks)
        )
        self.patch_expand = nn.Linear(e, cfg.patch * 4 * f)
        self.up1 = Up(4 * f)
        self.dec1 = AdaINResBlock(8 * f + 2 * f, 2 * f, cfg.style_dim, cfg.slope)
        self.up2 = Up(2 * f)
        self.dec2 = AdaINResBlock(4 * f + f, f, cfg.style_dim, cfg.slope)
        self.head = nn.Conv1d(f, 1, 1)
        self.style_fc = nn.Linear(N_TYPES, cfg.style_dim)

    def encode(self, x):
        a = self.cfg.slope
        h0 = F.leaky_relu(instance_norm(self.stem1(x)), a)
        h0 = F.leaky_relu(instance_norm(self.stem2(h0)), a)
        h1 = h0
        for m in self.enc1:
            h1 = m(h1)
        h2 = h1
        for m in self.enc2:
            h2 = m(h2)
        return h0, h1, h2

    def forward(self, x: torch.Tensor, d: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[1] != 1:
            raise ValueError(f"expected (B, 1, L) input, got {tuple(x.shape)}")
        self.cfg.check_length(x.shape[-1])
        check_selector(d)
        if d.shape[0] != x.shape[0]:
            raise ValueError(f"selector batch {d.shape[0]} != input batch {x.shape[0]}")
        s = self.style_fc(d)
        h0, h1, h = self.encode(x)

        z = self.embed_norm(self.patch_embed(h).transpose(1, 2))  # (B, N, E)
        for blk in self.swin_enc:
            z = blk(z)
        for blk in self.swin_dec:
            z = blk(z, s)
        b, n, _ = z.shape
        u = self.patch_expand(z).reshape(b, n * self.cfg.patch, -1).transpose(1, 2) + h

        u = self.dec1(torch.cat([self.up1(u), h1], dim=1), s)
        u = self.dec2(torch.cat([self.up2(u), h0], dim=1), s)
        return self.head(u)

    def style(self, d: torch.Tensor) -> list[tuple[torch.Tensor, torch.Tensor]]:
        """(gamma, beta) at every AdaIN site, in forward order."""
        check_selector(d)
        s = self.style_fc(d)
        return [site(s) for site in self.modules() if isinstance(site, StyleSite)]


def apx_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over time (and batch)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).pow(2).mean()
