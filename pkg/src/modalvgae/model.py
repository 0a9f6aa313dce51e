"""Residual variational graph autoencoder for joint modal identification.

Encoder: per-node spectral MLP, two residual mean-aggregation GraphSAGE
blocks (with a width-raising projection between them), attention pooling and
a Gaussian latent head.  Decoders: a node-level branch that broadcasts the
latent vector, fuses it with encoder features, refines through two more
residual graph blocks with a U-style skip from the early encoder features,
and maps to per-node mode shapes; and a graph-level branch that builds an
interaction context vector and predicts Normal-Inverse-Gamma parameters for
frequencies and damping ratios through two evidential heads.

A deterministic point-estimate GNN of the same input contract serves as the
comparison baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import GraphSample


@dataclass(frozen=True)
class ModelConfig:
    n_inputs: int = 514
    spectral_widths: tuple[int, ...] = (256, 128)  # last entry is D
    graph_width: int = 128  # d
    graph_width2: int = 256  # d2
    latent_width: int = 64  # d_z
    fusion_width: int = 256  # decoder width right after latent fusion
    decoder_width: int = 128  # width after the interposed reducing MLP
    head_widths: tuple[int, ...] = (128, 64)
    n_modes: int = 4
    dropout: float = 0.1
    eps: float = 1e-6

    def validate(self) -> None:
        widths = (self.n_inputs, *self.spectral_widths, self.graph_width, self.graph_width2,
                  self.latent_width, self.fusion_width, self.decoder_width, *self.head_widths,
                  self.n_modes)
        if any(w < 1 for w in widths):
            raise ValueError("all widths must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.graph_width2 <= self.graph_width:
            raise ValueError("projection must raise the width (d2 > d)")
        if self.spectral_widths[-1] != self.graph_width:
            raise ValueError("spectral encoder must end at the graph width")

    def to_dict(self) -> dict:
        return {
            "n_inputs": self.n_inputs,
            "spectral_widths": list(self.spectral_widths),
            "graph_width": self.graph_width,
            "graph_width2": self.graph_width2,
            "latent_width": self.latent_width,
            "fusion_width": self.fusion_width,
            "decoder_width": self.decoder_width,
            "head_widths": list(self.head_widths),
            "n_modes": self.n_modes,
            "dropout": self.dropout,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["spectral_widths"] = tuple(d["spectral_widths"])
        d["head_widths"] = tuple(d["head_widths"])
        return cls(**d)


class NIGTensors(NamedTuple):
    """Evidential head output: gamma free, nu > 0, alpha > 1, beta > 0."""

    gamma: torch.Tensor
    nu: torch.Tensor
    alpha: torch.Tensor
    beta: torch.Tensor


@dataclass
class ModelOutput:
    phi: torch.Tensor  # (N, M) predicted mode shapes
    nig_freq: NIGTensors  # each (M,), log-target space
    nig_zeta: NIGTensors
    mu: torch.Tensor  # (d_z,)
    logvar: torch.Tensor  # (d_z,)
    h_g: torch.Tensor  # (d2,)
    z: torch.Tensor  # (d_z,)
    attention: torch.Tensor  # (N,)


def seeded_dropout(x: torch.Tensor, p: float, active: bool,
                   generator: torch.Generator | None) -> torch.Tensor:
    """Inverted dropout with an explicit generator so passes are replayable."""
    if not active or p <= 0.0:
        return x
    keep = (torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) >= p)
    return x * keep.to(x.dtype) / (1.0 - p)


def mean_aggregate(h: torch.Tensor, edges: torch.Tensor) -> torch.Tensor:
    """Mean over each node's feature together with its neighbours'.

    ``edges`` holds both directions of every member, so aggregating incoming
    messages covers the full neighbourhood; isolated nodes reduce to their own
    feature (mean over a singleton set).
    """
    n = h.shape[0]
    if edges.numel() and int(edges.max()) >= n:
        raise IndexError("edge index out of range")
    agg = torch.zeros_like(h)
    deg = torch.zeros(n, dtype=h.dtype, device=h.device)
    if edges.numel():
        src, dst = edges[:, 0], edges[:, 1]
        agg.index_add_(0, dst, h[src])
        deg.index_add_(0, dst, torch.ones(src.shape[0], dtype=h.dtype, device=h.device))
    return (h + agg) / (1.0 + deg).unsqueeze(1)


class SageLayer(nn.Module):
    """sigma(W . mean({h_i} u {h_j})) with mean aggregation."""

    def __init__(self, width_in: int, width_out: int):
        super().__init__()
        self.lin = nn.Linear(width_in, width_out)

    def forward(self, h, edges):
        return F.gelu(self.lin(mean_aggregate(h, edges)))


class ResidualSageBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.layer = SageLayer(width, width)

    def forward(self, h, edges):
        out = self.layer(h, edges)
        if out.shape != h.shape:
            raise ValueError("residual block requires matching widths")
        return h + out


class AttentionPool(nn.Module):
    """Softmax-normalized linear scores; returns pooled vector and weights."""

    def __init__(self, width: int):
        super().__init__()
        self.query = nn.Linear(width, 1, bias=False)

    def forward(self, h):
        if h.shape[0] < 1:
            raise ValueError("cannot pool an empty graph")
        scores = self.query(h).squeeze(-1)
        weights = torch.softmax(scores, dim=0)
        return weights @ h, weights


class SpectralEncoder(nn.Module):
    def __init__(self, n_inputs: int, widths: tuple[int, ...]):
        super().__init__()
        dims = (n_inputs, *widths)
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x):
        for layer in self.layers:
            x = F.gelu(layer(x))
        return x


class EvidentialHead(nn.Module):
    """MLP producing (gamma, nu, alpha, beta) per mode with softplus guards."""

    def __init__(self, width_in: int, hidden: tuple[int, ...], n_modes: int, eps: float):
        super().__init__()
        dims = (width_in, *hidden)
        self.hidden = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.out = nn.Linear(dims[-1], 4 * n_modes)
        self.n_modes = n_modes
        self.eps = eps

    def forward(self, c):
        h = c
        for layer in self.hidden:
            h = F.gelu(layer(h))
        raw = self.out(h).reshape(4, self.n_modes)
        gamma = raw[0]
        nu = F.softplus(raw[1]) + self.eps
        alpha = F.softplus(raw[2]) + 1.0 + self.eps
        beta = F.softplus(raw[3]) + self.eps
        out = NIGTensors(gamma, nu, alpha, beta)
        if not all(torch.isfinite(t).all() for t in out):
            raise FloatingPointError("non-finite evidential head output")
        return out


class ModalVGAE(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        d, d2, dz = cfg.graph_width, cfg.graph_width2, cfg.latent_width

        self.spectral = SpectralEncoder(cfg.n_inputs, cfg.spectral_widths)
        self.block1 = ResidualSageBlock(d)
        self.project = nn.Linear(d, d2, bias=False)
        self.block2 = ResidualSageBlock(d2)
        self.pool = AttentionPool(d2)
        self.w_mu = nn.Linear(d2, dz)
        self.w_sigma = nn.Linear(d2, dz)
        # start with a tight latent so early sampled-z noise does not drown
        # the decoders; the KL term later pulls the posterior toward N(0, I)
        nn.init.constant_(self.w_sigma.bias, -3.0)

        self.w_z = nn.Linear(dz, d2, bias=False)
        self.fuse = nn.Linear(2 * d2, cfg.fusion_width)
        self.block3 = ResidualSageBlock(cfg.fusion_width)
        self.mid = nn.Linear(cfg.fusion_width, cfg.decoder_width)
        self.block4 = ResidualSageBlock(cfg.decoder_width)
        self.skip_fuse = nn.Linear(cfg.decoder_width + d, cfg.decoder_width)
        self.w_phi = nn.Linear(cfg.decoder_width, cfg.n_modes, bias=False)

        self.w_interact = nn.Linear(d2, dz, bias=False)
        context = d2 + 2 * dz
        self.head_freq = EvidentialHead(context, cfg.head_widths, cfg.n_modes, cfg.eps)
        self.head_zeta = EvidentialHead(context, cfg.head_widths, cfg.n_modes, cfg.eps)

    def encode(self, x, edges, dropout_active=False, generator=None):
        h0 = self.spectral(x)
        h0 = seeded_dropout(h0, self.cfg.dropout, dropout_active, generator)
        h1 = self.block1(h0, edges)
        h2 = self.block2(self.project(h1), edges)
        h_g, weights = self.pool(h2)
        return h1, h2, h_g, weights

    def latent(self, h_g):
        return self.w_mu(h_g), self.w_sigma(h_g)

    @staticmethod
    def reparameterize(mu, logvar, eps_noise):
        return mu + torch.exp(0.5 * logvar) * eps_noise

    def decode_nodes(self, h1, h2, z, edges, dropout_active=False, generator=None):
        zz = z.unsqueeze(0).expand(h2.shape[0], -1)  # broadcast latent to nodes
        fused = F.gelu(self.fuse(torch.cat([h2, self.w_z(zz)], dim=1)))
        fused = seeded_dropout(fused, self.cfg.dropout, dropout_active, generator)
        h3 = self.block3(fused, edges)
        h4 = self.block4(F.gelu(self.mid(h3)), edges)
        final = F.gelu(self.skip_fuse(torch.cat([h4, h1], dim=1)))
        final = seeded_dropout(final, self.cfg.dropout, dropout_active, generator)
        return self.w_phi(final)

    def context_vector(self, h_g, z):
        return torch.cat([h_g, z, self.w_interact(h_g) * z], dim=0)

    def forward(self, x, edges, mode: str = "mean", generator: torch.Generator | None = None,
                dropout_active: bool = False) -> ModelOutput:
        if mode not in ("mean", "sample"):
            raise ValueError(f"unknown latent mode {mode!r}")
        h1, h2, h_g, weights = self.encode(x, edges, dropout_active, generator)
        mu, logvar = self.latent(h_g)
        if mode == "sample":
            eps_noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
            z = self.reparameterize(mu, logvar, eps_noise)
        else:
            z = mu
        phi = self.decode_nodes(h1, h2, z, edges, dropout_active, generator)
        c = self.context_vector(h_g, z)
        return ModelOutput(
            phi=phi,
            nig_freq=self.head_freq(c),
            nig_zeta=self.head_zeta(c),
            mu=mu,
            logvar=logvar,
            h_g=h_g,
            z=z,
            attention=weights,
        )


class BaselineGNN(nn.Module):
    """Plain deterministic GNN: two non-residual mean-aggregation layers,
    attention pooling, MLP point-estimate heads and a linear node head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        d = cfg.graph_width
        self.spectral = SpectralEncoder(cfg.n_inputs, cfg.spectral_widths)
        self.sage1 = SageLayer(d, d)
        self.sage2 = SageLayer(d, d)
        self.pool = AttentionPool(d)
        hidden = cfg.head_widths[-1]
        self.head_freq = nn.Sequential(nn.Linear(d, hidden), nn.GELU(), nn.Linear(hidden, cfg.n_modes))
        self.head_zeta = nn.Sequential(nn.Linear(d, hidden), nn.GELU(), nn.Linear(hidden, cfg.n_modes))
        self.node_head = nn.Linear(d, cfg.n_modes, bias=False)

    def forward(self, x, edges):
        h = self.spectral(x)
        h = self.sage1(h, edges)
        h = self.sage2(h, edges)
        h_g, _ = self.pool(h)
        return self.head_freq(h_g), self.head_zeta(h_g), self.node_head(h)


def build_model(cfg: ModelConfig, seed: int = 0) -> ModalVGAE:
    """Deterministically initialized model (same seed, same weights)."""
    torch.manual_seed(seed)
    return ModalVGAE(cfg)


def build_baseline(cfg: ModelConfig, seed: int = 0) -> BaselineGNN:
    torch.manual_seed(seed)
    return BaselineGNN(cfg)


def num_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def sample_tensors(sample: GraphSample, dtype=torch.float32):
    """GraphSample -> (features, edge) tensors for the forward pass."""
    x = torch.from_numpy(np.ascontiguousarray(sample.features)).to(dtype)
    edges = torch.from_numpy(np.ascontiguousarray(sample.edges.astype(np.int64)))
    return x, edges


def log_targets(sample: GraphSample, dtype=torch.float32):
    """(log f, log zeta, phi) target tensors."""
    lf = torch.from_numpy(np.log(sample.freqs.astype(np.float64))).to(dtype)
    lz = torch.from_numpy(np.log(sample.zetas.astype(np.float64))).to(dtype)
    phi = torch.from_numpy(np.ascontiguousarray(sample.shapes)).to(dtype)
    return lf, lz, phi
