"""Attention encoder: informative graph -> node features + belief feature.

The masked scaled-dot-product core is implemented explicitly: per-edge
logits q_i.k_j / sqrt(d), softmax restricted to unmasked pairs (weights are
exactly zero on masked ones), output as the weight-averaged values. Six
such self-attention blocks (with residual, layer norm and a pointwise
feed-forward sublayer) are followed by one cross-attention readout whose
query is the current node's feature and whose keys/values are all node
features; its output is the robot belief feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .graph import InformativeGraph


@dataclass(frozen=True)
class EncoderConfig:
    feature_dim: int = 128  # d
    layers: int = 6
    input_dim: int = 5  # x, y, u, b, occupancy after normalization
    utility_cap: float = 50.0

    def __post_init__(self):
        if self.feature_dim <= 0:
            raise ValueError("feature_dim must be positive")
        if self.layers < 1:
            raise ValueError("need at least one attention layer")


def edge_mask(graph) -> np.ndarray:
    """Boolean (m, m) mask, True = attention blocked. Entry (i, j) is
    unblocked iff (i, j) is an edge or i == j."""
    return mask_from_edges(np.asarray(graph.edges, dtype=np.int64), graph.size)


def node_features(positions, utility, guidepost, robot: int, sensor_range: float, utility_cap: float = 50.0) -> np.ndarray:
    """Per-node (m, 5) feature rows: robot-centric coordinates scaled by the
    sensor range, utility clipped at the cap and scaled to [0, 1], guidepost
    and occupancy passed through."""
    positions = np.asarray(positions, dtype=np.float64)
    out = np.zeros((len(positions), 5), dtype=np.float32)
    out[:, 0] = (positions[:, 0] - positions[robot][0]) / sensor_range
    out[:, 1] = (positions[:, 1] - positions[robot][1]) / sensor_range
    out[:, 2] = np.minimum(np.asarray(utility) / utility_cap, 1.0)
    out[:, 3] = np.asarray(guidepost)
    out[:, 4] = 0.0
    out[robot, 4] = 1.0
    return out


def normalize_inputs(igraph: InformativeGraph, utility_cap: float = 50.0) -> np.ndarray:
    """Feature matrix for a live informative graph (see node_features)."""
    return node_features(
        igraph.base.positions,
        igraph.utility,
        igraph.guidepost,
        igraph.base.current,
        igraph.sensor.range_m,
        utility_cap,
    )


def mask_from_edges(edges, m: int) -> np.ndarray:
    """Boolean (m, m) attention mask from an (E, 2) edge array; True means
    blocked, self-loops stay open."""
    mask = np.ones((m, m), dtype=bool)
    np.fill_diagonal(mask, False)
    for i, j in np.asarray(edges).reshape(-1, 2):
        mask[i, j] = False
        mask[j, i] = False
    return mask


class MaskedAttention(nn.Module):
    """Single-head masked scaled dot-product attention."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.w_q = nn.Linear(dim, dim, bias=False)
        self.w_k = nn.Linear(dim, dim, bias=False)
        self.w_v = nn.Linear(dim, dim, bias=False)

    def forward(self, h_q, h_kv, mask):
        # mask: (B, n_q, n_kv) bool, True = blocked; softmax over the rest.
        q = self.w_q(h_q)
        k = self.w_k(h_kv)
        v = self.w_v(h_kv)
        scores = q @ k.transpose(-2, -1) / self.dim**0.5
        scores = scores.masked_fill(mask, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        return weights @ v, weights


class AttentionBlock(nn.Module):
    """Attention + residual/norm + pointwise feed-forward + residual/norm."""

    def __init__(self, dim: int, hidden_mult: int = 4):
        super().__init__()
        self.attention = MaskedAttention(dim)
        self.norm1 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, hidden_mult * dim),
            nn.ReLU(),
            nn.Linear(hidden_mult * dim, dim),
        )
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, h_q, h_kv, mask):
        attended, weights = self.attention(h_q, h_kv, mask)
        h = self.norm1(h_q + attended)
        h = self.norm2(h + self.ff(h))
        return h, weights


class GraphEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.cfg = cfg
        self.input_proj = nn.Linear(cfg.input_dim, cfg.feature_dim)
        self.blocks = nn.ModuleList(AttentionBlock(cfg.feature_dim) for _ in range(cfg.layers))
        self.readout = AttentionBlock(cfg.feature_dim)

    def forward(self, features, mask, current, padding=None, collect_weights=False):
        """Encode one batch of graphs.

        features: (B, m, input_dim); mask: (B, m, m) bool, True = blocked;
        current: (B,) long, index of the robot node per graph;
        padding: optional (B, m) bool marking pad nodes (blocked everywhere
        as keys, including the cross-attention readout).

        Returns (node_features (B, m, d), belief_feature (B, d)) and, when
        collect_weights is set, the per-layer attention weight tensors.
        """
        h = self.input_proj(features)
        attn_mask = mask
        if padding is not None:
            attn_mask = attn_mask | padding[:, None, :]
            eye = torch.eye(mask.shape[-1], dtype=torch.bool, device=mask.device)
            attn_mask = attn_mask & ~eye[None, :, :]
        weights_per_layer = []
        for block in self.blocks:
            h, w = block(h, h, attn_mask)
            if collect_weights:
                weights_per_layer.append(w)

        batch = torch.arange(h.shape[0], device=h.device)
        query = h[batch, current][:, None, :]
        cross_mask = torch.zeros(
            (h.shape[0], 1, h.shape[1]), dtype=torch.bool, device=h.device
        )
        if padding is not None:
            cross_mask = cross_mask | padding[:, None, :]
        belief, w = self.readout(query, h, cross_mask)
        if collect_weights:
            weights_per_layer.append(w)
            return h, belief[:, 0, :], weights_per_layer
        return h, belief[:, 0, :]


def encode(igraph: InformativeGraph, encoder: GraphEncoder, utility_cap: float | None = None):
    """Single-graph convenience wrapper returning numpy-friendly tensors."""
    cap = utility_cap if utility_cap is not None else encoder.cfg.utility_cap
    dtype = next(encoder.parameters()).dtype
    feats = torch.as_tensor(normalize_inputs(igraph, cap), dtype=dtype)[None]
    mask = torch.as_tensor(edge_mask(igraph.base))[None]
    current = torch.tensor([igraph.base.current])
    with torch.no_grad():
        nodes, belief = encoder(feats, mask, current)
    return nodes[0], belief[0]


def parameter_gradients(loss: torch.Tensor, module: nn.Module) -> dict[str, torch.Tensor]:
    """Gradients of a scalar loss for every named parameter of the module
    (zeros for parameters the loss does not reach)."""
    params = dict(module.named_parameters())
    grads = torch.autograd.grad(
        loss, list(params.values()), retain_graph=True, allow_unused=True
    )
    return {
        name: (g if g is not None else torch.zeros_like(p))
        for (name, p), g in zip(params.items(), grads)
    }
