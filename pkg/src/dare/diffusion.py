"""Diffusion path policy: squared-cosine schedule, forward noising, the
iterative denoising loop, the transformer noise predictor and its loss.

Action sequences live in continuous space as (T_p, 10) arrays whose clean
targets are one-hot index pairs; block argmax recovers the indices after
denoising (see dare.actions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .actions import ACTION_DIM, HorizonConfig


class DenoisingNumericError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite action sequence at denoising step k={step}")
        self.step = step


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step coefficients indexed k = 0..K (index 0 is the clean state).

    alpha_bar is the cumulative signal fraction; step_scale, noise_coef and
    sigma are the ancestral-update coefficients applied as
    A_{k-1} = step_scale[k] * (A_k - noise_coef[k] * eps_hat + N(0, sigma[k]^2 I)).
    """

    steps: int
    alpha_bar: np.ndarray
    beta: np.ndarray
    step_scale: np.ndarray
    noise_coef: np.ndarray
    sigma: np.ndarray

    def with_sigma(self, sigma: np.ndarray) -> "NoiseSchedule":
        return NoiseSchedule(
            self.steps, self.alpha_bar, self.beta, self.step_scale, self.noise_coef, sigma
        )


def build_schedule(steps: int, offset: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    """Squared-cosine noise schedule with the standard ancestral coefficients.

    alpha_bar[k] = f(k)/f(0) with f(k) = cos^2(((k/K + s)/(1 + s)) * pi/2);
    per-step betas are clipped at max_beta (the published cap) and alpha_bar
    rebuilt from the clipped betas so every coefficient stays finite.
    """
    if steps < 1:
        raise ValueError("schedule needs at least one step")

    def f(k):
        return math.cos(((k / steps + offset) / (1 + offset)) * math.pi / 2.0) ** 2

    raw = np.array([f(k) / f(0) for k in range(steps + 1)])
    beta = np.zeros(steps + 1)
    beta[1:] = np.minimum(1.0 - raw[1:] / raw[:-1], max_beta)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar[0] = 1.0

    step_scale = np.zeros(steps + 1)
    noise_coef = np.zeros(steps + 1)
    sigma = np.zeros(steps + 1)
    for k in range(1, steps + 1):
        step_scale[k] = 1.0 / math.sqrt(alpha[k])
        noise_coef[k] = beta[k] / math.sqrt(1.0 - alpha_bar[k])
        posterior_var = (1.0 - alpha_bar[k - 1]) / (1.0 - alpha_bar[k]) * beta[k]
        sigma[k] = math.sqrt(posterior_var)
    return NoiseSchedule(steps, alpha_bar, beta, step_scale, noise_coef, sigma)


def add_noise(actions, k: int, noise, schedule: NoiseSchedule):
    """Forward process: sqrt(abar_k) * A_0 + sqrt(1 - abar_k) * eps."""
    abar = float(schedule.alpha_bar[k])
    return math.sqrt(abar) * actions + math.sqrt(1.0 - abar) * noise


def _sinusoidal_embedding(k, dim, max_steps=10_000):
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_steps) * torch.arange(half, dtype=k.dtype, device=k.device) / half
    )
    angles = k[:, None] * freqs[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


@dataclass(frozen=True)
class PredictorConfig:
    width: int = 128
    blocks: int = 4
    horizon: HorizonConfig = HorizonConfig()
    cond_dim: int = 128  # encoder feature dim


class _PredictorBlock(nn.Module):
    """Self-attention over action tokens, cross-attention into the context
    tokens, and a feed-forward sublayer; the pooled context also modulates
    the tokens additively so conditioning cannot be attended away."""

    def __init__(self, width):
        super().__init__()
        self.self_attn = nn.ModuleDict(
            {
                "q": nn.Linear(width, width, bias=False),
                "k": nn.Linear(width, width, bias=False),
                "v": nn.Linear(width, width, bias=False),
            }
        )
        self.cross_attn = nn.ModuleDict(
            {
                "q": nn.Linear(width, width, bias=False),
                "k": nn.Linear(width, width, bias=False),
                "v": nn.Linear(width, width, bias=False),
            }
        )
        self.norm1 = nn.LayerNorm(width)
        self.norm2 = nn.LayerNorm(width)
        self.norm3 = nn.LayerNorm(width)
        self.cond_shift = nn.Linear(width, width)
        self.ff = nn.Sequential(
            nn.Linear(width, 4 * width), nn.ReLU(), nn.Linear(4 * width, width)
        )
        self.width = width

    @staticmethod
    def _attend(q, k, v, dim):
        weights = torch.softmax(q @ k.transpose(-2, -1) / dim**0.5, dim=-1)
        return weights @ v

    def forward(self, tokens, context):
        a = self._attend(
            self.self_attn["q"](tokens),
            self.self_attn["k"](tokens),
            self.self_attn["v"](tokens),
            self.width,
        )
        tokens = self.norm1(tokens + a)
        c = self._attend(
            self.cross_attn["q"](tokens),
            self.cross_attn["k"](context),
            self.cross_attn["v"](context),
            self.width,
        )
        tokens = self.norm2(tokens + c + self.cond_shift(context.mean(dim=1))[:, None, :])
        return self.norm3(tokens + self.ff(tokens))


class NoisePredictor(nn.Module):
    """Transformer noise predictor over the T_p action tokens, conditioned
    on the belief features and a sinusoidal embedding of the denoising step
    (both injected as context tokens for cross-attention)."""

    def __init__(self, cfg: PredictorConfig = PredictorConfig()):
        super().__init__()
        self.cfg = cfg
        width = cfg.width
        self.action_proj = nn.Linear(ACTION_DIM, width)
        self.pos_embed = nn.Parameter(torch.zeros(cfg.horizon.prediction, width))
        nn.init.normal_(self.pos_embed, std=0.02)
        self.k_proj = nn.Linear(width, width)
        self.cond_proj = nn.Linear(cfg.cond_dim, width)
        self.context_norm = nn.LayerNorm(width)
        self.blocks = nn.ModuleList(_PredictorBlock(width) for _ in range(cfg.blocks))
        self.head = nn.Linear(width, ACTION_DIM)

    def forward(self, actions, conditioning, k):
        """actions: (B, T_p, 10); conditioning: (B, T_o, cond_dim);
        k: (B,) denoising steps. Returns predicted noise, same shape as
        actions."""
        dtype = self.pos_embed.dtype
        tokens = self.action_proj(actions) + self.pos_embed[None]
        k_token = self.k_proj(_sinusoidal_embedding(k.to(dtype), self.cfg.width))
        context = torch.cat([k_token[:, None, :], self.cond_proj(conditioning)], dim=1)
        context = self.context_norm(context)
        for block in self.blocks:
            tokens = block(tokens, context)
        return self.head(tokens)


DEFAULT_CLEAN_RANGE = (-1.0, 2.0)  # loose box around the one-hot values


def denoise(
    predictor: NoisePredictor,
    conditioning: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
    initial: torch.Tensor | None = None,
    clean_range: tuple[float, float] | None = DEFAULT_CLEAN_RANGE,
) -> torch.Tensor:
    """Iteratively denoise from unit Gaussian noise down to a clean action
    sequence: A_{k-1} = a(k) * (A_k - g(k) * eps_hat + N(0, s(k)^2 I)).

    clean_range clamps the clean sample implied by the noise estimate (the
    standard stabilizer against error amplification at the largest steps,
    where a(K) is ~30); the update form above is untouched — the estimate
    is replaced by the one implying the clamped clean sample, an identity
    transform whenever the implied sample is already inside the box. Pass
    None to run the raw update.

    conditioning: (B, T_o, cond_dim). Raises DenoisingNumericError naming
    the step when the sequence stops being finite.
    """
    cfg = predictor.cfg
    dtype = next(predictor.parameters()).dtype
    batch = conditioning.shape[0]
    shape = (batch, cfg.horizon.prediction, ACTION_DIM)
    if initial is None:
        a = torch.randn(shape, generator=generator, dtype=dtype)
    else:
        a = initial.to(dtype)
    for k in range(schedule.steps, 0, -1):
        k_batch = torch.full((batch,), k, dtype=torch.long)
        with torch.no_grad():
            eps_hat = predictor(a, conditioning, k_batch)
        if clean_range is not None:
            abar = float(schedule.alpha_bar[k])
            clean = (a - math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(abar)
            clean = clean.clamp(*clean_range)
            eps_hat = (a - math.sqrt(abar) * clean) / math.sqrt(1.0 - abar)
        inner = a - float(schedule.noise_coef[k]) * eps_hat
        if schedule.sigma[k] > 0:
            inner = inner + float(schedule.sigma[k]) * torch.randn(
                shape, generator=generator, dtype=dtype
            )
        a = float(schedule.step_scale[k]) * inner
        if not torch.isfinite(a).all():
            raise DenoisingNumericError(k)
    return a


def training_loss(
    predictor: NoisePredictor,
    conditioning: torch.Tensor,
    clean_actions: torch.Tensor,
    k: torch.Tensor,
    noise: torch.Tensor,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """Mean squared error between the sampled noise and the predictor's
    estimate on the noised expert sequence. Gradients flow through the
    conditioning into the encoder unless the caller detached it."""
    abar = torch.as_tensor(
        schedule.alpha_bar, dtype=clean_actions.dtype, device=clean_actions.device
    )[k]
    noisy = (
        torch.sqrt(abar)[:, None, None] * clean_actions
        + torch.sqrt(1.0 - abar)[:, None, None] * noise
    )
    predicted = predictor(noisy, conditioning, k)
    return torch.mean((noise - predicted) ** 2)
