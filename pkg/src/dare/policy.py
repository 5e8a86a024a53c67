"""The trained diffusion planner, wrapped for the episode runner."""

from __future__ import annotations

import numpy as np
import torch

from .actions import HorizonConfig, action_indices, decode_actions
from .checkpoint import load_checkpoint
from .diffusion import build_schedule, denoise
from .encoder import edge_mask, normalize_inputs
from .episode import Planner


class DarePlanner(Planner):
    """Denoise action sequences conditioned on the last T_o belief
    features, decode them to lattice positions, and hand the chosen plan to
    the runner (which repairs and executes the action horizon).

    Several sequences are sampled per replan and the one whose first action
    agrees with the sample majority is executed; a single reverse pass is
    cheap and the vote sharpens the first action considerably.
    """

    name = "dare"

    def __init__(
        self,
        checkpoint_path,
        horizon: HorizonConfig = HorizonConfig(),
        samples: int = 7,
    ):
        self.encoder, self.predictor, extra = load_checkpoint(checkpoint_path)
        self.encoder.eval()
        self.predictor.eval()
        self.horizon = self.predictor.cfg.horizon
        self.schedule = build_schedule(int(extra.get("denoise_steps", 100)))
        self.samples = samples
        self._features: list[torch.Tensor] = []
        self._seed = 0

    def start_episode(self, truth, start, sim, seed):
        self._features = []
        self._seed = seed

    def _belief_feature(self, igraph) -> torch.Tensor:
        feats = torch.as_tensor(normalize_inputs(igraph, self.encoder.cfg.utility_cap))[None]
        mask = torch.as_tensor(edge_mask(igraph.base))[None]
        current = torch.tensor([igraph.base.current])
        with torch.no_grad():
            _, belief_feat = self.encoder(feats, mask, current)
        return belief_feat[0]

    def plan(self, belief, igraph, frontiers, step):
        self._features.append(self._belief_feature(igraph))
        window = self._features[-self.horizon.observation :]
        while len(window) < self.horizon.observation:
            window.insert(0, window[0])
        conditioning = torch.stack(window)[None].repeat(self.samples, 1, 1)

        generator = torch.Generator()
        generator.manual_seed(
            int(np.random.SeedSequence((self._seed, step, 77)).generate_state(1)[0])
        )
        sequences = denoise(self.predictor, conditioning, self.schedule, generator)
        chosen = vote_on_first_action(sequences.numpy(), self.horizon)
        origin = tuple(igraph.base.positions[igraph.base.current])
        return decode_actions(
            sequences[chosen].numpy(), origin, igraph.base.d_n, self.horizon
        )


def vote_on_first_action(sequences: np.ndarray, horizon: HorizonConfig) -> int:
    """Index of the first sampled sequence whose first decoded action
    matches the majority across samples (ties by decode order)."""
    from collections import Counter

    slot = horizon.observation - 1
    firsts = [action_indices(seq[slot]) for seq in sequences]
    winner = Counter(firsts).most_common(1)[0][0]
    return firsts.index(winner)
