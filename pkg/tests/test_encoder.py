import numpy as np
import pytest
import torch

from dare.encoder import (
    EncoderConfig,
    GraphEncoder,
    MaskedAttention,
    edge_mask,
    mask_from_edges,
    node_features,
    normalize_inputs,
    parameter_gradients,
)
from dare.graph import annotate, build_graph
from dare.world import BeliefMap, SensorModel, detect_frontiers, generate_dungeon, sense

from conftest import full_belief

RES = 0.4
D_N = 4.0


def sample_igraph(seed=0, range_m=6.0):
    truth = generate_dungeon(seed, 64, 64)
    from dare.episode import start_pose

    pose = start_pose(truth, seed, D_N)
    sensor = SensorModel(range_m=range_m)
    belief = sense(truth, BeliefMap.unknown_like(truth), pose, sensor)
    graph = build_graph(belief, pose, D_N)
    return annotate(graph, belief, detect_frontiers(belief), sensor)


def graph_tensors(igraph, dtype=torch.float32):
    feats = torch.as_tensor(normalize_inputs(igraph), dtype=dtype)[None]
    mask = torch.as_tensor(edge_mask(igraph.base))[None]
    current = torch.tensor([igraph.base.current])
    return feats, mask, current


class TestNormalizeInputs:
    def test_robot_row_is_centered(self):
        ig = sample_igraph()
        feats = normalize_inputs(ig)
        robot = ig.base.current
        assert feats[robot, 0] == 0.0
        assert feats[robot, 1] == 0.0
        assert feats[robot, 4] == 1.0
        assert feats[:, 4].sum() == 1.0

    def test_utility_clipped_at_cap(self):
        ig = sample_igraph()
        ig.utility[0] = 500
        feats = normalize_inputs(ig, utility_cap=50.0)
        assert feats[0, 2] == 1.0

    def test_translation_invariance(self):
        ig = sample_igraph(1)
        base_feats = normalize_inputs(ig)
        shifted = node_features(
            ig.base.positions + np.array([10.0, 10.0]),
            ig.utility,
            ig.guidepost,
            ig.base.current,
            ig.sensor.range_m,
        )
        np.testing.assert_allclose(base_feats, shifted, atol=1e-6)


class TestEdgeMask:
    def test_symmetric_zero_diagonal(self):
        ig = sample_igraph(2)
        mask = edge_mask(ig.base)
        assert not mask.diagonal().any()
        assert np.array_equal(mask, mask.T)
        for i, j in ig.base.edges:
            assert not mask[i, j]

    def test_non_edges_blocked(self):
        mask = mask_from_edges(np.array([[0, 1]]), 3)
        assert not mask[0, 1] and not mask[1, 0]
        assert mask[0, 2] and mask[1, 2]


class TestEncodeMaskSemantics:
    def test_weights_rows_sum_to_one_and_masked_zero(self):
        torch.manual_seed(0)
        ig = sample_igraph(3)
        enc = GraphEncoder(EncoderConfig(feature_dim=32, layers=3))
        feats, mask, current = graph_tensors(ig)
        _, _, weights = enc(feats, mask, current, collect_weights=True)
        for layer_w in weights[:-1]:  # self-attention layers
            w = layer_w[0]
            np.testing.assert_allclose(w.sum(dim=-1).detach(), 1.0, atol=1e-6)
            assert (w.detach()[mask[0]] == 0.0).all()
        cross = weights[-1][0]
        np.testing.assert_allclose(cross.sum(dim=-1).detach(), 1.0, atol=1e-6)

    def test_isolated_nodes_attend_to_themselves(self):
        torch.manual_seed(0)
        attn = MaskedAttention(16)
        h = torch.randn(1, 6, 16)
        mask = ~torch.eye(6, dtype=torch.bool)[None]
        out, weights = attn(h, h, mask)
        np.testing.assert_allclose(
            weights[0].detach(), np.eye(6, dtype=np.float32), atol=1e-7
        )
        np.testing.assert_allclose(
            out[0].detach(), attn.w_v(h)[0].detach(), atol=1e-6
        )


class TestPermutationSymmetry:
    @pytest.mark.parametrize("seed", range(10))
    def test_equivariant_nodes_invariant_belief(self, seed):
        torch.manual_seed(seed)
        ig = sample_igraph(seed % 4)
        enc = GraphEncoder(EncoderConfig(feature_dim=64, layers=6))
        enc.eval()
        feats, mask, current = graph_tensors(ig)
        with torch.no_grad():
            nodes, belief = enc(feats, mask, current)

        rng = np.random.default_rng(seed)
        perm = rng.permutation(ig.size)
        inv = np.argsort(perm)
        feats_p = feats[:, perm]
        mask_p = mask[:, perm][:, :, perm]
        current_p = torch.tensor([int(inv[ig.base.current])])
        with torch.no_grad():
            nodes_p, belief_p = enc(feats_p, mask_p, current_p)
        np.testing.assert_allclose(belief.numpy(), belief_p.numpy(), atol=1e-5)
        np.testing.assert_allclose(
            nodes.numpy()[0, perm], nodes_p.numpy()[0], atol=1e-5
        )

    def test_padding_does_not_change_belief(self):
        torch.manual_seed(1)
        ig = sample_igraph(1)
        enc = GraphEncoder(EncoderConfig(feature_dim=32, layers=2))
        enc.eval()
        feats, mask, current = graph_tensors(ig)
        with torch.no_grad():
            _, belief = enc(feats, mask, current)
        m = ig.size
        pad = 5
        feats_pad = torch.zeros(1, m + pad, 5)
        feats_pad[:, :m] = feats
        mask_pad = torch.ones(1, m + pad, m + pad, dtype=torch.bool)
        mask_pad[:, :m, :m] = mask
        padding = torch.zeros(1, m + pad, dtype=torch.bool)
        padding[:, m:] = True
        with torch.no_grad():
            _, belief_pad = enc(feats_pad, mask_pad, current, padding)
        np.testing.assert_allclose(belief.numpy(), belief_pad.numpy(), atol=1e-5)


class TestForwardBasics:
    def test_deterministic(self):
        torch.manual_seed(0)
        ig = sample_igraph(2)
        enc = GraphEncoder(EncoderConfig(feature_dim=32, layers=2))
        enc.eval()
        feats, mask, current = graph_tensors(ig)
        with torch.no_grad():
            a1, b1 = enc(feats, mask, current)
            a2, b2 = enc(feats, mask, current)
        assert torch.equal(a1, a2) and torch.equal(b1, b2)

    def test_finite_outputs(self):
        torch.manual_seed(0)
        enc = GraphEncoder(EncoderConfig(feature_dim=16, layers=2))
        feats = torch.randn(2, 9, 5) * 100.0
        mask = torch.rand(2, 9, 9) > 0.5
        mask = mask & mask.transpose(1, 2)
        mask[:, range(9), range(9)] = False
        with torch.no_grad():
            nodes, belief = enc(feats, mask, torch.tensor([0, 3]))
        assert torch.isfinite(nodes).all() and torch.isfinite(belief).all()

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            EncoderConfig(feature_dim=0)
        with pytest.raises(ValueError):
            EncoderConfig(layers=0)


class TestGradients:
    def _small_setup(self):
        torch.manual_seed(3)
        enc = GraphEncoder(EncoderConfig(feature_dim=8, layers=1)).to(torch.float64)
        feats = torch.randn(1, 5, 5, dtype=torch.float64)
        mask = torch.zeros(1, 5, 5, dtype=torch.bool)
        mask[0, 0, 3] = mask[0, 3, 0] = True
        current = torch.tensor([2])
        return enc, feats, mask, current

    def test_constant_loss_gives_zero_gradients(self):
        enc, feats, mask, current = self._small_setup()
        _, belief = enc(feats, mask, current)
        loss = (belief * 0.0).sum() + 7.0
        grads = parameter_gradients(loss, enc)
        for g in grads.values():
            assert torch.all(g == 0)

    def test_matches_central_finite_differences(self):
        enc, feats, mask, current = self._small_setup()

        def loss_fn():
            _, belief = enc(feats, mask, current)
            return float((belief**2).sum().detach())

        _, belief = enc(feats, mask, current)
        grads = parameter_gradients((belief**2).sum(), enc)
        eps = 1e-4
        rng = np.random.default_rng(0)
        for name, param in enc.named_parameters():
            flat = param.data.view(-1)
            indices = rng.choice(flat.numel(), size=min(6, flat.numel()), replace=False)
            for i in indices:
                orig = float(flat[i])
                flat[i] = orig + eps
                lp = loss_fn()
                flat[i] = orig - eps
                lm = loss_fn()
                flat[i] = orig
                fd = (lp - lm) / (2 * eps)
                ag = float(grads[name].view(-1)[i])
                assert abs(ag - fd) <= 1e-3 * max(abs(ag), abs(fd), 1e-6), (name, i)

    def test_frozen_encoder_blocks_gradients(self):
        from dare.diffusion import NoisePredictor, PredictorConfig, build_schedule, training_loss
        from dare.actions import HorizonConfig

        enc, feats, mask, current = self._small_setup()
        pred = NoisePredictor(
            PredictorConfig(width=16, blocks=1, cond_dim=8, horizon=HorizonConfig())
        ).to(torch.float64)
        schedule = build_schedule(10)
        _, belief = enc(feats, mask, current)
        conditioning = belief[None].repeat(1, 2, 1).detach()  # frozen encoder
        target = torch.zeros(1, 8, 10, dtype=torch.float64)
        loss = training_loss(
            pred,
            conditioning,
            target,
            torch.tensor([5]),
            torch.randn(1, 8, 10, dtype=torch.float64),
            schedule,
        )
        enc_grads = parameter_gradients(loss, enc)
        pred_grads = parameter_gradients(loss, pred)
        assert all(torch.all(g == 0) for g in enc_grads.values())
        assert any(torch.any(g != 0) for g in pred_grads.values())
