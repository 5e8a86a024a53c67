import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dare.actions import (
    ACTION_DIM,
    HorizonConfig,
    action_indices,
    decode_actions,
    displacement_to_indices,
    encode_action,
    repair_collisions,
)
from dare.diffusion import (
    DenoisingNumericError,
    NoisePredictor,
    PredictorConfig,
    add_noise,
    build_schedule,
    denoise,
    training_loss,
)

from bruteforce import decode_blocks_brute, squared_cosine_alpha_bar

HOR = HorizonConfig()


class _StubPredictor:
    """Duck-typed predictor returning a fixed tensor (or zeros)."""

    def __init__(self, output=None, horizon=HOR, width=8):
        self.cfg = PredictorConfig(width=width, blocks=1, horizon=horizon, cond_dim=width)
        self.output = output
        self._param = torch.zeros(1)

    def parameters(self):
        return iter([self._param])

    def __call__(self, actions, conditioning, k):
        if self.output is None:
            return torch.zeros_like(actions)
        return self.output.expand_as(actions)


class TestSchedule:
    def test_alpha_bar_starts_at_one(self):
        sched = build_schedule(100)
        assert abs(sched.alpha_bar[0] - 1.0) <= 1e-6

    @pytest.mark.parametrize("steps", [1, 10, 100, 500])
    def test_alpha_bar_strictly_decreasing(self, steps):
        sched = build_schedule(steps)
        assert np.all(np.diff(sched.alpha_bar) < 0)

    def test_final_alpha_bar_small(self):
        sched = build_schedule(100)
        assert sched.alpha_bar[100] < 0.01

    @pytest.mark.parametrize("k", [25, 50, 75])
    def test_spot_values_match_published_formula(self, k):
        sched = build_schedule(100)
        assert sched.alpha_bar[k] == pytest.approx(
            squared_cosine_alpha_bar(k, 100), rel=1e-12
        )

    def test_zero_steps_rejected(self):
        with pytest.raises(ValueError):
            build_schedule(0)

    def test_final_denoise_step_is_noiseless(self):
        sched = build_schedule(100)
        assert sched.sigma[1] == 0.0

    def test_coefficient_relations(self):
        sched = build_schedule(50)
        for k in range(1, 51):
            alpha_k = 1.0 - sched.beta[k]
            assert sched.step_scale[k] == pytest.approx(1.0 / math.sqrt(alpha_k))
            assert sched.noise_coef[k] == pytest.approx(
                sched.beta[k] / math.sqrt(1.0 - sched.alpha_bar[k])
            )


class TestAddNoise:
    def test_k_zero_is_identity(self):
        sched = build_schedule(100)
        a0 = np.random.default_rng(0).normal(size=(8, 10))
        np.testing.assert_array_equal(add_noise(a0, 0, np.zeros_like(a0), sched), a0)

    def test_zero_noise_scales_by_sqrt_alpha_bar(self):
        sched = build_schedule(100)
        a0 = np.ones((8, 10))
        out = add_noise(a0, 40, np.zeros_like(a0), sched)
        np.testing.assert_allclose(out, math.sqrt(sched.alpha_bar[40]) * a0)

    @pytest.mark.parametrize("k", [25, 50, 75, 100])
    def test_monte_carlo_variance_matches(self, k):
        sched = build_schedule(100)
        rng = np.random.default_rng(k)
        a0 = rng.normal(size=10)
        draws = np.stack(
            [add_noise(a0, k, rng.standard_normal(10), sched) for _ in range(10_000)]
        )
        var = draws.var(axis=0)
        expected = 1.0 - sched.alpha_bar[k]
        np.testing.assert_allclose(var, expected, rtol=0.05)


class TestDenoise:
    def test_zero_predictor_zero_sigma_closed_form(self):
        sched = build_schedule(20)
        silent = sched.with_sigma(np.zeros_like(sched.sigma))
        stub = _StubPredictor()
        seed_noise = torch.randn(1, HOR.prediction, ACTION_DIM, generator=torch.Generator().manual_seed(0))
        out = denoise(stub, torch.zeros(1, 2, 8), silent, initial=seed_noise, clean_range=None)
        expected = float(np.prod(sched.step_scale[1:])) * seed_noise
        np.testing.assert_allclose(out.numpy(), expected.numpy(), rtol=1e-5)

    def test_single_step_matches_update_rule_exactly(self):
        sched = build_schedule(1)
        silent = sched.with_sigma(np.zeros_like(sched.sigma))
        p = torch.randn(1, 1, ACTION_DIM, generator=torch.Generator().manual_seed(1))
        stub = _StubPredictor(output=p)
        start = torch.randn(1, HOR.prediction, ACTION_DIM, generator=torch.Generator().manual_seed(2))
        out = denoise(stub, torch.zeros(1, 2, 8), silent, initial=start, clean_range=None)
        expected = sched.step_scale[1] * (start - sched.noise_coef[1] * p.expand_as(start))
        assert torch.equal(out, expected.to(out.dtype)) or torch.allclose(out, expected, atol=0, rtol=0)

    def test_deterministic_given_seed(self):
        torch.manual_seed(0)
        pred = NoisePredictor(PredictorConfig(width=16, blocks=1, cond_dim=4))
        sched = build_schedule(10)
        cond = torch.zeros(1, 2, 4)
        a = denoise(pred, cond, sched, torch.Generator().manual_seed(9))
        b = denoise(pred, cond, sched, torch.Generator().manual_seed(9))
        assert torch.equal(a, b)

    def test_output_shape(self):
        torch.manual_seed(0)
        pred = NoisePredictor(PredictorConfig(width=16, blocks=1, cond_dim=4))
        sched = build_schedule(5)
        out = denoise(pred, torch.zeros(3, 2, 4), sched, torch.Generator().manual_seed(0))
        assert out.shape == (3, HOR.prediction, ACTION_DIM)

    def test_nonfinite_raises_with_step(self):
        sched = build_schedule(10)
        stub = _StubPredictor(output=torch.full((1, 1, ACTION_DIM), float("nan")))
        with pytest.raises(DenoisingNumericError) as err:
            denoise(stub, torch.zeros(1, 2, 8), sched, torch.Generator().manual_seed(0))
        assert err.value.step == 10

    def test_trained_tiny_task_samples_both_targets(self):
        torch.manual_seed(0)
        sched = build_schedule(100)
        cfg = PredictorConfig(width=64, blocks=2, horizon=HOR, cond_dim=8)
        pred = NoisePredictor(cfg)
        t_a = np.stack([encode_action(3, 2)] * HOR.prediction)
        t_b = np.stack([encode_action(1, 2)] * HOR.prediction)
        targets = torch.tensor(np.stack([t_a, t_b]), dtype=torch.float32)
        cond = torch.zeros(2, 2, 8)
        opt = torch.optim.AdamW(pred.parameters(), lr=1e-3)
        for _ in range(1500):
            idx = torch.randint(0, 2, (64,))
            loss = training_loss(
                pred,
                cond[idx],
                targets[idx],
                torch.randint(1, 101, (64,)),
                torch.randn(64, HOR.prediction, ACTION_DIM),
                sched,
            )
            opt.zero_grad()
            loss.backward()
            opt.step()
        want = {tuple(map(tuple, [[(3, 2)] * 8])), tuple(map(tuple, [[(1, 2)] * 8]))}
        gen = torch.Generator().manual_seed(42)
        hits = 0
        trials = 100
        for _ in range(trials):
            out = denoise(pred, cond[:1], sched, gen)
            decoded = tuple(action_indices(row) for row in out[0].numpy())
            hits += decoded in {(( 3, 2),) * 8, ((1, 2),) * 8}
        assert hits / trials >= 0.95


class TestTrainingLoss:
    def test_perfect_predictor_gives_zero(self):
        sched = build_schedule(30)
        noise = torch.randn(4, HOR.prediction, ACTION_DIM, generator=torch.Generator().manual_seed(0))

        class Echo:
            cfg = PredictorConfig(width=8, blocks=1, cond_dim=8)

            def __call__(self, actions, conditioning, k):
                return noise

        loss = training_loss(
            Echo(), torch.zeros(4, 2, 8), torch.zeros(4, HOR.prediction, ACTION_DIM),
            torch.tensor([3, 7, 15, 30]), noise, sched,
        )
        assert float(loss) == 0.0

    def test_zero_predictor_gives_mean_square_noise(self):
        sched = build_schedule(30)
        noise = torch.randn(4, HOR.prediction, ACTION_DIM, generator=torch.Generator().manual_seed(1))
        stub = _StubPredictor()
        loss = training_loss(
            stub, torch.zeros(4, 2, 8), torch.zeros(4, HOR.prediction, ACTION_DIM),
            torch.tensor([3, 7, 15, 30]), noise, sched,
        )
        assert float(loss) == pytest.approx(float((noise**2).mean()), rel=1e-6)

    def test_gradients_match_finite_differences_end_to_end(self):
        # Criterion-style check: encoder + predictor grads of the denoising
        # loss vs central differences on a 5-node graph, double precision.
        from dare.encoder import EncoderConfig, GraphEncoder, parameter_gradients

        torch.manual_seed(0)
        enc = GraphEncoder(EncoderConfig(feature_dim=8, layers=1)).to(torch.float64)
        pred = NoisePredictor(
            PredictorConfig(width=16, blocks=1, cond_dim=8, horizon=HOR)
        ).to(torch.float64)
        feats = torch.randn(1, 5, 5, dtype=torch.float64)
        mask = torch.zeros(1, 5, 5, dtype=torch.bool)
        current = torch.tensor([1])
        sched = build_schedule(10)
        target = torch.zeros(1, HOR.prediction, ACTION_DIM, dtype=torch.float64)
        target[0, :, 2] = 1.0
        target[0, :, 7] = 1.0
        noise = torch.randn(1, HOR.prediction, ACTION_DIM, dtype=torch.float64,
                            generator=torch.Generator().manual_seed(5))
        k = torch.tensor([4])

        def compute_loss():
            _, belief = enc(feats, mask, current)
            conditioning = belief[:, None, :].repeat(1, 2, 1)
            return training_loss(pred, conditioning, target, k, noise, sched)

        loss = compute_loss()
        grads = {"enc": parameter_gradients(loss, enc), "pred": parameter_gradients(loss, pred)}
        eps = 1e-4
        rng = np.random.default_rng(7)
        for label, module in (("enc", enc), ("pred", pred)):
            for name, param in module.named_parameters():
                flat = param.data.view(-1)
                for i in rng.choice(flat.numel(), size=min(4, flat.numel()), replace=False):
                    orig = float(flat[i])
                    flat[i] = orig + eps
                    lp = float(compute_loss().detach())
                    flat[i] = orig - eps
                    lm = float(compute_loss().detach())
                    flat[i] = orig
                    fd = (lp - lm) / (2 * eps)
                    ag = float(grads[label][name].view(-1)[i])
                    assert abs(ag - fd) <= 1e-3 * max(abs(ag), abs(fd), 1e-6), (label, name)


class TestDecodeActions:
    def test_all_stay_returns_robot_position_copies(self):
        seq = np.stack([encode_action(2, 2)] * HOR.prediction)
        path = decode_actions(seq, (8.2, 8.2), 4.0, HOR)
        assert len(path) == HOR.future_steps
        for p in path:
            assert p == (8.2, 8.2)

    def test_cumulative_sum_in_x(self):
        rows = [encode_action(2, 2)] * (HOR.observation - 1) + [encode_action(3, 2)] * 7
        path = decode_actions(np.stack(rows), (0.0, 0.0), 4.0, HOR)
        assert path[0] == (4.0, 0.0)
        assert path[1] == (8.0, 0.0)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            decode_actions(np.zeros((3, ACTION_DIM)), (0, 0), 4.0, HOR)

    @given(st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_matches_bruteforce_decoder(self, seed):
        rng = np.random.default_rng(seed)
        seq = rng.normal(size=(HOR.prediction, ACTION_DIM))
        origin = tuple(rng.uniform(0, 20, 2))
        got = decode_actions(seq, origin, 4.0, HOR)
        expected = decode_blocks_brute(seq[HOR.observation - 1 :], origin, 4.0)
        np.testing.assert_allclose(got, expected)


class TestRepairCollisions:
    def _igraph(self):
        from dare.graph import annotate, build_graph
        from dare.world import SensorModel, detect_frontiers
        from conftest import make_belief, open_box
        from dare.grid_geom import OCCUPIED, UNKNOWN

        cells = open_box(64, 64)
        cells[5:30, 24:27] = OCCUPIED  # wall between lattice columns
        cells[40:, 40:] = UNKNOWN
        belief = make_belief(cells)
        graph = build_graph(belief, (4 * 4.0 + 0.2, 4.0 + 0.2), 4.0)
        return annotate(graph, belief, detect_frontiers(belief), SensorModel(range_m=20.0))

    def test_valid_path_unchanged(self):
        ig = self._igraph()
        g = ig.base
        adj = [v for u, v in g.edges if u == g.current] + [
            u for u, v in g.edges if v == g.current
        ]
        step1 = min(adj)
        path = [tuple(g.positions[step1])]
        assert repair_collisions(path, ig, HOR) == [step1]

    def test_stay_kept(self):
        ig = self._igraph()
        path = [tuple(ig.base.positions[ig.base.current])] * 3
        assert repair_collisions(path, ig, HOR) == [ig.base.current] * 3

    def test_blocked_step_detours_and_truncates(self):
        ig = self._igraph()
        g = ig.base
        cur_pos = g.positions[g.current]
        blocked_target = (cur_pos[0] - 2 * 4.0, cur_pos[1])  # across the wall
        target_node = g.node_at(blocked_target)
        assert target_node is not None
        assert not g.has_edge(g.current, target_node)
        from dare.graph import shortest_path

        expected_first = shortest_path(g, g.current, target_node).nodes[1]
        out = repair_collisions([blocked_target, (0.2, 0.2)], ig, HOR)
        assert out == [expected_first]

    def test_isolated_robot_is_stuck(self):
        import numpy as np

        from dare.graph import CollisionFreeGraph, InformativeGraph
        from dare.world import SensorModel

        g = CollisionFreeGraph(
            np.array([[0.2, 0.2], [8.2, 8.2]]), np.zeros((2, 2), np.int64), [], 4.0, 0
        )
        ig = InformativeGraph(
            g,
            np.array([0, 1]),
            np.zeros(2, np.uint8),
            np.array([1, 0], np.uint8),
            np.array([0, 3]),
            None,
            SensorModel(),
        )
        assert repair_collisions([(8.2, 8.2)], ig, HOR) is None


class TestActionCodec:
    @given(st.integers(0, 4), st.integers(0, 4))
    def test_roundtrip(self, ix, iy):
        vec = encode_action(ix, iy)
        assert action_indices(vec) == (ix, iy)
        assert vec.sum() == 2.0

    def test_displacement_mapping(self):
        assert displacement_to_indices(0, 0) == (2, 2)
        assert displacement_to_indices(-2, 1) == (0, 3)
        with pytest.raises(ValueError):
            displacement_to_indices(3, 0)
