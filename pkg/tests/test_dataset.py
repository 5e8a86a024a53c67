import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dare.actions import HorizonConfig, action_indices
from dare.dataset import (
    DemonstrationRecord,
    StepRecord,
    load_demo,
    make_windows,
    read_manifest,
    rollout_expert,
    save_demo,
    window_target,
    write_manifest,
)
from dare.episode import SimConfig
from dare.world import GroundTruthMap

from conftest import open_box

HOR = HorizonConfig()
SIM = SimConfig()


@pytest.fixture(scope="module")
def demo_record():
    return rollout_expert(0, SIM)


class TestRolloutExpert:
    def test_single_room_distance_near_plan_cost(self):
        # Big enough that the sensor range forces actual movement.
        truth = GroundTruthMap(open_box(100, 100), 0.4)
        record = rollout_expert(123, SimConfig(width=100, height=100), truth=truth)
        assert len(record) >= 1
        assert record.distance <= record.oracle_cost * 1.10 + 1e-9

    def test_consecutive_nodes_are_valid_neighbor_steps(self, demo_record):
        for step in demo_record.steps:
            ix, iy = step.action
            assert 0 <= ix <= 4 and 0 <= iy <= 4

    def test_replayed_positions_follow_actions(self, demo_record):
        rec = demo_record
        for a, b in zip(rec.steps, rec.steps[1:]):
            cur = a.positions[a.robot]
            nxt = b.positions[b.robot]
            dx = round((nxt[0] - cur[0]) / rec.d_n)
            dy = round((nxt[1] - cur[1]) / rec.d_n)
            assert (dx + 2, dy + 2) == a.action

    def test_deterministic_bytes(self, tmp_path):
        a = rollout_expert(3, SIM)
        b = rollout_expert(3, SIM)
        save_demo(a, tmp_path / "a.npz")
        save_demo(b, tmp_path / "b.npz")
        assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()

    def test_roundtrip(self, tmp_path, demo_record):
        save_demo(demo_record, tmp_path / "demo.npz")
        loaded = load_demo(tmp_path / "demo.npz")
        assert len(loaded) == len(demo_record)
        assert loaded.env_seed == demo_record.env_seed
        assert loaded.oracle_cost == demo_record.oracle_cost
        for a, b in zip(loaded.steps, demo_record.steps):
            np.testing.assert_array_equal(a.positions, b.positions)
            np.testing.assert_array_equal(a.edges, b.edges)
            np.testing.assert_array_equal(a.utility, b.utility)
            assert a.robot == b.robot
            assert a.action == b.action


def synthetic_record(n_steps, rng):
    record = DemonstrationRecord(0, 4.0, 0.4, 20.0, 360, 10.0, 4.0 * n_steps)
    for _ in range(n_steps):
        record.steps.append(
            StepRecord(
                positions=np.zeros((3, 2)),
                edges=np.zeros((0, 2), np.int64),
                utility=np.zeros(3, np.int64),
                guidepost=np.zeros(3, np.uint8),
                robot=0,
                action=(int(rng.integers(0, 5)), int(rng.integers(0, 5))),
                oracle_path=np.zeros((0, 2)),
            )
        )
    return record


class TestMakeWindows:
    def test_length_one_record_padding(self, rng):
        record = synthetic_record(1, rng)
        windows = make_windows(record, HOR)
        assert len(windows) == 1
        w = windows[0]
        assert w.snapshot_steps == (0, 0)
        first = record.steps[0].action
        assert action_indices(w.target[0]) == first  # past slot repeats
        assert action_indices(w.target[1]) == first  # the executed action
        for row in w.target[2:]:
            assert action_indices(row) == (2, 2)  # stay padding

    @given(st.integers(1, 40), st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_one_window_per_step(self, n, seed):
        record = synthetic_record(n, np.random.default_rng(seed))
        assert len(make_windows(record, HOR)) == n

    def test_targets_are_valid_one_hot_pairs(self, rng):
        record = synthetic_record(12, rng)
        for w in make_windows(record, HOR):
            for row in w.target:
                assert row[:5].sum() == 1.0 and row[5:].sum() == 1.0
                assert set(np.unique(row)) <= {0.0, 1.0}

    def test_window_actions_reassemble_executed_trajectory(self, rng):
        record = synthetic_record(15, rng)
        windows = make_windows(record, HOR)
        executed = [action_indices(w.target[HOR.observation - 1]) for w in windows]
        assert executed == [s.action for s in record.steps]

    def test_past_slots_are_previous_executed_actions(self, rng):
        record = synthetic_record(10, rng)
        windows = make_windows(record, HOR)
        for t in range(1, 10):
            assert action_indices(windows[t].target[0]) == record.steps[t - 1].action


class TestManifest:
    def test_roundtrip(self, tmp_path):
        entries = [{"seed": 4, "file": "demo_4.npz", "length": 7, "oracle_cost": 31.5, "distance": 33.0}]
        write_manifest(tmp_path, entries)
        assert read_manifest(tmp_path) == entries


class TestTrain:
    def test_zero_learning_rate_keeps_parameters(self, tmp_path, demo_record):
        from dare.checkpoint import load_checkpoint
        from dare.diffusion import NoisePredictor
        from dare.encoder import GraphEncoder
        from dare.training import TrainConfig, train

        cfg = TrainConfig(epochs=2, batch_size=8, learning_rate=0.0, seed=5)
        train([demo_record], cfg, tmp_path)
        encoder, predictor, _ = load_checkpoint(tmp_path / "last.ckpt")
        torch.manual_seed(cfg.seed)
        ref_enc = GraphEncoder(cfg.encoder)
        ref_pred = NoisePredictor(cfg.predictor)
        for got, ref in zip(encoder.state_dict().values(), ref_enc.state_dict().values()):
            np.testing.assert_allclose(got.numpy(), ref.numpy(), atol=1e-6)
        for got, ref in zip(predictor.state_dict().values(), ref_pred.state_dict().values()):
            np.testing.assert_allclose(got.numpy(), ref.numpy(), atol=1e-6)

    def test_seeded_runs_reproduce_loss_curve(self, tmp_path, demo_record):
        from dare.training import TrainConfig, train

        cfg = TrainConfig(epochs=3, batch_size=16, learning_rate=1e-4, seed=9)
        r1 = train([demo_record], cfg, tmp_path / "a")
        r2 = train([demo_record], cfg, tmp_path / "b")
        np.testing.assert_allclose(r1.epoch_losses, r2.epoch_losses, rtol=1e-6)

    def test_empty_dataset_rejected(self, tmp_path):
        from dare.training import TrainConfig, train

        with pytest.raises(ValueError):
            train([], TrainConfig(epochs=1), tmp_path)

    @pytest.mark.slow
    def test_single_sample_overfit_converges(self, tmp_path, demo_record):
        from dare.checkpoint import load_checkpoint
        from dare.diffusion import build_schedule, training_loss
        from dare.training import TrainConfig, _encode_snapshots, prepare_dataset, train

        record = DemonstrationRecord(
            demo_record.env_seed,
            demo_record.d_n,
            demo_record.resolution,
            demo_record.sensor_range,
            demo_record.ray_count,
            demo_record.oracle_cost,
            demo_record.distance,
            steps=demo_record.steps[:1],
        )
        cfg = TrainConfig(epochs=500, batch_size=64, learning_rate=2e-3, seed=1)
        train([record], cfg, tmp_path)
        encoder, predictor, _ = load_checkpoint(tmp_path / "last.ckpt")
        schedule = build_schedule(cfg.denoise_steps)
        dataset = prepare_dataset([record], cfg)
        window = dataset.windows[0]
        torch.manual_seed(7)
        with torch.no_grad():
            belief = _encode_snapshots(dataset, [(0, 0), (0, 0)] * 256, encoder)
            conditioning = belief.reshape(256, 2, -1)
            target = torch.as_tensor(np.stack([window.target] * 256))
            losses = [
                float(
                    training_loss(
                        predictor,
                        conditioning,
                        target,
                        torch.randint(1, 101, (256,)),
                        torch.randn(256, 8, 10),
                        schedule,
                    )
                )
                for _ in range(8)
            ]
        assert np.mean(losses) < 0.01
