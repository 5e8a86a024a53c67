"""Planner comparison: paired episodes, summary statistics, CSV report."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .actions import HorizonConfig
from .episode import EpisodeResult, SimConfig, make_planner, run_episode

# Published reference distances (meters, mean and std on the authors' 100
# large-map scenarios); desk-scale numbers are expected to differ.
PAPER_REFERENCE = {
    "nearest": (652.0, 76.0),
    "utility": (585.0, 79.0),
    "optimal": (499.0, 61.0),
}


@dataclass
class PlannerSummary:
    name: str
    mean: float
    std: float
    completed: int
    episodes: int
    paired_mean: float  # over seeds completed by every planner
    gap_to_optimal: float | None
    win_rate_vs_reference: float | None
    p_value_vs_reference: float | None
    zero_variance_pairing: bool = False


@dataclass
class ComparisonReport:
    planners: list[str]
    seeds: list[int]
    reference: str
    results: dict[str, list[EpisodeResult]]
    summaries: list[PlannerSummary]
    paired_seeds: list[int]
    incomplete: list[tuple[str, int]] = field(default_factory=list)


def compare(
    planner_names: list[str],
    seeds: list[int],
    sim: SimConfig = SimConfig(),
    horizon: HorizonConfig = HorizonConfig(),
    checkpoint=None,
    reference: str | None = None,
) -> ComparisonReport:
    """Run every planner on the identical seed list and aggregate.

    Incomplete episodes stay in the raw results but are excluded from the
    paired statistics (and flagged). The one-tailed paired t-test reports,
    per planner, the p-value of the hypothesis that its travel distance
    exceeds the reference planner's.
    """
    if len(planner_names) < 2 or len(seeds) < 2:
        raise ValueError("compare needs at least two planners and two seeds")
    if len(set(planner_names)) != len(planner_names):
        raise ValueError("duplicate planner names")
    reference = reference or planner_names[0]
    if reference not in planner_names:
        raise ValueError(f"reference {reference!r} not among planners")

    results: dict[str, list[EpisodeResult]] = {}
    for name in planner_names:
        episodes = []
        for seed in seeds:
            planner = make_planner(name, checkpoint=checkpoint)
            episodes.append(run_episode(planner, seed, sim, horizon))
        results[name] = episodes

    incomplete = [
        (name, ep.seed)
        for name in planner_names
        for ep in results[name]
        if not ep.completed
    ]
    paired_seeds = [
        seed
        for i, seed in enumerate(seeds)
        if all(results[name][i].completed for name in planner_names)
    ]
    paired_idx = [i for i, seed in enumerate(seeds) if seed in set(paired_seeds)]

    def paired_distances(name):
        return np.array([results[name][i].distance_m for i in paired_idx])

    oracle_paired = paired_distances("oracle") if "oracle" in planner_names else None
    ref_paired = paired_distances(reference)

    summaries = []
    for name in planner_names:
        eps = results[name]
        dists = np.array([e.distance_m for e in eps])
        paired = paired_distances(name)
        gap = None
        if oracle_paired is not None and len(oracle_paired) and oracle_paired.mean() > 0:
            gap = float((paired.mean() - oracle_paired.mean()) / oracle_paired.mean())
        win = p_value = None
        zero_var = False
        if name != reference and len(paired) >= 2:
            win = float(np.mean(paired < ref_paired))
            diffs = paired - ref_paired
            if np.allclose(diffs, diffs[0]):
                zero_var = True
                p_value = math.nan
            else:
                p_value = float(
                    stats.ttest_rel(paired, ref_paired, alternative="greater").pvalue
                )
        summaries.append(
            PlannerSummary(
                name=name,
                mean=float(dists.mean()),
                std=float(dists.std()),
                completed=int(sum(e.completed for e in eps)),
                episodes=len(eps),
                paired_mean=float(paired.mean()) if len(paired) else math.nan,
                gap_to_optimal=gap,
                win_rate_vs_reference=win,
                p_value_vs_reference=p_value,
                zero_variance_pairing=zero_var,
            )
        )
    return ComparisonReport(
        planner_names, list(seeds), reference, results, summaries, paired_seeds, incomplete
    )


def first_action_agreement(records, checkpoint_path, seed: int = 0, samples: int = 7) -> float:
    """Fraction of recorded expert states where the policy's first decoded
    action (majority over its sampled sequences, as executed by the
    planner) reproduces the expert's action."""
    import torch

    from .actions import action_indices
    from .checkpoint import load_checkpoint
    from .diffusion import build_schedule, denoise
    from .policy import vote_on_first_action
    from .training import TrainConfig, _encode_snapshots, prepare_dataset

    encoder, predictor, extra = load_checkpoint(checkpoint_path)
    encoder.eval()
    predictor.eval()
    horizon = predictor.cfg.horizon
    schedule = build_schedule(int(extra.get("denoise_steps", 100)))
    cfg = TrainConfig(horizon=horizon, encoder=encoder.cfg, predictor=predictor.cfg)
    dataset = prepare_dataset(records, cfg)

    matches = 0
    for w in dataset.windows:
        refs = [(w.record_index, s) for s in w.snapshot_steps]
        with torch.no_grad():
            belief = _encode_snapshots(dataset, refs, encoder)
        conditioning = belief.reshape(1, horizon.observation, -1).repeat(samples, 1, 1)
        generator = torch.Generator()
        generator.manual_seed(
            int(np.random.SeedSequence((seed, w.record_index, w.step)).generate_state(1)[0])
        )
        sequences = denoise(predictor, conditioning, schedule, generator)
        chosen = vote_on_first_action(sequences.numpy(), horizon)
        decoded = action_indices(sequences[chosen, horizon.observation - 1].numpy())
        expert = records[w.record_index].steps[w.step].action
        matches += decoded == tuple(expert)
    return matches / len(dataset.windows)


def write_csv(report: ComparisonReport, path, timing: bool = False):
    """Episode rows then a `#`-prefixed summary block.

    plan_time_s is written as 0.000000 unless timing is requested: wall
    clock would break byte-for-byte reproducibility of reruns.
    """
    lines = ["planner,seed,distance_m,steps,completed,plan_time_s"]
    for name in report.planners:
        for ep in report.results[name]:
            t = ep.plan_time_s if timing else 0.0
            lines.append(
                f"{name},{ep.seed},{ep.distance_m:.6f},{ep.steps},"
                f"{str(ep.completed).lower()},{t:.6f}"
            )
    lines.append(f"# reference {report.reference}")
    lines.append(f"# paired_seeds {len(report.paired_seeds)} of {len(report.seeds)}")
    for s in report.summaries:
        parts = [
            f"# {s.name} mean {s.mean:.3f} std {s.std:.3f}",
            f"completed {s.completed}/{s.episodes}",
            f"paired_mean {s.paired_mean:.3f}",
        ]
        if s.gap_to_optimal is not None:
            parts.append(f"gap_to_optimal {100 * s.gap_to_optimal:.1f}%")
        if s.win_rate_vs_reference is not None:
            parts.append(f"win_rate {s.win_rate_vs_reference:.3f}")
        if s.p_value_vs_reference is not None:
            parts.append(f"p_value {s.p_value_vs_reference:.6f}")
        if s.zero_variance_pairing:
            parts.append("zero_variance_pairing")
        lines.append(" ".join(parts))
    for name, seed in report.incomplete:
        lines.append(f"# incomplete {name} seed {seed}")
    lines.append(
        "# paper_reference_m nearest 652+-76 utility 585+-79 optimal 499+-61"
        " (100 scenarios, 100 m maps; desk-scale values differ)"
    )
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
