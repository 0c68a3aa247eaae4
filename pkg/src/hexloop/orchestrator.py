"""The continual-learning loop: deploy an ensemble, collect interactions
from a follower (simulated here, human via the HTTP service), construct the
round dataset, train, evaluate, and persist everything under a run
directory.

The model is never updated during a collection phase; each interaction
draws its own RNG streams from (round, interaction, purpose) so collection
order cannot affect outcomes.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import bandit, diffkit, follower, genmodel, hexworld, metrics, synthlang
from .bandit import RoundDataset, TrainSchedule, construct_examples
from .follower import CompetenceProfile, Feedback
from .genmodel import ModelConfig, SampledInstruction
from .hexworld import FOLLOWER, LEADER, Pose, WorldConfig, WorldState
from .planner import Plan, ReplanImpossibleError, UnreachableTargetError, make_plan

VARIANTS = ("full", "pos-only", "tc-only", "no-ensemble", "fine-tune")
SCHEMA_VERSION = 1


def stable_seed(*parts) -> int:
    """Deterministic across processes, unlike built-in string hashing."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:4], "big")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "run"
    variant: str = "full"
    rounds: int = 6
    interactions: int = 100
    ensemble_size: int = 2
    follower_source: str = "sim"
    profile: str = "typical"
    seed: int = 0
    d0_size: int = 500
    tau: float = 0.5
    init_epochs: int = 4
    world: WorldConfig = field(default_factory=WorldConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.rounds < 1 or self.interactions < 1:
            raise ValueError("rounds and interactions must be >= 1")
        if self.variant == "no-ensemble" and self.ensemble_size != 1:
            raise ValueError("no-ensemble requires ensemble size 1")
        if self.profile not in follower.PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")

    @property
    def example_variant(self) -> str:
        return self.variant if self.variant in ("pos-only", "tc-only") else "full"

    @property
    def train_mode(self) -> str:
        return "finetune_rehearsal" if self.variant == "fine-tune" else "retrain"

    @property
    def member_seeds(self) -> list[int]:
        return [self.seed * 1000 + k for k in range(self.ensemble_size)]


def default_model_config(tempered_ips: bool = False) -> ModelConfig:
    vocab = synthlang.default_vocabulary()
    return ModelConfig(
        vocab_size=vocab.size,
        pad_id=vocab.pad_id,
        bos_id=vocab.bos_id,
        eos_id=vocab.eos_id,
        ips_tempered=tempered_ips,
    )


@dataclass
class InteractionRecord:
    record_id: str
    round_index: int
    interaction_index: int
    game_index: int
    instruction_index: int
    state: WorldState  # follower-turn state the instruction was issued in
    plan: Plan
    leader_actions: tuple[str, ...]
    token_ids: tuple[int, ...]
    tokens: tuple[str, ...]
    model_index: int
    behavior_logprob: float
    exec_poses: tuple[Pose, ...]
    feedback: Feedback
    terminated: bool
    score_after: int
    elapsed_s: float

    @property
    def exec_targets(self):
        return hexworld.toggled_cells(self.state, list(self.exec_poses))


class SimFollower:
    """Follower interface backed by the noise-model simulator."""

    def __init__(self, profile: CompetenceProfile):
        self.profile = profile

    def execute(self, state, tokens, seed):
        return follower.execute(state, tokens, self.profile, seed)


def advance_to_follower_turn(state: WorldState):
    """Leader plans and executes its own leg; returns the follower-turn
    state along with the leader actions and the follower plan."""
    assert state.turn == LEADER
    leader_actions, plan = make_plan(state)
    executed = []
    for action in leader_actions:
        if state.turn != LEADER:
            break  # move budget exhausted; the rest waits for a later turn
        state, ok = hexworld.apply_action(state, LEADER, action)
        if not ok:
            break
        executed.append(action)
    if state.turn == LEADER:
        state = hexworld.pass_turn(state)
    return state, executed, plan


def run_interaction(
    ensemble,
    model_config: ModelConfig,
    config: ExperimentConfig,
    round_index: int,
    game_index: int,
    world_seed: int,
    follower_agent,
    start_interaction: int,
) -> list[InteractionRecord]:
    """Play one full game; one record per generated instruction."""
    vocab = synthlang.default_vocabulary()
    state = hexworld.new_world(world_seed, config.world)
    records: list[InteractionRecord] = []
    instruction_index = 0
    while state.turns_left >= 2:
        try:
            state, leader_actions, plan = advance_to_follower_turn(state)
        except (ReplanImpossibleError, UnreachableTargetError):
            break
        t0 = time.monotonic()
        seed = f"{config.seed}:{round_index}:{game_index}:{instruction_index}"
        sampled = genmodel.ensemble_sample(
            ensemble, model_config, state, plan, config.tau, seed
        )
        tokens = tuple(vocab.decode(sampled.token_ids))
        result = follower_agent.execute(state, tokens, seed=seed)
        interaction_index = start_interaction + len(records)
        records.append(
            InteractionRecord(
                record_id=f"r{round_index}-i{interaction_index}",
                round_index=round_index,
                interaction_index=interaction_index,
                game_index=game_index,
                instruction_index=instruction_index,
                state=state,
                plan=plan,
                leader_actions=tuple(leader_actions),
                token_ids=sampled.token_ids,
                tokens=tokens,
                model_index=sampled.model_index,
                behavior_logprob=sampled.logprob_behavior,
                exec_poses=result.poses,
                feedback=result.feedback,
                terminated=result.terminated,
                score_after=result.end_state.score,
                elapsed_s=time.monotonic() - t0,
            )
        )
        state = result.end_state
        if state.turn == FOLLOWER:
            state = hexworld.pass_turn(state)
        instruction_index += 1
    return records


def collect_interactions(
    ensemble,
    model_config: ModelConfig,
    config: ExperimentConfig,
    round_index: int,
    count: int,
    follower_agent=None,
    seed_salt: str = "",
) -> list[InteractionRecord]:
    """Whole games until at least `count` records exist."""
    if follower_agent is None:
        follower_agent = SimFollower(follower.PROFILES[config.profile])
    records: list[InteractionRecord] = []
    game = 0
    while len(records) < count:
        world_seed = stable_seed(
            config.seed, seed_salt, round_index, game, "world"
        )
        try:
            records.extend(
                run_interaction(
                    ensemble,
                    model_config,
                    config,
                    round_index,
                    game,
                    world_seed,
                    follower_agent,
                    start_interaction=len(records),
                )
            )
        except hexworld.WorldGenError:
            pass
        game += 1
    return records


# ---------------------------------------------------------------------------
# dataset construction and reporting


def build_round_dataset(
    records: list[InteractionRecord], round_index: int, variant: str
) -> RoundDataset:
    examples = []
    for rec in records:
        examples.extend(construct_examples(rec, variant))
    return RoundDataset(round_index=round_index, examples=examples)


def report_from_records(
    records: list[InteractionRecord], dataset: RoundDataset, round_index: int
) -> metrics.RoundReport:
    completions = []
    by_cards: dict[int, list[bool]] = {k: [] for k in range(4)}
    emds = []
    for rec in records:
        done = metrics.task_completion(rec.plan, rec.exec_poses, rec.state)
        completions.append(done)
        by_cards.setdefault(min(len(rec.plan.target_cards), 3), []).append(done)
        emds.append(
            metrics.emd(
                metrics.path_to_distribution(rec.plan.poses),
                metrics.path_to_distribution(rec.exec_poses),
            )
        )
    games: dict[int, int] = {}
    for rec in records:
        games[rec.game_index] = max(
            games.get(rec.game_index, 0), rec.score_after
        )
    mean_len, vocab_size = metrics.language_stats([rec.tokens for rec in records])
    n = len(records)
    return metrics.RoundReport(
        round_index=round_index,
        completion_rate=sum(completions) / n,
        completion_by_cards={
            k: (sum(v) / len(v) if v else -1.0) for k, v in by_cards.items()
        },
        mean_emd=sum(emds) / n,
        perceived_correct_rate=sum(
            1 for r in records if r.feedback.perceived_correct
        )
        / n,
        grammatical_rate=sum(1 for r in records if r.feedback.grammatical) / n,
        mean_score=sum(games.values()) / max(len(games), 1),
        mean_instruction_length=mean_len,
        vocab_size=vocab_size,
        num_positive=sum(1 for ex in dataset.examples if ex.y == 1),
        num_negative=sum(1 for ex in dataset.examples if ex.y == -1),
    )


# ---------------------------------------------------------------------------
# bootstrap and initial training


def bootstrap_d0(
    count: int, seed: int, world: WorldConfig | None = None
) -> RoundDataset:
    """All-positive dataset from planner plans and verbalizer instructions."""
    if count < 1:
        raise ValueError("count must be >= 1")
    world = world or WorldConfig()
    vocab = synthlang.default_vocabulary()
    examples = []
    world_seed = 0
    while len(examples) < count:
        world_seed += 1
        try:
            state = hexworld.new_world(stable_seed(seed, world_seed, "d0"), world)
            state, _, plan = advance_to_follower_turn(state)
        except (hexworld.WorldGenError, ReplanImpossibleError, UnreachableTargetError):
            continue
        tokens = synthlang.verbalize(state, plan, style_seed=world_seed)
        examples.append(
            bandit.Example(
                state=state,
                poses=plan.poses,
                target_cards=plan.target_cards,
                token_ids=tuple(vocab.encode(tokens)),
                y=1,
                behavior_logprob=0.0,
                provenance=f"d0-{len(examples)}",
            )
        )
    return RoundDataset(round_index=0, examples=examples)


def train_initial_ensemble(
    d0: RoundDataset, config: ExperimentConfig, model_config: ModelConfig
) -> list:
    schedule = replace(config.schedule, epochs=config.init_epochs)
    blank = [genmodel.init_params(model_config, s) for s in config.member_seeds]
    return bandit.train_round(
        "retrain", [d0], blank, model_config, schedule, config.member_seeds
    )


# ---------------------------------------------------------------------------
# persistence


def round_dir(out_dir, round_index: int) -> Path:
    return Path(out_dir) / f"round-{round_index}"


def save_records(path, records: list[InteractionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "schema_version": SCHEMA_VERSION,
                        "record_id": rec.record_id,
                        "round": rec.round_index,
                        "interaction": rec.interaction_index,
                        "game": rec.game_index,
                        "instruction": rec.instruction_index,
                        "state": hexworld.state_to_dict(rec.state),
                        "plan_poses": [[p.h, p.w, p.alpha] for p in rec.plan.poses],
                        "plan_targets": sorted(rec.plan.target_cards),
                        "leader_actions": list(rec.leader_actions),
                        "token_ids": list(rec.token_ids),
                        "tokens": list(rec.tokens),
                        "model_index": rec.model_index,
                        "behavior_logprob": rec.behavior_logprob,
                        "exec_poses": [[p.h, p.w, p.alpha] for p in rec.exec_poses],
                        "perceived_correct": rec.feedback.perceived_correct,
                        "grammatical": rec.feedback.grammatical,
                        "terminated": rec.terminated,
                        "score_after": rec.score_after,
                        "elapsed_s": rec.elapsed_s,
                    }
                )
                + "\n"
            )


def load_records(path) -> list[InteractionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            d = json.loads(line)
            poses = tuple(Pose(*p) for p in d["plan_poses"])
            records.append(
                InteractionRecord(
                    record_id=d["record_id"],
                    round_index=d["round"],
                    interaction_index=d["interaction"],
                    game_index=d["game"],
                    instruction_index=d["instruction"],
                    state=hexworld.state_from_dict(d["state"]),
                    plan=Plan(
                        start=poses[0],
                        poses=poses,
                        target_cards=frozenset(
                            tuple(c) for c in d["plan_targets"]
                        ),
                    ),
                    leader_actions=tuple(d["leader_actions"]),
                    token_ids=tuple(d["token_ids"]),
                    tokens=tuple(d["tokens"]),
                    model_index=d["model_index"],
                    behavior_logprob=d["behavior_logprob"],
                    exec_poses=tuple(Pose(*p) for p in d["exec_poses"]),
                    feedback=Feedback(d["perceived_correct"], d["grammatical"]),
                    terminated=d["terminated"],
                    score_after=d["score_after"],
                    elapsed_s=d["elapsed_s"],
                )
            )
    return records


def save_ensemble(dir_path, ensemble, model_config: ModelConfig) -> None:
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    meta = {
        "model": {
            "vocab_size": model_config.vocab_size,
            "pad_id": model_config.pad_id,
            "bos_id": model_config.bos_id,
            "eos_id": model_config.eos_id,
            "prop_width": model_config.prop_width,
            "cell_width": model_config.cell_width,
            "crop_side": model_config.crop_side,
            "orient_width": model_config.orient_width,
            "width": model_config.width,
            "heads": model_config.heads,
            "mlp_width": model_config.mlp_width,
            "max_len": model_config.max_len,
            "ips_tempered": model_config.ips_tempered,
        }
    }
    for k, member in enumerate(ensemble):
        diffkit.save_checkpoint(dir_path / f"member-{k}.npz", member, meta=meta)


def load_ensemble(dir_path):
    dir_path = Path(dir_path)
    members = []
    meta = None
    for path in sorted(dir_path.glob("member-*.npz")):
        params, _, m = diffkit.load_checkpoint(path)
        members.append(params)
        meta = m
    if not members:
        raise FileNotFoundError(f"no checkpoints under {dir_path}")
    return members, ModelConfig(**meta["model"])


# ---------------------------------------------------------------------------
# rounds


def run_round(
    config: ExperimentConfig,
    round_index: int,
    datasets: list[RoundDataset],
    ensemble,
    model_config: ModelConfig,
    out_dir=None,
    follower_agent=None,
):
    """One deploy-collect-train cycle.  Returns (dataset, ensemble, report);
    on training divergence the prior ensemble is kept."""
    records = collect_interactions(
        ensemble,
        model_config,
        config,
        round_index,
        config.interactions,
        follower_agent,
    )
    dataset = build_round_dataset(records, round_index, config.example_variant)
    report = report_from_records(records, dataset, round_index)
    new_ensemble = ensemble
    if dataset.examples:
        try:
            new_ensemble = bandit.train_round(
                config.train_mode,
                datasets + [dataset],
                ensemble,
                model_config,
                config.schedule,
                config.member_seeds,
            )
        except FloatingPointError as err:
            print(f"round {round_index}: training aborted ({err}); keeping ensemble")
    if out_dir is not None:
        rd = round_dir(out_dir, round_index)
        rd.mkdir(parents=True, exist_ok=True)
        save_records(rd / "records.jsonl", records)
        bandit.save_dataset(rd / "dataset.jsonl", dataset)
        save_ensemble(rd / "checkpoints", new_ensemble, model_config)
        metrics.write_report_csv(rd / "report.csv", [report])
    return dataset, new_ensemble, report


def run_experiment(
    config: ExperimentConfig,
    out_dir=None,
    model_config: ModelConfig | None = None,
    follower_agent=None,
):
    """Bootstrap, train the initial ensemble, then run all rounds.  Returns
    (datasets, final ensemble, reports)."""
    model_config = model_config or default_model_config()
    d0 = bootstrap_d0(config.d0_size, config.seed, config.world)
    ensemble = train_initial_ensemble(d0, config, model_config)
    if out_dir is not None:
        rd = round_dir(out_dir, 0)
        rd.mkdir(parents=True, exist_ok=True)
        bandit.save_dataset(rd / "dataset.jsonl", d0)
        save_ensemble(rd / "checkpoints", ensemble, model_config)
    datasets = [d0]
    reports = []
    for r in range(1, config.rounds + 1):
        dataset, ensemble, report = run_round(
            config, r, datasets, ensemble, model_config, out_dir, follower_agent
        )
        datasets.append(dataset)
        reports.append(report)
    if out_dir is not None:
        metrics.write_report_csv(Path(out_dir) / "report.csv", reports)
    return datasets, ensemble, reports


def evaluate_ensemble(
    ensemble,
    model_config: ModelConfig,
    config: ExperimentConfig,
    round_index: int,
    count: int,
    follower_agent=None,
) -> metrics.RoundReport:
    """Collection without training, for frozen-checkpoint evaluation."""
    records = collect_interactions(
        ensemble,
        model_config,
        config,
        round_index,
        count,
        follower_agent,
        seed_salt="eval",
    )
    dataset = build_round_dataset(records, round_index, config.example_variant)
    return report_from_records(records, dataset, round_index)
