"""Learning-signal construction from interactions, the policy-gradient
objective with inverse propensity scoring, and round training schedules.

Positive examples train exactly like supervised data; negative examples
carry an IPS weight, the ratio of the current model's probability to the
probability under the parameters that generated the instruction.  The
weight is frozen per gradient step so no gradient flows through it.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

import numpy as np

from . import diffkit, genmodel, hexworld
from .diffkit import OptimState, ParamStore, clip_global_norm, grad
from .genmodel import ModelConfig, PlanFeatures
from .hexworld import Cell, Pose, WorldState, toggled_cells
from .planner import Plan

VARIANTS = ("full", "pos-only", "tc-only")


@dataclass
class Example:
    state: WorldState
    poses: tuple[Pose, ...]  # the plan given to the model (rho)
    target_cards: frozenset[Cell]
    token_ids: tuple[int, ...]
    y: int  # +1 or -1
    behavior_logprob: float
    provenance: str
    _feats: PlanFeatures | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.y not in (-1, 1):
            raise ValueError("label must be +1 or -1")

    @property
    def plan(self) -> Plan:
        return Plan(
            start=self.poses[0], poses=self.poses, target_cards=self.target_cards
        )

    def features(self, crop_side: int) -> PlanFeatures:
        if self._feats is None:
            self._feats = PlanFeatures.from_state_plan(
                self.state, self.plan, crop_side
            )
        return self._feats


@dataclass
class RoundDataset:
    round_index: int
    examples: list[Example]


def plan_match(plan: Plan, exec_poses: tuple[Pose, ...], state: WorldState) -> bool:
    """Did the execution accomplish the plan?  Card plans compare toggled
    card sets only; 0-card plans require ending on the start cell."""
    assert exec_poses[0].cell == plan.start.cell
    if plan.target_cards:
        return toggled_cells(state, list(exec_poses)) == plan.target_cards
    return exec_poses[-1].cell == plan.start.cell


def construct_examples(rec, variant: str = "full") -> list[Example]:
    """Examples from one completed interaction, per the three heuristics.

    `rec` needs: state, plan, token_ids, exec_poses, feedback
    (perceived_correct, grammatical), behavior_logprob, record_id.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    plan: Plan = rec.plan
    state: WorldState = rec.state
    matched = plan_match(plan, rec.exec_poses, state)

    def make(poses, targets, y):
        return Example(
            state=state,
            poses=tuple(poses),
            target_cards=frozenset(targets),
            token_ids=tuple(rec.token_ids),
            y=y,
            behavior_logprob=rec.behavior_logprob,
            provenance=rec.record_id,
        )

    if variant == "tc-only":
        return [make(plan.poses, plan.target_cards, 1 if matched else -1)]

    fb = rec.feedback
    if not (fb.perceived_correct and fb.grammatical):
        if variant == "pos-only":
            return []
        return [make(plan.poses, plan.target_cards, -1)]
    exec_targets = toggled_cells(state, list(rec.exec_poses))
    out = [make(rec.exec_poses, exec_targets, 1)]
    # never a negative from the execution; the plan joins only on a match,
    # and only once when the execution is pose-identical to the plan
    if matched and tuple(rec.exec_poses) != tuple(plan.poses):
        out.append(make(plan.poses, plan.target_cards, 1))
    return out


# ---------------------------------------------------------------------------
# objectives


def _logprob_batch(params: ParamStore, config: ModelConfig, examples) -> diffkit.Tensor:
    feats = [ex.features(config.crop_side) for ex in examples]
    ids = [ex.token_ids for ex in examples]
    return genmodel.sequence_logprob_batch(params, config, feats, ids)


def supervised_loss(
    params: ParamStore, config: ModelConfig, examples: list[Example]
) -> diffkit.Tensor:
    """Mean negative log-likelihood; positives only."""
    if any(ex.y != 1 for ex in examples):
        raise ValueError("supervised loss accepts only positive labels")
    return -_logprob_batch(params, config, examples).mean()


def ips_weight(example: Example, params: ParamStore, config: ModelConfig) -> float:
    if example.y == 1:
        return 1.0
    lp = genmodel.sequence_logprob(
        params, config, example.state, example.plan, example.token_ids
    )
    return float(np.exp(lp - example.behavior_logprob))


def _frozen_weights(
    params: ParamStore,
    config: ModelConfig,
    examples: list[Example],
    use_ips: bool,
    ips_clip: float | None,
) -> np.ndarray:
    """Per-example ell, computed without building a gradient graph."""
    weights = np.ones(len(examples))
    negatives = [i for i, ex in enumerate(examples) if ex.y == -1]
    if negatives and use_ips:
        with diffkit.no_grad():
            lp = _logprob_batch(
                params, config, [examples[i] for i in negatives]
            ).value
        for j, i in enumerate(negatives):
            w = float(np.exp(lp[j] - examples[i].behavior_logprob))
            if ips_clip is not None:
                w = min(w, ips_clip)
            weights[i] = w
    return weights


def bandit_objective(
    params: ParamStore,
    config: ModelConfig,
    examples: list[Example],
    use_ips: bool = True,
    ips_clip: float | None = None,
) -> diffkit.Tensor:
    """(1/|D|) sum of ell * y * log P, with ell frozen.  The training step
    ascends this objective (descends its negation)."""
    if not examples:
        raise ValueError("dataset must be nonempty")
    weights = _frozen_weights(params, config, examples, use_ips, ips_clip)
    coef = weights * np.array([ex.y for ex in examples], dtype=np.float64)
    logp = _logprob_batch(params, config, examples)
    return (logp * diffkit.constant(coef)).sum() * (1.0 / len(examples))


def bandit_grad(
    params: ParamStore,
    config: ModelConfig,
    examples: list[Example],
    use_ips: bool = True,
    ips_clip: float | None = None,
) -> dict[str, np.ndarray]:
    obj = bandit_objective(params, config, examples, use_ips, ips_clip)
    try:
        return grad(obj, params)
    except FloatingPointError as err:
        ids = [ex.provenance for ex in examples]
        raise FloatingPointError(f"{err} (examples {ids})") from err


# ---------------------------------------------------------------------------
# round training


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 2e-3
    weight_decay: float = 0.01
    clip_norm: float = 5.0
    use_ips: bool = True
    ips_clip: float | None = None


def epoch_batches(
    examples: list[Example],
    batch_size: int,
    rng: random.Random,
    rehearsal_pool: list[Example] | None = None,
):
    """Shuffled batches for one epoch; with a rehearsal pool each batch is
    half current examples, half uniform draws from the pool."""
    order = list(range(len(examples)))
    rng.shuffle(order)
    size = batch_size // 2 if rehearsal_pool else batch_size
    for lo in range(0, len(order), size):
        batch = [examples[i] for i in order[lo : lo + size]]
        if rehearsal_pool:
            batch = batch + [
                rehearsal_pool[rng.randrange(len(rehearsal_pool))]
                for _ in range(len(batch))
            ]
        yield batch


def _train(
    params: ParamStore,
    config: ModelConfig,
    examples: list[Example],
    schedule: TrainSchedule,
    seed,
    rehearsal_pool: list[Example] | None = None,
) -> ParamStore:
    rng = random.Random(f"train:{seed}")
    opt = OptimState(lr=schedule.lr, weight_decay=schedule.weight_decay)
    for _ in range(schedule.epochs):
        for batch in epoch_batches(
            examples, schedule.batch_size, rng, rehearsal_pool
        ):
            obj = bandit_objective(
                params, config, batch, schedule.use_ips, schedule.ips_clip
            )
            grads = grad(-obj, params)
            diffkit.step(params, clip_global_norm(grads, schedule.clip_norm), opt)
    return params


def train_round(
    mode: str,
    datasets: list[RoundDataset],
    ensemble: list[ParamStore],
    config: ModelConfig,
    schedule: TrainSchedule,
    member_seeds: list[int],
) -> list[ParamStore]:
    """Train a fresh ensemble from all rounds (retrain) or adapt the current
    one on the newest round with rehearsal batches (finetune_rehearsal)."""
    if not datasets or any(not d.examples for d in datasets):
        raise ValueError("datasets must be nonempty")
    if len(member_seeds) != len(ensemble):
        raise ValueError("one seed per ensemble member")
    new_members = []
    if mode == "retrain":
        pooled = [ex for d in datasets for ex in d.examples]
        for k, seed in enumerate(member_seeds):
            params = genmodel.init_params(config, seed)
            new_members.append(
                _train(params, config, pooled, schedule, seed=f"{seed}:r")
            )
    elif mode == "finetune_rehearsal":
        current = datasets[-1].examples
        pool = [ex for d in datasets[:-1] for ex in d.examples]
        for k, seed in enumerate(member_seeds):
            params = ensemble[k].copy()
            new_members.append(
                _train(
                    params,
                    config,
                    current,
                    schedule,
                    seed=f"{seed}:f",
                    rehearsal_pool=pool or None,
                )
            )
    else:
        raise ValueError(f"unknown training mode {mode!r}")
    return new_members


# ---------------------------------------------------------------------------
# persistence


def save_dataset(path, dataset: RoundDataset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            fh.write(
                json.dumps(
                    {
                        "round": dataset.round_index,
                        "state": hexworld.state_to_dict(ex.state),
                        "poses": [[p.h, p.w, p.alpha] for p in ex.poses],
                        "target_cards": sorted(ex.target_cards),
                        "token_ids": list(ex.token_ids),
                        "y": ex.y,
                        "behavior_logprob": ex.behavior_logprob,
                        "provenance": ex.provenance,
                    }
                )
                + "\n"
            )


def load_dataset(path) -> RoundDataset:
    examples = []
    round_index = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            d = json.loads(line)
            round_index = d["round"]
            examples.append(
                Example(
                    state=hexworld.state_from_dict(d["state"]),
                    poses=tuple(Pose(*p) for p in d["poses"]),
                    target_cards=frozenset(tuple(c) for c in d["target_cards"]),
                    token_ids=tuple(d["token_ids"]),
                    y=d["y"],
                    behavior_logprob=d["behavior_logprob"],
                    provenance=d["provenance"],
                )
            )
    return RoundDataset(round_index=round_index, examples=examples)
