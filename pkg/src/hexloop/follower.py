"""Simulated follower: executes instructions by parsing the synthetic
language under configurable noise, decides termination, and answers the two
post-execution feedback questions.

Feedback is computed only from the instruction, the follower's observation,
and its own execution; the hidden plan is never an input.
"""
from __future__ import annotations

import random
from dataclasses import dataclass

from . import hexworld
from .hexworld import FOLLOWER, Cell, Observation, Pose, WorldState, observe
from .planner import (
    UnreachableTargetError,
    _path_leg,
    _reentry_leg,
    actions_for_path,
    cell_distances,
)
from .synthlang import (
    CardIntent,
    Instruction,
    NavIntent,
    ParsedIntent,
    TurnAroundIntent,
    WaitIntent,
    grammar_check,
    parse,
)

_COUNT_WORDS = {"one", "two", "three"}
_COLOR_WORDS = {"red", "green", "blue"}
# plural stays plural so the corruption changes meaning, not grammaticality
_SHAPE_WORDS_SG = {"star", "heart", "diamond"}
_SHAPE_WORDS_PL = {"stars", "hearts", "diamonds"}


@dataclass(frozen=True)
class CompetenceProfile:
    parse_noise: float = 0.0  # chance of misreading one descriptor token
    move_noise: float = 0.0  # per-step chance of a random legal action
    give_up: float = 1.0  # on parse failure: terminate vs. explore
    feedback_noise: float = 0.0  # chance of flipping each feedback answer
    explore_steps: int = 0  # exploration budget when not giving up

    def validate(self) -> None:
        for name in ("parse_noise", "move_noise", "give_up", "feedback_noise"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")


PROFILES = {
    "expert": CompetenceProfile(),
    "typical": CompetenceProfile(
        parse_noise=0.05,
        move_noise=0.02,
        give_up=0.6,
        feedback_noise=0.03,
        explore_steps=8,
    ),
    "noisy": CompetenceProfile(
        parse_noise=0.15,
        move_noise=0.08,
        give_up=0.4,
        feedback_noise=0.1,
        explore_steps=12,
    ),
}


@dataclass(frozen=True)
class Feedback:
    perceived_correct: bool
    grammatical: bool


@dataclass(frozen=True)
class ExecutionResult:
    poses: tuple[Pose, ...]
    feedback: Feedback
    terminated: bool
    end_state: WorldState


def _corrupt_descriptor(x: Instruction, rng: random.Random) -> Instruction:
    """Misread one descriptor token (count/color/shape) as another of its class."""
    slots = []
    for i, tok in enumerate(x):
        for cls in (_COUNT_WORDS, _COLOR_WORDS, _SHAPE_WORDS_SG, _SHAPE_WORDS_PL):
            if tok in cls:
                slots.append((i, cls))
    if not slots:
        return x
    i, cls = rng.choice(slots)
    options = sorted(cls - {x[i]})
    out = list(x)
    out[i] = rng.choice(options)
    return tuple(out)


def _random_step(
    state: WorldState, rng: random.Random
) -> tuple[WorldState, Pose | None]:
    legal = hexworld.legal_actions(state, FOLLOWER)
    if not legal:
        return state, None
    action = rng.choice(legal)
    state, ok = hexworld.apply_action(state, FOLLOWER, action)
    assert ok
    return state, state.follower_pose


def _walk_to(
    state: WorldState,
    goal: Cell,
    avoid_cards_except: Cell | None,
    profile: CompetenceProfile,
    rng: random.Random,
    poses: list[Pose],
    reenter: bool = False,
) -> tuple[WorldState, bool]:
    """Walk toward goal, replanning after noise steps.  Returns (state, reached).

    With `reenter`, starting on the goal cell does not count: the follower
    must leave and come back (the entry performs the card toggle)."""
    left = not (reenter and state.follower_pose.cell == goal)
    for _ in range(400):
        if state.turn != FOLLOWER:
            return state, False
        if state.follower_pose.cell == goal and left:
            return state, True
        blocked = frozenset(
            c for c in state.cards if c != avoid_cards_except
        ) | {state.leader_pose.cell}
        try:
            if state.follower_pose.cell == goal:
                leg = _reentry_leg(state, state.follower_pose, blocked)
            else:
                leg = _path_leg(state, state.follower_pose, goal, blocked)
        except UnreachableTargetError:
            return state, False
        actions = actions_for_path(leg)
        advanced = False
        for action in actions:
            if state.turn != FOLLOWER:
                return state, False
            if profile.move_noise > 0 and rng.random() < profile.move_noise:
                state, pose = _random_step(state, rng)
                if pose is not None:
                    poses.append(pose)
                    if pose.cell != goal:
                        left = True
                    elif left:
                        return state, True
                advanced = True
                break  # replan from the new pose
            state, ok = hexworld.apply_action(state, FOLLOWER, action)
            if not ok:
                break
            advanced = True
            poses.append(state.follower_pose)
            if state.follower_pose.cell != goal:
                left = True
            elif left:
                return state, True
        if not advanced:
            return state, False
    return state, False


def _nav_goal(state: WorldState, landmark_cell: Cell) -> Cell | None:
    """Passable cell adjacent to the landmark, nearest to the follower."""
    dists = cell_distances(state, state.follower_pose.cell)
    options = [
        hexworld.neighbor(landmark_cell, alpha) for alpha in range(6)
    ]
    options = [
        c
        for c in options
        if hexworld.is_passable(state, c) and c not in state.cards and c in dists
    ]
    if not options:
        return None
    return min(options, key=lambda c: (dists[c], c))


def execute(
    state: WorldState,
    x: Instruction,
    profile: CompetenceProfile,
    seed: int,
) -> ExecutionResult:
    """Execute an instruction as the follower; deterministic given the seed."""
    profile.validate()
    assert state.turn == FOLLOWER, "execute requires the follower's turn"
    rng = random.Random(f"follower:{seed}")
    start = state.follower_pose
    poses: list[Pose] = [start]

    grammatical = grammar_check(x)
    x_eff = x
    if profile.parse_noise > 0 and rng.random() < profile.parse_noise:
        x_eff = _corrupt_descriptor(x, rng)
    obs: Observation = observe(state)
    result = parse(obs, start, x_eff)

    terminated = False
    achieved = False
    if isinstance(result, ParsedIntent):
        achieved = True
        for clause in result.clauses:
            if state.turn != FOLLOWER:
                achieved = False
                break
            if isinstance(clause, WaitIntent):
                continue
            if isinstance(clause, TurnAroundIntent):
                for _ in range(3):
                    state, ok = hexworld.apply_action(state, FOLLOWER, "turn-left")
                    if ok:
                        poses.append(state.follower_pose)
                continue
            if isinstance(clause, NavIntent):
                goal = _nav_goal(state, clause.landmark_cell)
                if goal is not None:
                    state, _ = _walk_to(state, goal, None, profile, rng, poses)
                continue
            assert isinstance(clause, CardIntent)
            if clause.cell not in state.cards:
                achieved = False  # card vanished (set completed early)
                continue
            state, reached = _walk_to(
                state, clause.cell, clause.cell, profile, rng, poses, reenter=True
            )
            if not reached:
                achieved = False
    else:
        terminated = True
        if rng.random() >= profile.give_up and profile.explore_steps > 0:
            for _ in range(profile.explore_steps):
                if state.turn != FOLLOWER:
                    break
                state, pose = _random_step(state, rng)
                if pose is None:
                    break
                poses.append(pose)

    perceived = isinstance(result, ParsedIntent) and achieved
    if profile.feedback_noise > 0:
        if rng.random() < profile.feedback_noise:
            perceived = not perceived
        if rng.random() < profile.feedback_noise:
            grammatical = not grammatical
    return ExecutionResult(
        poses=tuple(poses),
        feedback=Feedback(perceived_correct=perceived, grammatical=grammatical),
        terminated=terminated,
        end_state=state,
    )
