"""Deterministic planner: which cards each agent visits and the shortest
paths to visit them.  The follower's assigned path becomes the plan; the
leader's becomes a scripted action sequence.

Cost model: every action (move or turn) costs 1.  Triple selection and the
leader/follower split are costed on the cell graph (obstacles block, cards
and agents do not); actual paths are built on the (cell, orientation) graph
and avoid every card cell except the leg's destination.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

from .hexworld import (
    ACTIONS,
    Cell,
    Pose,
    WorldState,
    agent_pose,
    in_bounds,
    is_passable,
    neighbor,
    valid_triples,
)

INF = 10**9


class ReplanImpossibleError(Exception):
    """No valid triple can be completed; the game ends."""


class UnreachableTargetError(Exception):
    def __init__(self, cell: Cell):
        super().__init__(f"target cell {cell} is unreachable")
        self.cell = cell


@dataclass(frozen=True)
class Plan:
    start: Pose
    poses: tuple[Pose, ...]
    target_cards: frozenset[Cell]

    @property
    def num_cards(self) -> int:
        return len(self.target_cards)


@dataclass(frozen=True)
class SetAssignment:
    chosen_triple: tuple[Cell, Cell, Cell]
    follower_cards: frozenset[Cell]
    leader_cards: frozenset[Cell]
    deselections: frozenset[Cell]


# ---------------------------------------------------------------------------
# cell-graph distances (split costing)


def cell_distances(state: WorldState, start: Cell) -> dict[Cell, int]:
    """BFS distances on the cell graph; water and landmarks block."""
    dist = {start: 0}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        for alpha in range(6):
            nxt = neighbor(cell, alpha)
            if nxt in dist or not is_passable(state, nxt):
                continue
            dist[nxt] = dist[cell] + 1
            queue.append(nxt)
    return dist


def _split_targets(
    state: WorldState, toggles: frozenset[Cell], dist_cache: dict[Cell, dict[Cell, int]]
) -> tuple[frozenset[Cell], frozenset[Cell], int] | None:
    """Greedy assignment of required toggles to agents by marginal cell cost.

    Returns (leader_cells, follower_cells, total_cost), or None when some
    toggle is unreachable.  The leader wins cost ties.
    """

    def dists_from(cell: Cell) -> dict[Cell, int]:
        if cell not in dist_cache:
            dist_cache[cell] = cell_distances(state, cell)
        return dist_cache[cell]

    leader_end = state.leader_pose.cell
    follower_end = state.follower_pose.cell
    leader_cells: set[Cell] = set()
    follower_cells: set[Cell] = set()
    total = 0
    for cell in sorted(toggles):
        dl = dists_from(leader_end).get(cell, INF)
        df = dists_from(follower_end).get(cell, INF)
        if dl >= INF and df >= INF:
            return None
        if dl <= df:
            leader_cells.add(cell)
            leader_end = cell
            total += dl
        else:
            follower_cells.add(cell)
            follower_end = cell
            total += df
    return frozenset(leader_cells), frozenset(follower_cells), total


def required_toggles(state: WorldState, triple: tuple[Cell, Cell, Cell]) -> frozenset[Cell]:
    selected = {c for c, p in state.cards.items() if p.selected}
    return frozenset((set(triple) - selected) | (selected - set(triple)))


def ranked_assignments(state: WorldState) -> list[SetAssignment]:
    """Feasible assignments for every valid triple, cheapest first."""
    triples = valid_triples(state.cards)
    if not triples:
        raise ReplanImpossibleError("no valid triple among cards")
    dist_cache: dict[Cell, dict[Cell, int]] = {}
    selected = {c for c, p in state.cards.items() if p.selected}
    scored = []
    for triple in triples:
        toggles = required_toggles(state, triple)
        split = _split_targets(state, toggles, dist_cache)
        if split is None:
            continue
        leader_cells, follower_cells, cost = split
        scored.append(
            (
                cost,
                triple,
                SetAssignment(
                    chosen_triple=triple,
                    follower_cards=follower_cells,
                    leader_cards=leader_cells,
                    deselections=frozenset(selected - set(triple)),
                ),
            )
        )
    if not scored:
        raise ReplanImpossibleError("no valid triple is reachable")
    scored.sort(key=lambda t: (t[0], t[1]))
    return [a for _, _, a in scored]


def choose_assignment(state: WorldState) -> SetAssignment:
    return ranked_assignments(state)[0]


# ---------------------------------------------------------------------------
# (cell, orientation) shortest paths


def _step(pose: Pose, action: str) -> Pose:
    if action == "turn-left":
        return replace(pose, alpha=(pose.alpha + 1) % 6)
    if action == "turn-right":
        return replace(pose, alpha=(pose.alpha - 1) % 6)
    alpha = pose.alpha if action == "forward" else (pose.alpha + 3) % 6
    cell = neighbor(pose.cell, alpha)
    return Pose(cell[0], cell[1], pose.alpha)


def _path_leg(
    state: WorldState, start: Pose, goal: Cell, blocked: frozenset[Cell]
) -> list[Pose]:
    """Minimal-action pose path from start to goal cell (any orientation).

    Ties broken by BFS expansion preferring the lower action index.
    """
    if start.cell == goal:
        return [start]
    parent: dict[Pose, tuple[Pose, str]] = {}
    seen = {start}
    queue = deque([start])
    found: Pose | None = None
    while queue and found is None:
        pose = queue.popleft()
        for action in ACTIONS:
            nxt = _step(pose, action)
            if nxt in seen:
                continue
            if nxt.cell != pose.cell:
                if not is_passable(state, nxt.cell):
                    continue
                if nxt.cell in blocked and nxt.cell != goal:
                    continue
            seen.add(nxt)
            parent[nxt] = (pose, action)
            if nxt.cell == goal:
                found = nxt
                break
            queue.append(nxt)
    if found is None:
        raise UnreachableTargetError(goal)
    path = [found]
    while path[-1] != start:
        path.append(parent[path[-1]][0])
    return list(reversed(path))


def _reentry_leg(
    state: WorldState, start: Pose, blocked: frozenset[Cell]
) -> list[Pose]:
    """Minimal-action pose path that leaves the start cell and comes back,
    for toggling the card the agent is already standing on."""
    goal = start.cell
    parent: dict[tuple[Pose, bool], tuple[tuple[Pose, bool], str]] = {}
    seen = {(start, False)}
    queue = deque([(start, False)])
    found: tuple[Pose, bool] | None = None
    while queue and found is None:
        pose, left = queue.popleft()
        for action in ACTIONS:
            nxt = _step(pose, action)
            nxt_left = left or nxt.cell != goal
            key = (nxt, nxt_left)
            if key in seen:
                continue
            if nxt.cell != pose.cell:
                if not is_passable(state, nxt.cell):
                    continue
                if nxt.cell in blocked and nxt.cell != goal:
                    continue
            seen.add(key)
            parent[key] = ((pose, left), action)
            if nxt.cell == goal and nxt_left:
                found = key
                break
            queue.append(key)
    if found is None:
        raise UnreachableTargetError(goal)
    path = [found]
    while path[-1] != (start, False):
        path.append(parent[path[-1]][0])
    return [p for p, _ in reversed(path)]


def shortest_path(
    state: WorldState,
    start: Pose,
    targets: list[Cell],
    blocked: frozenset[Cell] = frozenset(),
) -> list[Pose]:
    """Pose path visiting targets in order; turns count as actions."""
    poses = [start]
    for goal in targets:
        leg = _path_leg(state, poses[-1], goal, blocked)
        poses.extend(leg[1:])
    return poses


def actions_for_path(poses: list[Pose]) -> list[str]:
    actions = []
    for prev, nxt in zip(poses, poses[1:]):
        for action in ACTIONS:
            if _step(prev, action) == nxt:
                actions.append(action)
                break
        else:
            raise ValueError(f"poses {prev} -> {nxt} are not one action apart")
    return actions


def _greedy_order(start: Cell, cells: frozenset[Cell], dist_cache, state) -> list[Cell]:
    def dists_from(cell: Cell) -> dict[Cell, int]:
        if cell not in dist_cache:
            dist_cache[cell] = cell_distances(state, cell)
        return dist_cache[cell]

    order = []
    current = start
    remaining = set(cells)
    while remaining:
        nxt = min(remaining, key=lambda c: (dists_from(current).get(c, INF), c))
        order.append(nxt)
        remaining.remove(nxt)
        current = nxt
    return order


def _route(
    state: WorldState,
    start: Pose,
    targets: frozenset[Cell],
    extra_blocked: frozenset[Cell],
    dist_cache: dict[Cell, dict[Cell, int]],
) -> list[Pose]:
    """Visit all targets (nearest-remaining greedy) without toggling any other
    card.  Legs may cross remaining targets; a crossing counts as the visit."""

    def dists_from(cell: Cell) -> dict[Cell, int]:
        if cell not in dist_cache:
            dist_cache[cell] = cell_distances(state, cell)
        return dist_cache[cell]

    all_cards = frozenset(state.cards)
    remaining = set(targets)
    poses = [start]
    while remaining:
        current = poses[-1].cell
        goal = min(remaining, key=lambda c: (dists_from(current).get(c, INF), c))
        blocked = (all_cards - remaining) | extra_blocked
        if goal == current:
            # standing on the card: toggling requires leaving and re-entering
            leg = _reentry_leg(state, poses[-1], blocked)
        else:
            leg = _path_leg(state, poses[-1], goal, blocked)
        entries: dict[Cell, int] = {}
        prev = leg[0].cell
        for pose in leg[1:]:
            if pose.cell != prev and pose.cell in remaining:
                entries[pose.cell] = entries.get(pose.cell, 0) + 1
            prev = pose.cell
        for cell, n in entries.items():
            if n % 2 == 1:
                remaining.discard(cell)
        poses.extend(leg[1:])
    return poses


def _realize(state: WorldState, assignment: SetAssignment) -> tuple[list[str], Plan]:
    dist_cache: dict[Cell, dict[Cell, int]] = {}

    leader_poses = _route(
        state,
        state.leader_pose,
        assignment.leader_cards,
        frozenset({state.follower_pose.cell}),
        dist_cache,
    )
    leader_actions = actions_for_path(leader_poses)

    follower_poses = _route(
        state,
        state.follower_pose,
        assignment.follower_cards,
        frozenset({leader_poses[-1].cell}),
        dist_cache,
    )
    plan = Plan(
        start=state.follower_pose,
        poses=tuple(follower_poses),
        target_cards=assignment.follower_cards,
    )
    return leader_actions, plan


def make_plan(state: WorldState) -> tuple[list[str], Plan]:
    """Leader action script plus the follower plan for the next set.

    The split costing ignores card blocking, so the cheapest assignment can
    occasionally be unrealizable once cards block paths; fall back to the
    next-cheapest assignment before giving up.
    """
    last_error: UnreachableTargetError | None = None
    for assignment in ranked_assignments(state):
        try:
            return _realize(state, assignment)
        except UnreachableTargetError as err:
            last_error = err
    assert last_error is not None
    raise last_error
