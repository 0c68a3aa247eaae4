"""Deterministic hexagonal-grid card game engine.

Hex layout convention (fixed; all rotation math derives from it):
cells are (h, w) pairs on a parallelogram-shaped axial grid with
axial coordinates q = w, r = h.  The six neighbor directions, indexed
by orientation alpha in {0..5}, are

    alpha:      0        1        2        3        4        5
    (dq, dr):  (1,0)   (1,-1)   (0,-1)  (-1,0)   (-1,1)   (0,1)

A one-step hex rotation maps direction alpha to alpha+1 and, about the
origin, maps axial (q, r) to (q + r, -q).
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace

import numpy as np

Cell = tuple[int, int]

# (dh, dw) per orientation; see module docstring for the (dq, dr) form.
DIRECTIONS: tuple[Cell, ...] = ((0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1), (1, 0))

ACTIONS: tuple[str, ...] = ("forward", "back", "turn-left", "turn-right")

CARD_COUNTS = (1, 2, 3)
CARD_COLORS = ("red", "green", "blue")
CARD_SHAPES = ("star", "heart", "diamond")
LANDMARK_TYPES = ("house", "tree", "pond", "tower")
LANDMARK_COLORS = ("white", "gray", "brown")

LEADER = "leader"
FOLLOWER = "follower"

SCHEMA_VERSION = 1


class WorldGenError(Exception):
    """Raised when a world satisfying the configuration cannot be built."""


class IllegalMoveError(Exception):
    pass


@dataclass(frozen=True)
class WorldConfig:
    height: int = 12
    width: int = 12
    num_cards: int = 12
    num_landmarks: int = 10
    num_water: int = 6
    moves_per_turn: int = 40
    total_turns: int = 12
    view_depth: int = 8
    view_half_angle_deg: float = 75.0
    # With distinct (count, color, shape) triples a descriptor uniquely
    # identifies a card, which the synthetic language relies on.
    distinct_cards: bool = True

    def validate(self) -> None:
        if self.height < 6 or self.width < 6:
            raise WorldGenError("grid must be at least 6x6")
        if self.num_cards < 9:
            raise WorldGenError("need at least 9 cards to guarantee a valid set")
        max_combos = len(CARD_COUNTS) * len(CARD_COLORS) * len(CARD_SHAPES)
        if self.distinct_cards and self.num_cards > max_combos:
            raise WorldGenError(f"at most {max_combos} distinct cards available")


@dataclass(frozen=True)
class Pose:
    h: int
    w: int
    alpha: int

    @property
    def cell(self) -> Cell:
        return (self.h, self.w)


@dataclass(frozen=True)
class CardProps:
    count: int
    color: str
    shape: str
    selected: bool = False

    @property
    def key(self) -> tuple[int, str, str]:
        return (self.count, self.color, self.shape)


@dataclass(frozen=True)
class Landmark:
    cell: Cell
    kind: str
    color: str


@dataclass(frozen=True)
class WorldState:
    config: WorldConfig
    water: frozenset[Cell]
    landmarks: tuple[Landmark, ...]
    cards: dict[Cell, CardProps]
    leader_pose: Pose
    follower_pose: Pose
    score: int
    turn: str
    moves_left: int
    turns_left: int
    rng_seed: int
    rng_calls: int

    @property
    def height(self) -> int:
        return self.config.height

    @property
    def width(self) -> int:
        return self.config.width

    def landmark_at(self, cell: Cell) -> Landmark | None:
        return {lm.cell: lm for lm in self.landmarks}.get(cell)


# ---------------------------------------------------------------------------
# geometry


def rotate60(cell: Cell) -> Cell:
    """One-step hex rotation about the origin: (q, r) -> (q + r, -q)."""
    h, w = cell
    return (-w, w + h)


def rotate60_about(cell: Cell, center: Cell) -> Cell:
    dh, dw = cell[0] - center[0], cell[1] - center[1]
    rh, rw = rotate60((dh, dw))
    return (center[0] + rh, center[1] + rw)


def hex_distance(a: Cell, b: Cell) -> int:
    dq = b[1] - a[1]
    dr = b[0] - a[0]
    return (abs(dq) + abs(dr) + abs(dq + dr)) // 2


def neighbor(cell: Cell, alpha: int) -> Cell:
    dh, dw = DIRECTIONS[alpha % 6]
    return (cell[0] + dh, cell[1] + dw)


def axial_to_cart(cell: Cell) -> tuple[float, float]:
    h, w = cell
    return (w + h / 2.0, h * (3.0 ** 0.5) / 2.0)


def in_bounds(cell: Cell, config: WorldConfig) -> bool:
    return 0 <= cell[0] < config.height and 0 <= cell[1] < config.width


# ---------------------------------------------------------------------------
# cards


def is_valid_set(c1: CardProps, c2: CardProps, c3: CardProps) -> bool:
    cards = (c1, c2, c3)
    return (
        len({c.count for c in cards}) == 3
        and len({c.color for c in cards}) == 3
        and len({c.shape for c in cards}) == 3
    )


def valid_triples(cards: dict[Cell, CardProps]) -> list[tuple[Cell, Cell, Cell]]:
    """All valid triples among the given cards, as sorted cell tuples."""
    cells = sorted(cards)
    out = []
    for i in range(len(cells)):
        for j in range(i + 1, len(cells)):
            for k in range(j + 1, len(cells)):
                if is_valid_set(cards[cells[i]], cards[cells[j]], cards[cells[k]]):
                    out.append((cells[i], cells[j], cells[k]))
    return out


# ---------------------------------------------------------------------------
# passability


def is_passable(state: WorldState, cell: Cell) -> bool:
    if not in_bounds(cell, state.config):
        return False
    if cell in state.water:
        return False
    return all(lm.cell != cell for lm in state.landmarks)


def _blocked_cells(state: WorldState) -> set[Cell]:
    blocked = set(state.water)
    blocked.update(lm.cell for lm in state.landmarks)
    return blocked


# ---------------------------------------------------------------------------
# world generation


def _draw_deck(rng: random.Random, config: WorldConfig) -> list[CardProps]:
    """Deck with at least one valid triple; distinct property combos when configured."""
    combos = [
        (n, c, s) for n in CARD_COUNTS for c in CARD_COLORS for s in CARD_SHAPES
    ]
    while True:
        if config.distinct_cards:
            chosen = rng.sample(combos, config.num_cards)
        else:
            chosen = [rng.choice(combos) for _ in range(config.num_cards)]
        cards = [CardProps(n, c, s) for n, c, s in chosen]
        for i in range(len(cards)):
            for j in range(i + 1, len(cards)):
                for k in range(j + 1, len(cards)):
                    if is_valid_set(cards[i], cards[j], cards[k]):
                        rng.shuffle(cards)
                        return cards


def _place_cards(
    rng: random.Random, config: WorldConfig, free_cells: list[Cell]
) -> dict[Cell, CardProps]:
    deck = _draw_deck(rng, config)
    cells = rng.sample(sorted(free_cells), len(deck))
    return dict(zip(cells, deck))


def respawn_cards(state: WorldState) -> WorldState:
    """Replace every card deterministically from the world's seeded stream."""
    rng = random.Random(f"{state.rng_seed}:respawn:{state.rng_calls}")
    blocked = _blocked_cells(state)
    blocked.add(state.leader_pose.cell)
    blocked.add(state.follower_pose.cell)
    free = [
        (h, w)
        for h in range(state.height)
        for w in range(state.width)
        if (h, w) not in blocked
    ]
    cards = _place_cards(rng, state.config, free)
    return replace(state, cards=cards, rng_calls=state.rng_calls + 1)


def _connected(cells: set[Cell]) -> bool:
    if not cells:
        return False
    seen = set()
    stack = [next(iter(cells))]
    while stack:
        c = stack.pop()
        if c in seen:
            continue
        seen.add(c)
        for alpha in range(6):
            n = neighbor(c, alpha)
            if n in cells and n not in seen:
                stack.append(n)
    return len(seen) == len(cells)


def new_world(seed: int, config: WorldConfig | None = None) -> WorldState:
    config = config or WorldConfig()
    config.validate()
    for attempt in range(64):
        rng = random.Random(f"{seed}:world:{attempt}")
        all_cells = [(h, w) for h in range(config.height) for w in range(config.width)]
        needed = config.num_cards + 2
        n_obstacles = config.num_water + config.num_landmarks
        if len(all_cells) - n_obstacles < needed:
            raise WorldGenError("too few passable cells for cards and agents")
        obstacle_cells = rng.sample(all_cells, n_obstacles)
        water = frozenset(obstacle_cells[: config.num_water])
        landmarks = tuple(
            Landmark(cell, rng.choice(LANDMARK_TYPES), rng.choice(LANDMARK_COLORS))
            for cell in obstacle_cells[config.num_water :]
        )
        passable = set(all_cells) - set(obstacle_cells)
        if not _connected(passable):
            continue
        agent_cells = rng.sample(sorted(passable), 2)
        leader = Pose(*agent_cells[0], rng.randrange(6))
        follower = Pose(*agent_cells[1], rng.randrange(6))
        free = sorted(passable - set(agent_cells))
        cards = _place_cards(rng, config, free)
        state = WorldState(
            config=config,
            water=water,
            landmarks=landmarks,
            cards=cards,
            leader_pose=leader,
            follower_pose=follower,
            score=0,
            turn=LEADER,
            moves_left=config.moves_per_turn,
            turns_left=config.total_turns,
            rng_seed=seed,
            rng_calls=0,
        )
        if valid_triples({c: p for c, p in cards.items() if not p.selected}):
            return state
    raise WorldGenError("could not generate a feasible world")


# ---------------------------------------------------------------------------
# actions


def agent_pose(state: WorldState, agent: str) -> Pose:
    return state.leader_pose if agent == LEADER else state.follower_pose


def _with_pose(state: WorldState, agent: str, pose: Pose) -> WorldState:
    if agent == LEADER:
        return replace(state, leader_pose=pose)
    return replace(state, follower_pose=pose)


def _selected_cards(state: WorldState) -> dict[Cell, CardProps]:
    return {c: p for c, p in state.cards.items() if p.selected}


def _maybe_complete_set(state: WorldState) -> WorldState:
    selected = _selected_cards(state)
    if len(selected) == 3 and is_valid_set(*selected.values()):
        state = replace(state, score=state.score + 1)
        state = respawn_cards(state)
    return state


def pass_turn(state: WorldState) -> WorldState:
    nxt = FOLLOWER if state.turn == LEADER else LEADER
    return replace(
        state,
        turn=nxt,
        moves_left=state.config.moves_per_turn,
        turns_left=max(0, state.turns_left - 1),
    )


def legal_actions(state: WorldState, agent: str) -> list[str]:
    return [a for a in ACTIONS if apply_action(state, agent, a)[1]]


def apply_action(state: WorldState, agent: str, action: str) -> tuple[WorldState, bool]:
    """Apply one action; illegal actions leave the state unchanged, legal=False."""
    if action not in ACTIONS:
        raise ValueError(f"unknown action {action!r}")
    if state.turn != agent or state.moves_left <= 0 or state.turns_left <= 0:
        return state, False
    pose = agent_pose(state, agent)
    if action == "turn-left":
        new_pose = replace(pose, alpha=(pose.alpha + 1) % 6)
        target = None
    elif action == "turn-right":
        new_pose = replace(pose, alpha=(pose.alpha - 1) % 6)
        target = None
    else:
        alpha = pose.alpha if action == "forward" else (pose.alpha + 3) % 6
        target = neighbor(pose.cell, alpha)
        other = agent_pose(state, FOLLOWER if agent == LEADER else LEADER)
        if not is_passable(state, target) or target == other.cell:
            return state, False
        new_pose = replace(pose, h=target[0], w=target[1])
    state = _with_pose(state, agent, new_pose)
    if target is not None and target in state.cards:
        cards = dict(state.cards)
        card = cards[target]
        cards[target] = replace(card, selected=not card.selected)
        state = replace(state, cards=cards)
        state = _maybe_complete_set(state)
    state = replace(state, moves_left=state.moves_left - 1)
    if state.moves_left == 0:
        state = pass_turn(state)
    return state, True


def toggled_cells(state: WorldState, poses: list[Pose]) -> frozenset[Cell]:
    """Card cells of `state` toggled an odd number of times along the pose path."""
    counts: dict[Cell, int] = {}
    prev = poses[0].cell if poses else None
    for pose in poses[1:]:
        cell = pose.cell
        if cell != prev and cell in state.cards:
            counts[cell] = counts.get(cell, 0) + 1
        prev = cell
    return frozenset(c for c, n in counts.items() if n % 2 == 1)


# ---------------------------------------------------------------------------
# property tensor and crops

_PROP_NAMES: list[str] = (
    ["pad", "plain", "water"]
    + [f"lm_type_{t}" for t in LANDMARK_TYPES]
    + [f"lm_color_{c}" for c in LANDMARK_COLORS]
    + ["card"]
    + [f"card_count_{n}" for n in CARD_COUNTS]
    + [f"card_color_{c}" for c in CARD_COLORS]
    + [f"card_shape_{s}" for s in CARD_SHAPES]
    + ["card_selected", "leader", "follower"]
)
PROP_INDEX = {name: i for i, name in enumerate(_PROP_NAMES)}
NUM_PROPS = len(_PROP_NAMES)
PAD_PROP = PROP_INDEX["pad"]


def cell_properties(state: WorldState, cell: Cell) -> np.ndarray:
    """Binary property vector for one cell; out-of-bounds cells are all-pad."""
    v = np.zeros(NUM_PROPS)
    if not in_bounds(cell, state.config):
        v[PAD_PROP] = 1.0
        return v
    if cell in state.water:
        v[PROP_INDEX["water"]] = 1.0
    else:
        v[PROP_INDEX["plain"]] = 1.0
    for lm in state.landmarks:
        if lm.cell == cell:
            v[PROP_INDEX[f"lm_type_{lm.kind}"]] = 1.0
            v[PROP_INDEX[f"lm_color_{lm.color}"]] = 1.0
    card = state.cards.get(cell)
    if card is not None:
        v[PROP_INDEX["card"]] = 1.0
        v[PROP_INDEX[f"card_count_{card.count}"]] = 1.0
        v[PROP_INDEX[f"card_color_{card.color}"]] = 1.0
        v[PROP_INDEX[f"card_shape_{card.shape}"]] = 1.0
        if card.selected:
            v[PROP_INDEX["card_selected"]] = 1.0
    if state.leader_pose.cell == cell:
        v[PROP_INDEX["leader"]] = 1.0
    if state.follower_pose.cell == cell:
        v[PROP_INDEX["follower"]] = 1.0
    return v


def property_tensor(state: WorldState) -> np.ndarray:
    out = np.zeros((state.height, state.width, NUM_PROPS))
    for h in range(state.height):
        for w in range(state.width):
            out[h, w] = cell_properties(state, (h, w))
    return out


@dataclass(frozen=True)
class Crop:
    """Np x Np patch of cell property vectors aligned to a pose's orientation.

    cells[u][v] is the world cell covered by patch entry (u, v), or None
    beyond the border (marked by the pad property in values).
    """

    values: np.ndarray
    cells: tuple[tuple[Cell | None, ...], ...]


def crop_cell(pose: Pose, u: int, v: int, np_side: int) -> Cell:
    """World cell at patch offset (u, v); patch axes are the orientation's
    direction and the direction two steps counterclockwise from it."""
    k = (np_side - 1) // 2
    d1 = DIRECTIONS[pose.alpha % 6]
    d2 = DIRECTIONS[(pose.alpha + 2) % 6]
    du, dv = u - k, v - k
    return (pose.h + du * d1[0] + dv * d2[0], pose.w + du * d1[1] + dv * d2[1])


def rotate_crop(state: WorldState, pose: Pose, np_side: int) -> Crop:
    if np_side < 1 or np_side % 2 == 0:
        raise ValueError("crop side must be odd and >= 1")
    values = np.zeros((np_side, np_side, NUM_PROPS))
    cells: list[tuple[Cell | None, ...]] = []
    for u in range(np_side):
        row: list[Cell | None] = []
        for v in range(np_side):
            cell = crop_cell(pose, u, v, np_side)
            values[u, v] = cell_properties(state, cell)
            row.append(cell if in_bounds(cell, state.config) else None)
        cells.append(tuple(row))
    return Crop(values=values, cells=tuple(cells))


# ---------------------------------------------------------------------------
# follower observation


@dataclass(frozen=True)
class ViewCell:
    cell: Cell
    terrain: str
    landmark: Landmark | None
    card: CardProps | None


@dataclass(frozen=True)
class FollowerView:
    pose: Pose
    cells: dict[Cell, ViewCell]
    score: int
    moves_left: int


def in_view_cone(
    state: WorldState,
    cell: Cell,
    depth: int | None = None,
    half_angle_deg: float | None = None,
) -> bool:
    depth = state.config.view_depth if depth is None else depth
    half = state.config.view_half_angle_deg if half_angle_deg is None else half_angle_deg
    pose = state.follower_pose
    if cell == pose.cell:
        return True
    if hex_distance(pose.cell, cell) > depth:
        return False
    px, py = axial_to_cart(pose.cell)
    cx, cy = axial_to_cart(cell)
    fh, fw = DIRECTIONS[pose.alpha]
    fx, fy = axial_to_cart((pose.h + fh, pose.w + fw))
    vx, vy = cx - px, cy - py
    dx, dy = fx - px, fy - py
    cos = (vx * dx + vy * dy) / ((vx * vx + vy * vy) ** 0.5 * (dx * dx + dy * dy) ** 0.5)
    cos = max(-1.0, min(1.0, cos))
    return cos >= np.cos(np.radians(half)) - 1e-12


def follower_view(state: WorldState) -> FollowerView:
    """Forward-facing cone observation; never includes plan or target data."""
    cells: dict[Cell, ViewCell] = {}
    for h in range(state.height):
        for w in range(state.width):
            cell = (h, w)
            if not in_view_cone(state, cell):
                continue
            cells[cell] = ViewCell(
                cell=cell,
                terrain="water" if cell in state.water else "plain",
                landmark=state.landmark_at(cell),
                card=state.cards.get(cell),
            )
    return FollowerView(
        pose=state.follower_pose,
        cells=cells,
        score=state.score,
        moves_left=state.moves_left,
    )


@dataclass(frozen=True)
class Observation:
    """What the follower can act on: the current cone view plus the card and
    landmark roster it could discover by exploring.  Contains no plan data."""

    pose: Pose
    view: FollowerView
    cards: dict[Cell, CardProps]
    landmarks: tuple[Landmark, ...]


def observe(state: WorldState) -> Observation:
    return Observation(
        pose=state.follower_pose,
        view=follower_view(state),
        cards=dict(state.cards),
        landmarks=state.landmarks,
    )


# ---------------------------------------------------------------------------
# serialization


def _rle_encode(tokens: list[str]) -> list[list]:
    runs: list[list] = []
    for t in tokens:
        if runs and runs[-1][1] == t:
            runs[-1][0] += 1
        else:
            runs.append([1, t])
    return runs


def _rle_decode(runs: list[list]) -> list[str]:
    out: list[str] = []
    for n, t in runs:
        out.extend([t] * n)
    return out


def _terrain_tokens(state: WorldState) -> list[str]:
    toks = []
    for h in range(state.height):
        for w in range(state.width):
            toks.append("water" if (h, w) in state.water else "plain")
    return toks


def state_to_dict(state: WorldState) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "config": {
            "height": state.config.height,
            "width": state.config.width,
            "num_cards": state.config.num_cards,
            "num_landmarks": state.config.num_landmarks,
            "num_water": state.config.num_water,
            "moves_per_turn": state.config.moves_per_turn,
            "total_turns": state.config.total_turns,
            "view_depth": state.config.view_depth,
            "view_half_angle_deg": state.config.view_half_angle_deg,
            "distinct_cards": state.config.distinct_cards,
        },
        "terrain_rle": _rle_encode(_terrain_tokens(state)),
        "landmarks": [
            {"cell": list(lm.cell), "kind": lm.kind, "color": lm.color}
            for lm in state.landmarks
        ],
        "cards": [
            {
                "cell": list(cell),
                "count": p.count,
                "color": p.color,
                "shape": p.shape,
                "selected": p.selected,
            }
            for cell, p in sorted(state.cards.items())
        ],
        "leader_pose": [state.leader_pose.h, state.leader_pose.w, state.leader_pose.alpha],
        "follower_pose": [
            state.follower_pose.h,
            state.follower_pose.w,
            state.follower_pose.alpha,
        ],
        "score": state.score,
        "turn": state.turn,
        "moves_left": state.moves_left,
        "turns_left": state.turns_left,
        "rng_seed": state.rng_seed,
        "rng_calls": state.rng_calls,
    }


def state_from_dict(d: dict) -> WorldState:
    if d.get("version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported world schema version {d.get('version')!r}")
    cfg = WorldConfig(**d["config"])
    terrain = _rle_decode(d["terrain_rle"])
    water = frozenset(
        (i // cfg.width, i % cfg.width)
        for i, t in enumerate(terrain)
        if t == "water"
    )
    landmarks = tuple(
        Landmark(tuple(lm["cell"]), lm["kind"], lm["color"]) for lm in d["landmarks"]
    )
    cards = {
        tuple(c["cell"]): CardProps(c["count"], c["color"], c["shape"], c["selected"])
        for c in d["cards"]
    }
    return WorldState(
        config=cfg,
        water=water,
        landmarks=landmarks,
        cards=cards,
        leader_pose=Pose(*d["leader_pose"]),
        follower_pose=Pose(*d["follower_pose"]),
        score=d["score"],
        turn=d["turn"],
        moves_left=d["moves_left"],
        turns_left=d["turns_left"],
        rng_seed=d["rng_seed"],
        rng_calls=d["rng_calls"],
    )


def state_to_json(state: WorldState) -> str:
    return json.dumps(state_to_dict(state), sort_keys=True)


def state_from_json(s: str) -> WorldState:
    return state_from_dict(json.loads(s))
