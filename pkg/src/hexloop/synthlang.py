"""Synthetic instruction language: a small context-free grammar over
movement / card / landmark clauses, a canonical verbalizer used to build the
supervised seed data, and a grounding parser that defines comprehensibility.

The grammar lives in data/grammar.ebnf and is loaded at import; the
vocabulary is derived from its terminals.
"""
from __future__ import annotations

import functools
import math
import random
from dataclasses import dataclass
from importlib import resources

from .hexworld import (
    Cell,
    Landmark,
    Observation,
    Pose,
    WorldState,
    axial_to_cart,
    hex_distance,
)
from .planner import Plan

Instruction = tuple[str, ...]

ANCHOR_RADIUS = 3
MAX_INSTRUCTION_TOKENS = 25

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"


# ---------------------------------------------------------------------------
# grammar


@dataclass(frozen=True)
class Grammar:
    start: str
    rules: dict[str, tuple[tuple[str, ...], ...]]
    terminals: frozenset[str]

    def accepts(self, tokens: Instruction) -> bool:
        if not tokens or any(t not in self.terminals for t in tokens):
            return False

        @functools.lru_cache(maxsize=None)
        def ends(symbol: str, i: int) -> frozenset[int]:
            if symbol not in self.rules:
                if i < len(tokens) and tokens[i] == symbol:
                    return frozenset({i + 1})
                return frozenset()
            out: set[int] = set()
            for alt in self.rules[symbol]:
                positions = {i}
                for sym in alt:
                    positions = {j for p in positions for j in ends(sym, p)}
                    if not positions:
                        break
                out.update(positions)
            return frozenset(out)

        return len(tokens) in ends(self.start, 0)


def parse_grammar_text(text: str) -> Grammar:
    rules: dict[str, tuple[tuple[str, ...], ...]] = {}
    start: str | None = None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        lhs, rhs = (s.strip() for s in line.split(":=", 1))
        alts = tuple(
            tuple(alt.split()) for alt in rhs.split("|") if alt.strip()
        )
        rules[lhs] = alts
        if start is None:
            start = lhs
    assert start is not None, "empty grammar"
    nonterminals = set(rules)
    terminals = frozenset(
        sym for alts in rules.values() for alt in alts for sym in alt
        if sym not in nonterminals
    )
    return Grammar(start=start, rules=rules, terminals=terminals)


@functools.lru_cache(maxsize=1)
def default_grammar() -> Grammar:
    text = resources.files("hexloop.data").joinpath("grammar.ebnf").read_text()
    return parse_grammar_text(text)


def grammar_check(x: Instruction) -> bool:
    return default_grammar().accepts(tuple(x))


# ---------------------------------------------------------------------------
# vocabulary


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.tokens)

    @functools.cached_property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def bos_id(self) -> int:
        return self.index[BOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    def encode(self, x: Instruction) -> list[int]:
        return [self.index.get(t, self.unk_id) for t in x]

    def decode(self, ids: list[int]) -> Instruction:
        return tuple(self.tokens[i] for i in ids)


@functools.lru_cache(maxsize=1)
def default_vocabulary() -> Vocabulary:
    terminals = sorted(default_grammar().terminals)
    return Vocabulary(tokens=(PAD, BOS, EOS, UNK, *terminals))


# ---------------------------------------------------------------------------
# shared grounding semantics

_COUNT_WORDS = {1: "one", 2: "two", 3: "three"}
_WORD_COUNTS = {w: n for n, w in _COUNT_WORDS.items()}
_SHAPE_SINGULAR = {
    "stars": "star",
    "hearts": "heart",
    "diamonds": "diamond",
    "star": "star",
    "heart": "heart",
    "diamond": "diamond",
}
_GET_VERBS = ("get", "grab", "collect", "take", "fetch", "pick")
_DROP_VERBS = ("deselect", "unselect")
_NAV_VERBS = ("go", "head", "walk", "move", "proceed")
_WAIT_FORMS = (("hold", "still"), ("wait", "here"), ("stay", "put"), ("halt",), ("freeze",))

_DIRECTION_FORMS = {
    "ahead": (("ahead",), ("in", "front", "of", "you")),
    "behind": (("behind", "you"),),
    "left": (("on", "your", "left"), ("to", "your", "left")),
    "right": (("on", "your", "right"), ("to", "your", "right")),
}


def relative_direction(pose: Pose, cell: Cell) -> str:
    """Sector of `cell` relative to the pose's facing: ahead / behind /
    left / right.  Evaluated in the cartesian embedding of the hex grid."""
    if cell == pose.cell:
        return "ahead"
    px, py = axial_to_cart(pose.cell)
    cx, cy = axial_to_cart(cell)
    from .hexworld import DIRECTIONS

    dh, dw = DIRECTIONS[pose.alpha]
    fx, fy = axial_to_cart((pose.h + dh, pose.w + dw))
    facing = math.atan2(fy - py, fx - px)
    toward = math.atan2(cy - py, cx - px)
    diff = math.degrees(toward - facing)
    diff = (diff + 180.0) % 360.0 - 180.0
    if abs(diff) <= 45.0 + 1e-9:
        return "ahead"
    if abs(diff) >= 135.0 - 1e-9:
        return "behind"
    # turn-left increases orientation index, which is negative in this frame
    return "left" if diff < 0 else "right"


def _anchor_landmarks(landmarks: tuple[Landmark, ...], cell: Cell) -> list[Landmark]:
    near = [lm for lm in landmarks if hex_distance(lm.cell, cell) <= ANCHOR_RADIUS]
    return sorted(near, key=lambda lm: (hex_distance(lm.cell, cell), lm.cell))


# ---------------------------------------------------------------------------
# intents


@dataclass(frozen=True)
class WaitIntent:
    pass


@dataclass(frozen=True)
class TurnAroundIntent:
    pass


@dataclass(frozen=True)
class CardIntent:
    cell: Cell
    select: bool


@dataclass(frozen=True)
class NavIntent:
    landmark_cell: Cell


Clause = WaitIntent | TurnAroundIntent | CardIntent | NavIntent


@dataclass(frozen=True)
class ParsedIntent:
    clauses: tuple[Clause, ...]

    @property
    def card_cells(self) -> frozenset[Cell]:
        return frozenset(c.cell for c in self.clauses if isinstance(c, CardIntent))


@dataclass(frozen=True)
class ParseFailure:
    reason: str  # ungrammatical | unresolvable-referent | contradictory


# ---------------------------------------------------------------------------
# verbalizer


def _plan_visit_order(plan: Plan) -> list[Cell]:
    seen: list[Cell] = []
    for pose in plan.poses:
        if pose.cell in plan.target_cards and pose.cell not in seen:
            seen.append(pose.cell)
    # targets not on the pose path cannot occur for planner output, but keep
    # the verbalizer total anyway
    for cell in sorted(plan.target_cards):
        if cell not in seen:
            seen.append(cell)
    return seen


def _card_tokens(count: int, color: str, shape: str) -> list[str]:
    shape_word = shape if count == 1 else shape + "s"
    return ["the", _COUNT_WORDS[count], color, shape_word]


def verbalize(state: WorldState, plan: Plan, style_seed: int) -> Instruction:
    """Canonical instruction for a plan; style_seed varies surface form only."""
    rng = random.Random(f"style:{style_seed}")
    order = _plan_visit_order(plan)
    if not order:
        return tuple(rng.choice(_WAIT_FORMS))

    def build(with_modifiers: bool) -> list[str]:
        mod_rng = random.Random(f"style:{style_seed}:mods")
        clauses: list[list[str]] = []
        if with_modifiers and mod_rng.random() < 0.2:
            anchors = _anchor_landmarks(state.landmarks, order[0])
            if anchors:
                lm = anchors[0]
                clause = [mod_rng.choice(_NAV_VERBS), "toward", "the"]
                if mod_rng.random() < 0.5:
                    clause.append(lm.color)
                clause.append(lm.kind)
                clauses.append(clause)
        for cell in order:
            props = state.cards[cell]
            verb = (
                mod_rng.choice(_DROP_VERBS)
                if props.selected
                else mod_rng.choice(_GET_VERBS)
            )
            clause = [verb] + _card_tokens(props.count, props.color, props.shape)
            if with_modifiers and mod_rng.random() < 0.5:
                direction = relative_direction(plan.start, cell)
                clause.extend(mod_rng.choice(_DIRECTION_FORMS[direction]))
            if with_modifiers and mod_rng.random() < 0.35:
                anchors = _anchor_landmarks(state.landmarks, cell)
                if anchors:
                    lm = anchors[0]
                    part = [mod_rng.choice(["near", "by"]), "the"]
                    if mod_rng.random() < 0.5:
                        part.append(lm.color)
                    part.append(lm.kind)
                    clause.extend(part)
            clauses.append(clause)
        tokens: list[str] = []
        for i, clause in enumerate(clauses):
            if i:
                tokens.append("then")
            tokens.extend(clause)
        return tokens

    tokens = build(with_modifiers=True)
    if len(tokens) > MAX_INSTRUCTION_TOKENS:
        tokens = build(with_modifiers=False)
    return tuple(tokens)


# ---------------------------------------------------------------------------
# parser


def _split_clauses(tokens: Instruction) -> list[list[str]]:
    clauses: list[list[str]] = [[]]
    for t in tokens:
        if t == "then":
            clauses.append([])
        else:
            clauses[-1].append(t)
    return clauses


def _parse_direction(rest: list[str]) -> tuple[str | None, list[str]]:
    for direction, forms in _DIRECTION_FORMS.items():
        for form in forms:
            if tuple(rest[: len(form)]) == form:
                return direction, rest[len(form):]
    return None, rest


_LANDMARK_TYPES = ("house", "tree", "pond", "tower")
_LANDMARK_COLORS = ("white", "gray", "brown")


def _parse_landmark_ref(rest: list[str]) -> tuple[tuple[str | None, str], list[str]] | None:
    """Parses `the [color] type`; returns ((color, type), remainder)."""
    if not rest or rest[0] != "the":
        return None
    rest = rest[1:]
    color = None
    if rest and rest[0] in _LANDMARK_COLORS:
        color = rest[0]
        rest = rest[1:]
    if not rest or rest[0] not in _LANDMARK_TYPES:
        return None
    return (color, rest[0]), rest[1:]


def _resolve_card(
    obs: Observation,
    pose: Pose,
    count: int,
    color: str,
    shape: str,
    direction: str | None,
    anchor: tuple[str | None, str] | None,
) -> Cell | None:
    candidates = [
        cell
        for cell, props in obs.cards.items()
        if props.count == count and props.color == color and props.shape == shape
    ]
    if direction is not None:
        candidates = [
            c for c in candidates if relative_direction(pose, c) == direction
        ]
    if anchor is not None:
        a_color, a_type = anchor
        candidates = [
            c
            for c in candidates
            if any(
                lm.kind == a_type
                and (a_color is None or lm.color == a_color)
                and hex_distance(lm.cell, c) <= ANCHOR_RADIUS
                for lm in obs.landmarks
            )
        ]
    if not candidates:
        return None
    return min(candidates, key=lambda c: (hex_distance(pose.cell, c), c))


def parse(obs: Observation, pose: Pose, x: Instruction) -> ParsedIntent | ParseFailure:
    """Deterministic grounding of an instruction against an observation.

    Fails with `ungrammatical` when the token sequence is not derivable from
    the grammar, `unresolvable-referent` when a descriptor matches nothing in
    the observation, and `contradictory` when the resolved action is
    impossible (e.g. deselecting an unselected card).
    """
    tokens = tuple(x)
    if not grammar_check(tokens):
        return ParseFailure("ungrammatical")
    clauses: list[Clause] = []
    for clause in _split_clauses(tokens):
        head = clause[0]
        if tuple(clause) in _WAIT_FORMS:
            clauses.append(WaitIntent())
        elif clause == ["turn", "around"]:
            clauses.append(TurnAroundIntent())
        elif head in _NAV_VERBS:
            ref = _parse_landmark_ref(clause[2:])  # skip verb, "toward"
            assert ref is not None  # guaranteed by the grammar
            (color, kind), _ = ref
            matches = [
                lm
                for lm in obs.landmarks
                if lm.kind == kind and (color is None or lm.color == color)
            ]
            if not matches:
                return ParseFailure("unresolvable-referent")
            lm = min(
                matches, key=lambda lm: (hex_distance(pose.cell, lm.cell), lm.cell)
            )
            clauses.append(NavIntent(landmark_cell=lm.cell))
        else:
            select = head in _GET_VERBS
            count = _WORD_COUNTS[clause[2]]
            color = clause[3]
            shape = _SHAPE_SINGULAR[clause[4]]
            rest = clause[5:]
            direction, rest = _parse_direction(rest)
            anchor = None
            if rest:
                ref = _parse_landmark_ref(rest[1:])  # skip near/by
                assert ref is not None
                anchor, rest = ref
            cell = _resolve_card(obs, pose, count, color, shape, direction, anchor)
            if cell is None:
                return ParseFailure("unresolvable-referent")
            if obs.cards[cell].selected == select:
                return ParseFailure("contradictory")
            clauses.append(CardIntent(cell=cell, select=select))
    return ParsedIntent(clauses=tuple(clauses))
