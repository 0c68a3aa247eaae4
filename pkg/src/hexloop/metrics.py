"""Evaluation measures: task completion, exact earth mover's distance
between plan and execution paths, language statistics, and round reports.

EMD treats each path as a distribution over visited cells with uniform
pose weights, and solves the transportation problem exactly by successive
shortest paths under the hex-distance ground metric.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

from .hexworld import Cell, Pose, WorldState, hex_distance
from .planner import Plan


@dataclass(frozen=True)
class PathDistribution:
    support: tuple[Cell, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.support) != len(self.weights) or not self.support:
            raise ValueError("support and weights must align and be nonempty")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if len(set(self.support)) != len(self.support):
            raise ValueError("support cells must be distinct")


def path_to_distribution(poses: tuple[Pose, ...] | list[Pose]) -> PathDistribution:
    """Uniform mass per pose, accumulated on repeated cells."""
    if not poses:
        raise ValueError("pose sequence must be nonempty")
    counts: dict[Cell, int] = {}
    for pose in poses:
        counts[pose.cell] = counts.get(pose.cell, 0) + 1
    support = tuple(sorted(counts))
    n = len(poses)
    return PathDistribution(
        support=support, weights=tuple(counts[c] / n for c in support)
    )


def emd(a: PathDistribution, b: PathDistribution) -> float:
    """Exact optimal transportation cost between two cell distributions."""
    na, nb = len(a.support), len(b.support)
    cost = [
        [float(hex_distance(sa, sb)) for sb in b.support] for sa in a.support
    ]
    supply = list(a.weights)
    demand = list(b.weights)
    # successive shortest augmenting paths; the residual graph has forward
    # edges a->b (always) and backward edges b->a where flow exists, so
    # path costs can go negative and Bellman-Ford is the search
    INF = float("inf")
    flow = [[0.0] * nb for _ in range(na)]
    eps = 1e-15
    total = 0.0
    while True:
        sources = [i for i in range(na) if supply[i] > eps]
        if not sources:
            break
        dist_a = [0.0 if i in set(sources) else INF for i in range(na)]
        dist_b = [INF] * nb
        prev_b = [-1] * nb
        prev_a = [-1] * na
        for _ in range(na + nb + 1):
            changed = False
            for i in range(na):
                if dist_a[i] == INF:
                    continue
                for j in range(nb):
                    nd = dist_a[i] + cost[i][j]
                    if nd < dist_b[j] - 1e-18:
                        dist_b[j] = nd
                        prev_b[j] = i
                        changed = True
            for j in range(nb):
                if dist_b[j] == INF:
                    continue
                for i in range(na):
                    if flow[i][j] > eps:
                        nd = dist_b[j] - cost[i][j]
                        if nd < dist_a[i] - 1e-18:
                            dist_a[i] = nd
                            prev_a[i] = j
                            changed = True
            if not changed:
                break
        sink = min(
            (j for j in range(nb) if demand[j] > eps), key=lambda j: dist_b[j]
        )
        # trace back the augmenting path and find its bottleneck
        path = []  # edges (i, j, forward)
        j = sink
        while True:
            i = prev_b[j]
            path.append((i, j, True))
            if prev_a[i] == -1:  # reached a source (initialized at dist 0)
                src = i
                break
            j = prev_a[i]
            path.append((i, j, False))
        amount = min(supply[src], demand[sink])
        for i, j, forward in path:
            if not forward:
                amount = min(amount, flow[i][j])
        for i, j, forward in path:
            if forward:
                flow[i][j] += amount
                total += amount * cost[i][j]
            else:
                flow[i][j] -= amount
                total -= amount * cost[i][j]
        supply[src] -= amount
        demand[sink] -= amount
    return total


def task_completion(
    plan: Plan, exec_poses: tuple[Pose, ...], state: WorldState
) -> bool:
    """Did the execution visit every plan card (superset allowed)?  0-card
    plans require ending on the start cell."""
    assert exec_poses[0].cell == plan.start.cell
    if plan.target_cards:
        visited = {p.cell for p in exec_poses}
        return plan.target_cards <= visited
    return exec_poses[-1].cell == plan.start.cell


def language_stats(instructions: list[tuple[str, ...]]) -> tuple[float, int]:
    """(mean token length, distinct token types); specials excluded by the
    caller handing in plain instruction token tuples."""
    if not instructions:
        return 0.0, 0
    types = set()
    total = 0
    for x in instructions:
        total += len(x)
        types.update(x)
    return total / len(instructions), len(types)


@dataclass
class RoundReport:
    round_index: int
    completion_rate: float
    completion_by_cards: dict[int, float]  # keys 0..3; nan-free, -1 if unseen
    mean_emd: float
    perceived_correct_rate: float
    grammatical_rate: float
    mean_score: float
    mean_instruction_length: float
    vocab_size: int
    num_positive: int
    num_negative: int

    def __post_init__(self):
        for rate in (
            self.completion_rate,
            self.perceived_correct_rate,
            self.grammatical_rate,
        ):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("rates must lie in [0, 1]")
        if self.num_positive < 0 or self.num_negative < 0:
            raise ValueError("counts must be non-negative")

    CSV_FIELDS = (
        "round",
        "completion_rate",
        "completion_0",
        "completion_1",
        "completion_2",
        "completion_3",
        "mean_emd",
        "perceived_correct_rate",
        "grammatical_rate",
        "mean_score",
        "mean_instruction_length",
        "vocab_size",
        "num_positive",
        "num_negative",
    )

    def csv_row(self) -> dict:
        row = {
            "round": self.round_index,
            "completion_rate": self.completion_rate,
            "mean_emd": self.mean_emd,
            "perceived_correct_rate": self.perceived_correct_rate,
            "grammatical_rate": self.grammatical_rate,
            "mean_score": self.mean_score,
            "mean_instruction_length": self.mean_instruction_length,
            "vocab_size": self.vocab_size,
            "num_positive": self.num_positive,
            "num_negative": self.num_negative,
        }
        for k in range(4):
            row[f"completion_{k}"] = self.completion_by_cards.get(k, -1.0)
        return row

    def to_json(self) -> str:
        return json.dumps(
            {
                "round": self.round_index,
                "completion_rate": self.completion_rate,
                "completion_by_cards": {
                    str(k): v for k, v in sorted(self.completion_by_cards.items())
                },
                "mean_emd": self.mean_emd,
                "perceived_correct_rate": self.perceived_correct_rate,
                "grammatical_rate": self.grammatical_rate,
                "mean_score": self.mean_score,
                "mean_instruction_length": self.mean_instruction_length,
                "vocab_size": self.vocab_size,
                "num_positive": self.num_positive,
                "num_negative": self.num_negative,
            }
        )


def write_report_csv(path, reports: list[RoundReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RoundReport.CSV_FIELDS)
        writer.writeheader()
        for report in reports:
            writer.writerow(report.csv_row())


def read_report_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [dict(row) for row in csv.DictReader(fh)]
