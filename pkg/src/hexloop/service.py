"""HTTP session service for human followers.

Exposes the session lifecycle consumed by the browser client: create a
session, move, mark the instruction complete, answer the two feedback
questions.  Completed sessions yield InteractionRecords with the same
schema as simulated ones.  Payloads sent to the client never contain the
plan or its target cards.
"""
from __future__ import annotations

import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from . import genmodel, hexworld, synthlang
from .follower import Feedback
from .hexworld import ACTIONS, FOLLOWER, LEADER, WorldState
from .orchestrator import (
    SCHEMA_VERSION,
    ExperimentConfig,
    InteractionRecord,
    advance_to_follower_turn,
    save_records,
    stable_seed,
)
from .planner import ReplanImpossibleError, UnreachableTargetError

SESSION_TTL_S = 1800.0


class MoveRequest(BaseModel):
    action: str


class CompleteRequest(BaseModel):
    terminated: bool = False


class FeedbackRequest(BaseModel):
    perceived_correct: bool
    grammatical: bool
    idempotency_key: str | None = None


def view_payload(state: WorldState) -> dict:
    """The follower's partial view; no plan data exists in this payload."""
    view = hexworld.follower_view(state)
    cells = []
    for cell, vc in sorted(view.cells.items()):
        entry: dict[str, Any] = {"cell": list(cell), "terrain": vc.terrain}
        if vc.landmark is not None:
            entry["landmark"] = {
                "kind": vc.landmark.kind,
                "color": vc.landmark.color,
            }
        if vc.card is not None:
            entry["card"] = {
                "count": vc.card.count,
                "color": vc.card.color,
                "shape": vc.card.shape,
                "selected": vc.card.selected,
            }
        cells.append(entry)
    return {
        "schema_version": SCHEMA_VERSION,
        "pose": [view.pose.h, view.pose.w, view.pose.alpha],
        "height": state.height,
        "width": state.width,
        "cells": cells,
        "score": view.score,
        "moves_left": view.moves_left,
        "turns_left": state.turns_left,
    }


def review_payload(state: WorldState, exec_poses) -> dict:
    """Top-down review of the whole board with the execution highlighted."""
    cells = []
    for h in range(state.height):
        for w in range(state.width):
            cell = (h, w)
            entry: dict[str, Any] = {
                "cell": [h, w],
                "terrain": "water" if cell in state.water else "plain",
            }
            lm = next((l for l in state.landmarks if l.cell == cell), None)
            if lm is not None:
                entry["terrain"] = "landmark"
                entry["landmark"] = {"kind": lm.kind, "color": lm.color}
            card = state.cards.get(cell)
            if card is not None:
                entry["card"] = {
                    "count": card.count,
                    "color": card.color,
                    "shape": card.shape,
                    "selected": card.selected,
                }
            cells.append(entry)
    return {
        "schema_version": SCHEMA_VERSION,
        "cells": cells,
        "path": [[p.h, p.w, p.alpha] for p in exec_poses],
        "score": state.score,
    }


@dataclass
class Session:
    session_id: str
    config: ExperimentConfig
    model_config: genmodel.ModelConfig | None
    ensemble: list | None
    oracle: bool
    game_index: int
    state: WorldState  # current live state
    start_state: WorldState | None = None
    plan: Any = None
    leader_actions: tuple = ()
    tokens: tuple = ()
    token_ids: tuple = ()
    model_index: int = 0
    behavior_logprob: float = 0.0
    exec_poses: list = field(default_factory=list)
    phase: str = "executing"  # executing | feedback | done
    pending_terminated: bool = False
    instruction_index: int = 0
    records: list = field(default_factory=list)
    feedback_keys: dict = field(default_factory=dict)
    started_at: float = field(default_factory=time.monotonic)
    last_seen: float = field(default_factory=time.monotonic)

    def issue_instruction(self) -> bool:
        """Plan and sample the next instruction; False when the game ended."""
        if self.state.turns_left < 2:
            self.phase = "done"
            return False
        try:
            state, leader_actions, plan = advance_to_follower_turn(self.state)
        except (ReplanImpossibleError, UnreachableTargetError):
            self.phase = "done"
            return False
        self.state = state
        self.start_state = state
        self.plan = plan
        self.leader_actions = tuple(leader_actions)
        vocab = synthlang.default_vocabulary()
        seed = f"{self.session_id}:{self.instruction_index}"
        if self.oracle:
            self.tokens = tuple(
                synthlang.verbalize(state, plan, style_seed=stable_seed(seed))
            )
            self.token_ids = tuple(vocab.encode(self.tokens))
            self.model_index = 0
            self.behavior_logprob = 0.0
        else:
            sampled = genmodel.ensemble_sample(
                self.ensemble, self.model_config, state, plan, self.config.tau, seed
            )
            self.tokens = tuple(vocab.decode(sampled.token_ids))
            self.token_ids = sampled.token_ids
            self.model_index = sampled.model_index
            self.behavior_logprob = sampled.logprob_behavior
        self.exec_poses = [state.follower_pose]
        self.phase = "executing"
        return True

    def finish_instruction(self, fb: Feedback, terminated: bool) -> None:
        rec = InteractionRecord(
            record_id=f"s{self.session_id[:8]}-i{len(self.records)}",
            round_index=0,
            interaction_index=len(self.records),
            game_index=self.game_index,
            instruction_index=self.instruction_index,
            state=self.start_state,
            plan=self.plan,
            leader_actions=self.leader_actions,
            token_ids=self.token_ids,
            tokens=self.tokens,
            model_index=self.model_index,
            behavior_logprob=self.behavior_logprob,
            exec_poses=tuple(self.exec_poses),
            feedback=fb,
            terminated=terminated,
            score_after=self.state.score,
            elapsed_s=time.monotonic() - self.started_at,
        )
        self.records.append(rec)
        self.instruction_index += 1
        if self.state.turn == FOLLOWER:
            self.state = hexworld.pass_turn(self.state)


def create_app(
    ensemble=None,
    model_config: genmodel.ModelConfig | None = None,
    config: ExperimentConfig | None = None,
    oracle: bool = False,
    records_dir=None,
) -> FastAPI:
    if not oracle and ensemble is None:
        raise ValueError("an ensemble is required unless oracle mode is set")
    config = config or ExperimentConfig()
    app = FastAPI(title="hexloop session service")
    sessions: dict[str, Session] = {}
    game_counter = {"next": 0}

    def get_session(session_id: str) -> Session:
        _expire(sessions)
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        session.last_seen = time.monotonic()
        return session

    def instruction_payload(session: Session) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": session.session_id,
            "instruction": " ".join(session.tokens),
            "view": view_payload(session.state),
            "game_over": False,
        }

    def game_over_payload(session: Session) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": session.session_id,
            "game_over": True,
            "score": session.state.score,
        }

    @app.post("/v1/sessions")
    def create_session():
        _expire(sessions)
        game = game_counter["next"]
        game_counter["next"] += 1
        session_id = uuid.uuid4().hex
        state = hexworld.new_world(
            stable_seed("service", config.seed, game), config.world
        )
        session = Session(
            session_id=session_id,
            config=config,
            model_config=model_config,
            ensemble=ensemble,
            oracle=oracle,
            game_index=game,
            state=state,
        )
        sessions[session_id] = session
        if not session.issue_instruction():
            raise HTTPException(status_code=503, detail="world not playable")
        return instruction_payload(session)

    @app.post("/v1/sessions/{session_id}/move")
    def move(session_id: str, req: MoveRequest):
        session = get_session(session_id)
        if session.phase != "executing":
            raise HTTPException(status_code=409, detail="not executing")
        if req.action not in ACTIONS:
            raise HTTPException(status_code=422, detail="unknown action")
        if session.state.turn != FOLLOWER:
            return {
                "view": view_payload(session.state),
                "legal": False,
                "moves_exhausted": True,
            }
        new_state, legal = hexworld.apply_action(session.state, FOLLOWER, req.action)
        if legal:
            session.state = new_state
            session.exec_poses.append(new_state.follower_pose)
        return {
            "view": view_payload(session.state),
            "legal": legal,
            "moves_exhausted": session.state.turn != FOLLOWER,
        }

    @app.post("/v1/sessions/{session_id}/complete")
    def complete(session_id: str, req: CompleteRequest):
        session = get_session(session_id)
        if session.phase != "executing":
            raise HTTPException(status_code=409, detail="not executing")
        session.phase = "feedback"
        session.pending_terminated = bool(req.terminated)
        return {
            "status": "awaiting_feedback",
            "review": review_payload(session.state, session.exec_poses),
        }

    @app.post("/v1/sessions/{session_id}/feedback")
    def feedback(session_id: str, req: FeedbackRequest):
        session = get_session(session_id)
        if req.idempotency_key and req.idempotency_key in session.feedback_keys:
            return session.feedback_keys[req.idempotency_key]
        if session.phase != "feedback":
            raise HTTPException(status_code=409, detail="no feedback pending")
        fb = Feedback(req.perceived_correct, req.grammatical)
        session.finish_instruction(fb, session.pending_terminated)
        session.pending_terminated = False
        if not session.issue_instruction():
            session.phase = "done"
            if records_dir is not None:
                out = Path(records_dir)
                out.mkdir(parents=True, exist_ok=True)
                save_records(
                    out / f"session-{session.session_id}.jsonl", session.records
                )
            response = game_over_payload(session)
        else:
            response = instruction_payload(session)
        if req.idempotency_key:
            session.feedback_keys[req.idempotency_key] = response
        return response

    app.state.sessions = sessions
    return app


def _expire(sessions: dict[str, Session]) -> None:
    now = time.monotonic()
    for sid in [
        s for s, sess in sessions.items() if now - sess.last_seen > SESSION_TTL_S
    ]:
        del sessions[sid]


def serve(app: FastAPI, port: int = 8080) -> None:
    import uvicorn

    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
