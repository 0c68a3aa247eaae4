"""Instruction generation model: a plan/state encoder producing a set of
pose-aligned context vectors and an autoregressive transformer decoder with
cross-attention onto that set, plus temperature sampling and ensembles.

Each plan step contributes one crop of cells around its pose; the context
set holds one vector per (step, crop cell) pair, the concatenation of the
step encoding and that cell's encoding.  Orientation enters as an embedding
of the step's heading relative to the plan start, which makes the encoding
invariant under joint rotation of world and plan.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np

from . import diffkit, hexworld
from .diffkit import ParamStore, Tensor, concat, constant, log_softmax, no_grad
from .hexworld import Pose, WorldState
from .planner import Plan

NEG_INF = -1e9


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2
    prop_width: int = 16  # property embedding width
    cell_width: int = 12  # encoded-cell width
    crop_side: int = 3
    orient_width: int = 8
    width: int = 32  # decoder and step-encoder width
    heads: int = 2
    mlp_width: int = 64
    max_len: int = 25
    # IPS behavior probability: untempered model prob unless this is set
    ips_tempered: bool = False

    def __post_init__(self):
        if self.crop_side % 2 == 0 or self.crop_side < 1:
            raise ValueError("crop side must be odd and positive")
        if self.width % self.heads != 0:
            raise ValueError("width must divide evenly into heads")

    @property
    def context_width(self) -> int:
        return self.width + self.cell_width

    @property
    def cells_per_step(self) -> int:
        return self.crop_side * self.crop_side


@dataclass(frozen=True)
class AttentionSet:
    """Context vectors for one (state, plan) pair, ordered step-major then
    crop row-major; rows count |plan poses| * crop_side^2."""

    vectors: Tensor
    num_steps: int
    cells_per_step: int


@dataclass(frozen=True)
class SampledInstruction:
    token_ids: tuple[int, ...]
    logprob_model: float
    logprob_behavior: float
    model_index: int


@dataclass(frozen=True)
class PlanFeatures:
    """Precomputed numeric inputs of encode; cacheable per (state, plan)."""

    props: np.ndarray  # (T, crop_side^2, NUM_PROPS) multi-hot crop cells
    orients: np.ndarray  # (T,) heading relative to the plan start

    @property
    def num_steps(self) -> int:
        return self.props.shape[0]

    @staticmethod
    def from_state_plan(
        state: WorldState, plan: Plan, crop_side: int = 3
    ) -> "PlanFeatures":
        poses = plan.poses
        n2 = crop_side * crop_side
        props = np.zeros((len(poses), n2, hexworld.NUM_PROPS))
        orients = np.zeros(len(poses), dtype=np.int64)
        base = poses[0].alpha
        for j, pose in enumerate(poses):
            crop = hexworld.rotate_crop(state, pose, crop_side)
            props[j] = crop.values.reshape(n2, hexworld.NUM_PROPS)
            orients[j] = (pose.alpha - base) % 6
        return PlanFeatures(props=props, orients=orients)


# ---------------------------------------------------------------------------
# parameters


def init_params(config: ModelConfig, seed: int) -> ParamStore:
    rng = np.random.default_rng(seed)
    scale = 0.08
    d = config.width
    cw = config.context_width
    arrays: dict[str, np.ndarray] = {}

    def w(name, *shape):
        arrays[name] = rng.normal(0.0, scale, size=shape)

    def zeros(name, *shape):
        arrays[name] = np.zeros(shape)

    def ones(name, *shape):
        arrays[name] = np.ones(shape)

    w("enc/prop_emb", hexworld.NUM_PROPS, config.prop_width)
    w("enc/cell_w", config.prop_width, config.cell_width)
    zeros("enc/cell_b", config.cell_width)
    w("enc/orient_emb", 6, config.orient_width)
    step_in = config.cells_per_step * config.cell_width + config.orient_width
    w("enc/step_w", step_in, d)
    zeros("enc/step_b", d)
    for nm in ("wq", "wk", "wv", "wo"):
        w(f"enc/attn/{nm}", d, d)
    ones("enc/ln1_g", d)
    zeros("enc/ln1_b", d)
    w("enc/mlp_w1", d, config.mlp_width)
    zeros("enc/mlp_b1", config.mlp_width)
    w("enc/mlp_w2", config.mlp_width, d)
    zeros("enc/mlp_b2", d)
    ones("enc/ln2_g", d)
    zeros("enc/ln2_b", d)

    w("dec/tok_emb", config.vocab_size, d)
    w("dec/pos_emb", config.max_len + 2, d)
    for nm in ("wq", "wk", "wv", "wo"):
        w(f"dec/self/{nm}", d, d)
    ones("dec/ln1_g", d)
    zeros("dec/ln1_b", d)
    w("dec/cross/wq", d, d)
    w("dec/cross/wk", cw, d)
    w("dec/cross/wv", cw, d)
    w("dec/cross/wo", d, d)
    ones("dec/ln2_g", d)
    zeros("dec/ln2_b", d)
    w("dec/mlp_w1", d, config.mlp_width)
    zeros("dec/mlp_b1", config.mlp_width)
    w("dec/mlp_w2", config.mlp_width, d)
    zeros("dec/mlp_b2", d)
    ones("dec/ln3_g", d)
    zeros("dec/ln3_b", d)
    w("dec/out_w", d, config.vocab_size)
    zeros("dec/out_b", config.vocab_size)
    return ParamStore(arrays)


# ---------------------------------------------------------------------------
# attention building blocks


def _split_heads(t: Tensor, heads: int) -> Tensor:
    # (..., T, d) -> (..., heads, T, d/heads)
    *lead, T, d = t.shape
    return t.reshape(*lead, T, heads, d // heads).swapaxes(-2, -3)


def _merge_heads(t: Tensor) -> Tensor:
    *lead, H, T, dh = t.shape
    return t.swapaxes(-2, -3).reshape(*lead, T, H * dh)


def _attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None) -> Tensor:
    dh = q.shape[-1]
    scores = q @ k.swapaxes(-1, -2) * (1.0 / math.sqrt(dh))
    if mask is not None:
        scores = scores + constant(mask, "attn-mask")
    return diffkit.softmax(scores, axis=-1) @ v


def _ln(params: ParamStore, prefix: str, t: Tensor) -> Tensor:
    return diffkit.layer_norm(t, params[prefix + "_g"], params[prefix + "_b"])


def _mlp(params: ParamStore, prefix: str, t: Tensor) -> Tensor:
    h = (t @ params[prefix + "_w1"] + params[prefix + "_b1"]).tanh()
    return h @ params[prefix + "_w2"] + params[prefix + "_b2"]


# ---------------------------------------------------------------------------
# encoder


def encode_features_batch(
    params: ParamStore,
    config: ModelConfig,
    feats: list[PlanFeatures],
) -> tuple[Tensor, np.ndarray]:
    """Batched context sets.

    Returns (vectors, key_mask): vectors is (B, C, context_width) with
    C = max steps * cells_per_step; key_mask is additive, 0 for real
    context rows and NEG_INF for padding, shaped (B, 1, 1, C).
    """
    B = len(feats)
    n2 = config.cells_per_step
    T = max(f.num_steps for f in feats)
    props = np.zeros((B, T, n2, hexworld.NUM_PROPS))
    orients = np.zeros((B, T), dtype=np.int64)
    step_mask = np.full((B, T), NEG_INF)
    for i, f in enumerate(feats):
        props[i, : f.num_steps] = f.props
        orients[i, : f.num_steps] = f.orients
        step_mask[i, : f.num_steps] = 0.0

    # summed property embeddings -> cell encodings
    cell_in = constant(props, "crop-props") @ params["enc/prop_emb"]
    cells = (cell_in @ params["enc/cell_w"] + params["enc/cell_b"]).tanh()
    # (B, T, n2, cell_width)

    flat = cells.reshape(B, T, n2 * config.cell_width)
    orient = params["enc/orient_emb"].gather(orients)
    step_in = concat([flat, orient], axis=-1)
    e = (step_in @ params["enc/step_w"] + params["enc/step_b"]).tanh()

    # one bidirectional self-attention layer over the plan steps
    mask = step_mask[:, None, None, :]
    q = _split_heads(e @ params["enc/attn/wq"], config.heads)
    k = _split_heads(e @ params["enc/attn/wk"], config.heads)
    v = _split_heads(e @ params["enc/attn/wv"], config.heads)
    mixed = _merge_heads(_attention(q, k, v, mask)) @ params["enc/attn/wo"]
    h = _ln(params, "enc/ln1", e + mixed)
    h = _ln(params, "enc/ln2", h + _mlp(params, "enc/mlp", h))
    # (B, T, width)

    # pair every step encoding with each of its crop-cell encodings
    h_rep = h.reshape(B, T, 1, config.width) + constant(
        np.zeros((B, T, n2, config.width))
    )
    ctx = concat([h_rep, cells], axis=-1).reshape(B, T * n2, config.context_width)
    key_mask = np.repeat(step_mask, n2, axis=1)[:, None, None, :]
    return ctx, key_mask


def encode(params: ParamStore, config: ModelConfig, state: WorldState, plan: Plan) -> AttentionSet:
    feats = PlanFeatures.from_state_plan(state, plan, config.crop_side)
    vectors, _ = encode_features_batch(params, config, [feats])
    return AttentionSet(
        vectors=vectors.reshape(feats.num_steps * config.cells_per_step, config.context_width),
        num_steps=feats.num_steps,
        cells_per_step=config.cells_per_step,
    )


# ---------------------------------------------------------------------------
# decoder


def _decoder_logits(
    params: ParamStore,
    config: ModelConfig,
    ctx: Tensor,
    ctx_mask: np.ndarray | None,
    input_ids: np.ndarray,
) -> Tensor:
    """Logits (B, L, V) for next-token prediction at every position."""
    B, L = input_ids.shape
    tok = params["dec/tok_emb"].gather(input_ids)
    pos = params["dec/pos_emb"].gather(np.arange(L))
    x = tok + pos

    causal = np.triu(np.full((L, L), NEG_INF), k=1)
    q = _split_heads(x @ params["dec/self/wq"], config.heads)
    k = _split_heads(x @ params["dec/self/wk"], config.heads)
    v = _split_heads(x @ params["dec/self/wv"], config.heads)
    x = _ln(
        params,
        "dec/ln1",
        x + _merge_heads(_attention(q, k, v, causal)) @ params["dec/self/wo"],
    )

    q = _split_heads(x @ params["dec/cross/wq"], config.heads)
    k = _split_heads(ctx @ params["dec/cross/wk"], config.heads)
    v = _split_heads(ctx @ params["dec/cross/wv"], config.heads)
    x = _ln(
        params,
        "dec/ln2",
        x + _merge_heads(_attention(q, k, v, ctx_mask)) @ params["dec/cross/wo"],
    )

    x = _ln(params, "dec/ln3", x + _mlp(params, "dec/mlp", x))
    return x @ params["dec/out_w"] + params["dec/out_b"]


def next_token_dist(
    params: ParamStore,
    config: ModelConfig,
    attn_set: AttentionSet,
    prefix_ids: list[int] | tuple[int, ...],
) -> np.ndarray:
    """Probability vector over the vocabulary for the next token."""
    if not prefix_ids or prefix_ids[0] != config.bos_id:
        raise ValueError("prefix must begin with BOS")
    with no_grad():
        ctx = constant(attn_set.vectors.value.reshape(1, -1, config.context_width))
        logits = _decoder_logits(
            params, config, ctx, None, np.asarray([prefix_ids], dtype=np.int64)
        )
        probs = diffkit.softmax(logits, axis=-1).value[0, -1]
    return probs


def sequence_logprob_batch(
    params: ParamStore,
    config: ModelConfig,
    feats: list[PlanFeatures],
    token_ids: list[tuple[int, ...]],
) -> Tensor:
    """Differentiable per-sequence log-probabilities, shape (B,).

    Sequences are instruction token ids without specials; BOS/EOS are added
    internally and EOS is scored.
    """
    ctx, ctx_mask = encode_features_batch(params, config, feats)
    B = len(token_ids)
    L = max(len(t) for t in token_ids) + 1
    inputs = np.full((B, L), config.pad_id, dtype=np.int64)
    targets = np.full((B, L), 0, dtype=np.int64)
    tmask = np.zeros((B, L))
    for i, toks in enumerate(token_ids):
        n = len(toks)
        inputs[i, 0] = config.bos_id
        inputs[i, 1 : n + 1] = toks
        targets[i, :n] = toks
        targets[i, n] = config.eos_id
        tmask[i, : n + 1] = 1.0
    logits = _decoder_logits(params, config, ctx, ctx_mask, inputs)
    logp = log_softmax(logits, axis=-1)
    onehot = np.zeros((B, L, config.vocab_size))
    rows = np.repeat(np.arange(B), L)
    cols = np.tile(np.arange(L), B)
    onehot[rows, cols, targets.reshape(-1)] = 1.0
    picked = (logp * constant(onehot * tmask[:, :, None])).sum(axis=-1)
    return picked.sum(axis=-1)


def sequence_logprob(
    params: ParamStore,
    config: ModelConfig,
    state: WorldState,
    plan: Plan,
    token_ids: tuple[int, ...],
) -> float:
    for t in token_ids:
        if not 0 <= t < config.vocab_size:
            raise ValueError(f"token id {t} out of vocabulary")
    with no_grad():
        feats = PlanFeatures.from_state_plan(state, plan, config.crop_side)
        out = sequence_logprob_batch(params, config, [feats], [tuple(token_ids)])
    return float(out.value[0])


def sample(
    params: ParamStore,
    config: ModelConfig,
    attn_set: AttentionSet,
    tau: float,
    seed,
    model_index: int = 0,
) -> SampledInstruction:
    """Temperature sampling; records the untempered model log-probability."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("temperature must be in (0, 1]")
    rng = random.Random(f"sample:{seed}")
    prefix = [config.bos_id]
    tokens: list[int] = []
    logprob_model = 0.0
    logprob_tempered = 0.0
    with no_grad():
        ctx = constant(attn_set.vectors.value.reshape(1, -1, config.context_width))
        for _ in range(config.max_len + 1):
            logits = _decoder_logits(
                params, config, ctx, None, np.asarray([prefix], dtype=np.int64)
            ).value[0, -1]
            logp = logits - _logsumexp_np(logits)
            tempered = logits / tau
            tlogp = tempered - _logsumexp_np(tempered)
            probs = np.exp(tlogp)
            tok = _draw(probs, rng)
            logprob_model += float(logp[tok])
            logprob_tempered += float(tlogp[tok])
            if tok == config.eos_id:
                break
            tokens.append(tok)
            prefix.append(tok)
            if len(tokens) >= config.max_len:
                break
    behavior = logprob_tempered if config.ips_tempered else logprob_model
    return SampledInstruction(
        token_ids=tuple(tokens),
        logprob_model=logprob_model,
        logprob_behavior=behavior,
        model_index=model_index,
    )


def _logsumexp_np(x: np.ndarray) -> float:
    m = np.max(x)
    return float(m + np.log(np.sum(np.exp(x - m))))


def _draw(probs: np.ndarray, rng: random.Random) -> int:
    r = rng.random()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if r < acc:
            return i
    return int(len(probs) - 1)


def ensemble_sample(
    members: list[ParamStore],
    config: ModelConfig,
    state: WorldState,
    plan: Plan,
    tau: float,
    seed,
) -> SampledInstruction:
    """Uniformly pick a member, sample from it, record its probability."""
    if not members:
        raise ValueError("ensemble must have at least one member")
    rng = random.Random(f"ensemble:{seed}")
    idx = rng.randrange(len(members))
    attn_set = encode(members[idx], config, state, plan)
    return sample(members[idx], config, attn_set, tau, seed, model_index=idx)
