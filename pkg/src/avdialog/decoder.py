"""Two-stage answer generation.

An encoder LSTM folds the attended audio vector and the F attended frame
vectors (each linearly projected to a shared input width) into the initial
state of the answer LSTM.  The answer LSTM then emits one word distribution
per step from the previous word embedding concatenated with the textual
context, followed by dropout, a fully connected layer and a softmax with
the padding token forced to probability zero.

Beam search scores hypotheses by summed log-probability (no length
normalization by default).  End-token candidates ranking inside the top
``width`` retire to a completed pool and the live set is refilled to
``width`` from the remaining continuations; the best completed hypothesis
wins, falling back to the best live one when nothing ever terminated by the
length cap.  Ties break toward the lexicographically smaller token
sequence, which makes a width-1 beam coincide with greedy decoding exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttendedSet
from .config import RunConfig
from .data import EOS, PAD, SOS
from .errors import ContractError
from .tensor import LstmCellParams, Tensor


@dataclass
class DecoderState:
    h: Tensor  # [B, hidden]
    c: Tensor  # [B, hidden]


@dataclass
class AnswerSequence:
    tokens: list[int]       # end token excluded
    log_prob: float
    terminated: bool        # True when the end token was emitted


@dataclass
class DecoderParams:
    word_embedding: Tensor            # shared with the embeddings stage
    answer_lstm: LstmCellParams
    out_w: Tensor                     # [hidden, vocab]
    out_b: Tensor                     # [vocab]
    encoder_lstm: LstmCellParams | None = None
    audio_proj_w: Tensor | None = None
    audio_proj_b: Tensor | None = None
    video_proj_w: Tensor | None = None
    video_proj_b: Tensor | None = None
    state_proj_w: Tensor | None = None
    state_proj_b: Tensor | None = None


def _param(reg, name, shape, dtype) -> Tensor:
    t = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, name=name)
    reg[name] = t
    return t


def _lstm_params(reg, prefix, input_size, hidden, dtype) -> LstmCellParams:
    return LstmCellParams(
        w_x=_param(reg, f"{prefix}.w_x", (input_size, 4 * hidden), dtype),
        w_h=_param(reg, f"{prefix}.w_h", (hidden, 4 * hidden), dtype),
        b=_param(reg, f"{prefix}.b", (4 * hidden,), dtype),
    )


def context_width(cfg: RunConfig) -> int:
    """Width of the per-step context concatenated to the word embedding."""
    if cfg.fusion_mode in ("q-first-state", "all-first-state"):
        return 0
    width = cfg.text_context_dim
    if cfg.fusion_mode == "all-concat-decoder-input":
        if "a" in cfg.modalities:
            width += cfg.audio_dim
        if "v" in cfg.modalities:
            width += cfg.frame_count * cfg.video_dim
    elif cfg.fusion_mode == "q-h-a-concat-input" and "a" in cfg.modalities:
        width += cfg.audio_dim
    return width


def build_decoder_params(cfg: RunConfig, word_embedding: Tensor, vocab_size: int,
                         reg: dict[str, Tensor], dtype) -> DecoderParams:
    hidden = cfg.decoder_hidden
    p = DecoderParams(
        word_embedding=word_embedding,
        answer_lstm=_lstm_params(reg, "decoder.answer_lstm",
                                 cfg.word_embed_dim + context_width(cfg), hidden, dtype),
        out_w=_param(reg, "decoder.out.w", (hidden, vocab_size), dtype),
        out_b=_param(reg, "decoder.out.b", (vocab_size,), dtype),
    )
    uses_encoder = cfg.fusion_mode in ("aud-vis-lstm", "video-audio-lstm", "q-h-a-concat-input")
    if uses_encoder and ("v" in cfg.modalities or "a" in cfg.modalities):
        p.encoder_lstm = _lstm_params(reg, "decoder.encoder_lstm",
                                      cfg.encoder_input_dim, hidden, dtype)
        if "a" in cfg.modalities and cfg.fusion_mode != "q-h-a-concat-input":
            p.audio_proj_w = _param(reg, "decoder.audio_proj.w",
                                    (cfg.audio_dim, cfg.encoder_input_dim), dtype)
            p.audio_proj_b = _param(reg, "decoder.audio_proj.b",
                                    (cfg.encoder_input_dim,), dtype)
        if "v" in cfg.modalities:
            p.video_proj_w = _param(reg, "decoder.video_proj.w",
                                    (cfg.video_dim, cfg.encoder_input_dim), dtype)
            p.video_proj_b = _param(reg, "decoder.video_proj.b",
                                    (cfg.encoder_input_dim,), dtype)
    if cfg.fusion_mode in ("q-first-state", "all-first-state"):
        width = cfg.question_hidden
        if cfg.fusion_mode == "all-first-state":
            width = cfg.text_context_dim
            if "a" in cfg.modalities:
                width += cfg.audio_dim
            if "v" in cfg.modalities:
                width += cfg.frame_count * cfg.video_dim
        p.state_proj_w = _param(reg, "decoder.state_proj.w", (width, hidden), dtype)
        p.state_proj_b = _param(reg, "decoder.state_proj.b", (hidden,), dtype)
    return p


def _zero_state(batch: int, hidden: int, dtype) -> DecoderState:
    return DecoderState(h=Tensor(np.zeros((batch, hidden), dtype=dtype)),
                        c=Tensor(np.zeros((batch, hidden), dtype=dtype)))


def encode_audio_visual(aset: AttendedSet, r_h: Tensor, p: DecoderParams,
                        cfg: RunConfig) -> tuple[DecoderState, int]:
    """Fold the attended vectors into the answer LSTM's initial state.

    Returns the state and the number of encoder LSTM steps executed
    (audio + one per frame under the default fusion).
    """
    batch = r_h.shape[0]
    dtype = r_h.dtype
    hidden = p.answer_lstm.hidden_size
    mode = cfg.fusion_mode

    if mode in ("q-first-state", "all-first-state"):
        if mode == "q-first-state":
            inputs = aset.attended["question"]
        else:
            pieces = [aset.attended["question"], r_h]
            if "audio" in aset.attended:
                pieces.append(aset.attended["audio"])
            pieces.extend(aset.attended[f"frame{i}"] for i in range(cfg.frame_count)
                          if f"frame{i}" in aset.attended)
            inputs = T.concat(pieces, axis=-1)
        h0 = T.add(T.matmul(inputs, p.state_proj_w), p.state_proj_b)
        return DecoderState(h=h0, c=Tensor(np.zeros((batch, hidden), dtype=dtype))), 0

    if mode == "all-concat-decoder-input" or p.encoder_lstm is None:
        return _zero_state(batch, hidden, dtype), 0

    steps: list[Tensor] = []
    audio_step = None
    if "audio" in aset.attended and p.audio_proj_w is not None:
        audio_step = T.add(T.matmul(aset.attended["audio"], p.audio_proj_w), p.audio_proj_b)
    frame_steps = []
    if p.video_proj_w is not None:
        for i in range(cfg.frame_count):
            name = f"frame{i}"
            if name in aset.attended:
                frame_steps.append(T.add(T.matmul(aset.attended[name], p.video_proj_w),
                                         p.video_proj_b))
    if mode == "video-audio-lstm":
        steps = frame_steps + ([audio_step] if audio_step is not None else [])
    elif mode == "q-h-a-concat-input":
        steps = frame_steps
    else:  # aud-vis-lstm
        steps = ([audio_step] if audio_step is not None else []) + frame_steps

    state = _zero_state(batch, hidden, dtype)
    for x in steps:
        h, c = T.lstm_cell(x, state.h, state.c, p.encoder_lstm)
        state = DecoderState(h=h, c=c)
    return state, len(steps)


def step_context(aset: AttendedSet, r_h: Tensor, cfg: RunConfig) -> Tensor | None:
    """The fixed context concatenated to every decoder input."""
    mode = cfg.fusion_mode
    if mode in ("q-first-state", "all-first-state"):
        return None
    pieces = [aset.a_t]
    if mode == "all-concat-decoder-input":
        if "audio" in aset.attended:
            pieces.append(aset.attended["audio"])
        pieces.extend(aset.attended[f"frame{i}"] for i in range(cfg.frame_count)
                      if f"frame{i}" in aset.attended)
    elif mode == "q-h-a-concat-input" and "audio" in aset.attended:
        pieces.append(aset.attended["audio"])
    return pieces[0] if len(pieces) == 1 else T.concat(pieces, axis=-1)


def decode_step(y_prev: np.ndarray, state: DecoderState, context: Tensor | None,
                p: DecoderParams, train: bool = False, rng=None,
                dropout_rate: float = 0.0) -> tuple[Tensor, DecoderState]:
    """One generation step: previous token ids [B] -> word distribution [B, V]."""
    emb = T.embedding(p.word_embedding, np.asarray(y_prev))
    x = emb if context is None else T.concat([emb, context], axis=-1)
    h, c = T.lstm_cell(x, state.h, state.c, p.answer_lstm)
    out = h
    if train and dropout_rate > 0:
        out = T.dropout(out, dropout_rate, rng)
    logits = T.add(T.matmul(out, p.out_w), p.out_b)
    vocab = p.out_w.shape[1]
    mask = np.ones(vocab, dtype=bool)
    mask[PAD] = False
    return T.softmax(logits, mask=mask), DecoderState(h=h, c=c)


def _step_logprobs(y_prev: int, state: DecoderState, context, p) -> tuple[np.ndarray, DecoderState]:
    probs, new_state = decode_step(np.array([y_prev]), state, context, p)
    with np.errstate(divide="ignore"):
        return np.log(probs.data[0].astype(np.float64)), new_state


def greedy_decode(state: DecoderState, context: Tensor | None, p: DecoderParams,
                  max_len: int) -> AnswerSequence:
    """Argmax decoding until the end token or the length cap."""
    tokens: list[int] = []
    score = 0.0
    prev = SOS
    with T.no_grad():
        for _ in range(max_len):
            logp, state = _step_logprobs(prev, state, context, p)
            tok = int(np.argmax(logp))
            score += float(logp[tok])
            if tok == EOS:
                return AnswerSequence(tokens, score, True)
            tokens.append(tok)
            prev = tok
    return AnswerSequence(tokens, score, False)


@dataclass
class _Hypothesis:
    tokens: tuple[int, ...]
    score: float
    state: DecoderState
    prev: int


def beam_search(state: DecoderState, context: Tensor | None, p: DecoderParams,
                width: int, max_len: int, length_normalize: bool = False) -> AnswerSequence:
    """Breadth-limited best-first decoding over summed log-probabilities."""
    if width < 1:
        raise ContractError("beam_search: width must be >= 1")
    if max_len <= 0:
        return AnswerSequence([], 0.0, False)

    live = [_Hypothesis(tokens=(), score=0.0, state=state, prev=SOS)]
    completed: list[tuple[float, tuple[int, ...]]] = []
    vocab = p.out_w.shape[1]

    with T.no_grad():
        for _ in range(max_len):
            candidates = []
            for hyp in live:
                logp, new_state = _step_logprobs(hyp.prev, hyp.state, context, p)
                for tok in range(vocab):
                    if tok == PAD:
                        continue
                    candidates.append((hyp.score + float(logp[tok]),
                                       hyp.tokens + (tok,), new_state))
            candidates.sort(key=lambda cand: (-cand[0], cand[1]))
            # only end-token candidates ranking inside the beam may retire;
            # anything looser would let a width-1 beam diverge from greedy
            for score, tokens, _ in candidates[:width]:
                if tokens[-1] == EOS:
                    completed.append((score, tokens[:-1]))
            live = [_Hypothesis(tokens=tokens, score=score, state=new_state,
                                prev=tokens[-1])
                    for score, tokens, new_state in candidates
                    if tokens[-1] != EOS][:width]
            if not live:
                break
            # every extension can only lower a live score, so once the best
            # completed hypothesis is strictly ahead the search is settled
            if (not length_normalize and completed
                    and max(c[0] for c in completed) > max(h.score for h in live)):
                break

    def rank(entry):
        score, tokens = entry
        denom = max(len(tokens) + 1, 1)
        return (-(score / denom) if length_normalize else -score, tokens)

    if completed:
        best = min(completed, key=rank)
        return AnswerSequence(list(best[1]), best[0], True)
    if not live:
        return AnswerSequence([], 0.0, False)
    best_live = min(((h.score, h.tokens) for h in live), key=rank)
    return AnswerSequence(list(best_live[1]), best_live[0], False)
