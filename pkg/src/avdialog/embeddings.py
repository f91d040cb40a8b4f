"""Per-modality input representations.

Question tokens run through a word embedding and a single LSTM whose full
hidden-state sequence is kept (one entity per word).  History pairs run
through a two-layer LSTM each, then a second LSTM folds the pair vectors
into one history vector.  Video and audio features are refined by
kernel-size-1 convolutions (one weight matrix applied at every spatial cell
/ time step), shared across all frames for video.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import Batch
from .errors import ContractError
from .tensor import LstmCellParams, Tensor


@dataclass
class ModalityBundle:
    """Everything the attention stage consumes, plus entity masks."""

    r_q: Tensor                 # [B, nQ, d_Q] all question hidden states
    q_mask: np.ndarray          # [B, nQ]
    q_final: Tensor             # [B, d_Q] last real hidden state
    r_h: Tensor                 # [B, d_H]
    r_v: Tensor | None          # [B, F, n_V, d_V]
    r_a: Tensor | None          # [B, n_A, d_A]
    a_mask: np.ndarray | None   # [B, n_A]


@dataclass
class EmbeddingParams:
    word_embedding: Tensor
    question_lstm: LstmCellParams
    history_pair_lstm1: LstmCellParams | None
    history_pair_lstm2: LstmCellParams | None
    history_lstm: LstmCellParams | None
    video_conv_w: Tensor | None
    video_conv_b: Tensor | None
    audio_conv_w: Tensor | None
    audio_conv_b: Tensor | None


def _param(reg: dict[str, Tensor], name: str, shape, dtype) -> Tensor:
    t = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, name=name)
    reg[name] = t
    return t


def _lstm_params(reg, prefix, input_size, hidden, dtype) -> LstmCellParams:
    return LstmCellParams(
        w_x=_param(reg, f"{prefix}.w_x", (input_size, 4 * hidden), dtype),
        w_h=_param(reg, f"{prefix}.w_h", (hidden, 4 * hidden), dtype),
        b=_param(reg, f"{prefix}.b", (4 * hidden,), dtype),
    )


def build_embedding_params(cfg: RunConfig, vocab_size: int, reg: dict[str, Tensor],
                           dtype) -> EmbeddingParams:
    emb = _param(reg, "embeddings.word_embedding", (vocab_size, cfg.word_embed_dim), dtype)
    q_lstm = _lstm_params(reg, "embeddings.question_lstm", cfg.word_embed_dim,
                          cfg.question_hidden, dtype)
    hist1 = hist2 = hist = None
    if "h" in cfg.modalities:
        hist1 = _lstm_params(reg, "embeddings.history_pair_lstm1", cfg.word_embed_dim,
                             cfg.history_hidden, dtype)
        hist2 = _lstm_params(reg, "embeddings.history_pair_lstm2", cfg.history_hidden,
                             cfg.history_hidden, dtype)
        hist = _lstm_params(reg, "embeddings.history_lstm", cfg.history_hidden,
                            cfg.history_hidden, dtype)
    vw = vb = aw = ab = None
    if "v" in cfg.modalities:
        vw = _param(reg, "embeddings.video_conv.w", (cfg.video_dim, cfg.video_dim), dtype)
        vb = _param(reg, "embeddings.video_conv.b", (cfg.video_dim,), dtype)
    if "a" in cfg.modalities:
        aw = _param(reg, "embeddings.audio_conv.w", (cfg.audio_dim, cfg.audio_dim), dtype)
        ab = _param(reg, "embeddings.audio_conv.b", (cfg.audio_dim,), dtype)
    return EmbeddingParams(emb, q_lstm, hist1, hist2, hist, vw, vb, aw, ab)


def lstm_sequence(x: Tensor, mask: np.ndarray, p: LstmCellParams) -> tuple[Tensor, Tensor]:
    """Run an LSTM over x [B, T, in] with a carry mask.

    Masked steps leave (h, c) untouched, so the final state equals the state
    at each row's true length and padding cannot leak into shorter rows.
    Returns (all hidden states [B, T, H], final hidden [B, H]).
    """
    batch, steps, _ = x.shape
    hid = p.hidden_size
    h = Tensor(np.zeros((batch, hid), dtype=x.dtype))
    c = Tensor(np.zeros((batch, hid), dtype=x.dtype))
    outputs = []
    for t in range(steps):
        x_t = x[:, t, :]
        h_new, c_new = T.lstm_cell(x_t, h, c, p)
        m = mask[:, t:t + 1].astype(x.dtype)
        keep = 1.0 - m
        h = T.add(T.mul(h_new, m), T.mul(h, keep))
        c = T.add(T.mul(c_new, m), T.mul(c, keep))
        outputs.append(T.reshape(h, (batch, 1, hid)))
    states = T.concat(outputs, axis=1)
    return states, h


def embed_question(ids: np.ndarray, mask: np.ndarray, p: EmbeddingParams,
                   train: bool, rng, dropout_rate: float) -> tuple[Tensor, Tensor]:
    """Token ids [B, nQ] -> (hidden-state sequence [B, nQ, d_Q], final [B, d_Q])."""
    if ids.shape[1] == 0 or not mask.any(axis=1).all():
        raise ContractError("embed_question: every question needs at least one token")
    emb = T.embedding(p.word_embedding, ids)
    states, final = lstm_sequence(emb, mask, p.question_lstm)
    if train and dropout_rate > 0:
        states = T.dropout(states, dropout_rate, rng)
        final = T.dropout(final, dropout_rate, rng)
    return states, final


def embed_history(history: np.ndarray, token_mask: np.ndarray, pair_mask: np.ndarray,
                  p: EmbeddingParams, train: bool, rng, dropout_rate: float) -> Tensor:
    """Question-answer pairs [B, T, nH] -> history vector [B, d_H].

    Rows with zero pairs come out as the zero vector (zero-step LSTM state).
    """
    batch, t_max, n_h = history.shape
    flat_ids = history.reshape(batch * t_max, n_h)
    flat_mask = token_mask.reshape(batch * t_max, n_h)
    emb = T.embedding(p.word_embedding, flat_ids)
    states1, _ = lstm_sequence(emb, flat_mask, p.history_pair_lstm1)
    _, pair_final = lstm_sequence(states1, flat_mask, p.history_pair_lstm2)
    if train and dropout_rate > 0:
        pair_final = T.dropout(pair_final, dropout_rate, rng)
    pair_seq = T.reshape(pair_final, (batch, t_max, p.history_pair_lstm2.hidden_size))
    _, r_h = lstm_sequence(pair_seq, pair_mask, p.history_lstm)
    if train and dropout_rate > 0:
        r_h = T.dropout(r_h, dropout_rate, rng)
    return r_h


def _pointwise_conv(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Channel-mixing 1-D conv (kernel size 1) applied at every position."""
    lead = x.shape[:-1]
    d_in = x.shape[-1]
    flat = T.reshape(x, (-1, d_in))
    out = T.add(T.matmul(flat, w), b)
    return T.reshape(out, lead + (w.shape[1],))


def embed_video(features: np.ndarray, p: EmbeddingParams, dtype) -> Tensor:
    """Sampled frame features [B, F, n_V, d_V]; one conv shared by all frames."""
    if features.ndim != 4 or features.shape[-1] != p.video_conv_w.shape[0]:
        raise ContractError(f"embed_video: bad feature shape {features.shape}")
    return _pointwise_conv(Tensor(features.astype(dtype)), p.video_conv_w, p.video_conv_b)


def embed_audio(features: np.ndarray, mask: np.ndarray, p: EmbeddingParams, dtype) -> Tensor:
    """Audio rows [B, n_A, d_A]; padded rows stay exactly zero."""
    if features.ndim != 3 or features.shape[-1] != p.audio_conv_w.shape[0]:
        raise ContractError(f"embed_audio: bad feature shape {features.shape}")
    out = _pointwise_conv(Tensor(features.astype(dtype)), p.audio_conv_w, p.audio_conv_b)
    return T.mul(out, mask[:, :, None].astype(dtype))


def compute_bundle(batch: Batch, p: EmbeddingParams, cfg: RunConfig,
                   train: bool, rng) -> ModalityBundle:
    dtype = np.float32 if cfg.precision == "float32" else np.float64
    r_q, q_final = embed_question(batch.question, batch.question_mask, p,
                                  train, rng, cfg.dropout)
    if "h" in cfg.modalities:
        r_h = embed_history(batch.history, batch.history_token_mask,
                            batch.history_pair_mask, p, train, rng, cfg.dropout)
    else:
        r_h = Tensor(np.zeros((batch.size, cfg.history_hidden), dtype=dtype))
    r_v = embed_video(batch.video, p, dtype) if "v" in cfg.modalities else None
    r_a = embed_audio(batch.audio, batch.audio_mask, p, dtype) if "a" in cfg.modalities else None
    return ModalityBundle(
        r_q=r_q, q_mask=batch.question_mask, q_final=q_final, r_h=r_h,
        r_v=r_v, r_a=r_a, a_mask=batch.audio_mask if "a" in cfg.modalities else None,
    )
