"""Numeric self-checks: a tiny end-to-end model vs finite differences."""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .data import Batch, Vocabulary
from .errors import ContractError
from .model import Model
from .tensor import grad_check
from .training import init_weights


def micro_config(frame_count: int = 2) -> RunConfig:
    """A full-pipeline configuration with every dimension at or below 8."""
    return RunConfig(
        frame_count=frame_count, video_entities=4, video_dim=8, audio_dim=4,
        word_embed_dim=4, question_hidden=8, history_hidden=4,
        attention_local_dim=8, attention_pair_dim=8,
        encoder_input_dim=8, decoder_hidden=8, question_prior_len=4,
        dropout=0.0, precision="float64", batch_size=2,
    )


def micro_vocab(size: int = 10) -> Vocabulary:
    if size < 5:
        raise ContractError("micro_vocab: need at least one real word")
    return Vocabulary([f"w{i}" for i in range(size - 4)])


def random_micro_batch(cfg: RunConfig, vocab_size: int, rng: np.random.Generator,
                       batch_size: int = 1) -> Batch:
    """A synthetic batch with every surface exercised (history, audio pad)."""
    b = batch_size
    n_q, n_h, t_hist, n_a, n_ans = 3, 4, 2, 3, 2
    question = rng.integers(4, vocab_size, size=(b, n_q))
    history = rng.integers(4, vocab_size, size=(b, t_hist, n_h))
    token_mask = np.ones((b, t_hist, n_h), dtype=bool)
    token_mask[:, :, -1] = False
    pair_mask = np.ones((b, t_hist), dtype=bool)
    pair_mask[:, -1] = False
    audio_mask = np.ones((b, n_a), dtype=bool)
    audio_mask[:, -1] = False
    audio = rng.normal(size=(b, n_a, cfg.audio_dim)).astype(np.float32)
    audio[~audio_mask] = 0.0
    answer_body = rng.integers(4, vocab_size, size=(b, n_ans))
    return Batch(
        video_ids=[f"micro{i}" for i in range(b)],
        question=question,
        question_mask=np.ones((b, n_q), dtype=bool),
        history=history,
        history_token_mask=token_mask,
        history_pair_mask=pair_mask,
        video=rng.normal(size=(b, cfg.frame_count, cfg.video_entities,
                               cfg.video_dim)).astype(np.float32),
        audio=audio,
        audio_mask=audio_mask,
        answer_input=np.concatenate([np.ones((b, 1), dtype=np.int64), answer_body], axis=1),
        answer_target=np.concatenate([answer_body, np.full((b, 1), 2, dtype=np.int64)], axis=1),
        target_mask=np.ones((b, n_ans + 1), dtype=bool),
        examples=[],
    )


def full_model_grad_check(seed: int = 0, eps: float = 1e-5) -> float:
    """Analytic vs central-difference gradients through the whole pipeline.

    Embeddings, attention, both LSTMs and the loss in float64 with dropout
    off; returns the max relative error over every trainable scalar.
    """
    cfg = micro_config()
    vocab = micro_vocab()
    model = Model(cfg, vocab)
    init_weights(model.parameters(), "xavier", seed)
    batch = random_micro_batch(cfg, len(vocab), np.random.default_rng(seed + 1), batch_size=2)
    params = [model.parameters()[name] for name in sorted(model.parameters())]
    return grad_check(lambda: model.forward_batch(batch, train=False).loss, params, eps=eps)
