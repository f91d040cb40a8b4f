"""End-to-end model: embeddings -> attention -> encoder -> answer decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import attention as A
from . import decoder as D
from . import embeddings as E
from .config import RunConfig
from .data import Batch, Vocabulary
from .tensor import Tensor


@dataclass
class ForwardResult:
    loss: Tensor
    step_probs: list[Tensor]        # one [B, V] distribution per target position
    trace: dict = field(default_factory=dict)


class Model:
    """Holds the parameter registry and wires the stages together."""

    def __init__(self, cfg: RunConfig, vocab: Vocabulary):
        cfg.validate()
        self.config = cfg
        self.vocab = vocab
        self.dtype = np.float32 if cfg.precision == "float32" else np.float64
        self.registry: dict[str, Tensor] = {}
        self.embeddings = E.build_embedding_params(cfg, len(vocab), self.registry, self.dtype)
        self.attention = A.build_attention_params(cfg, self.registry, self.dtype) \
            if cfg.attention else None
        self.decoder = D.build_decoder_params(cfg, self.embeddings.word_embedding,
                                              len(vocab), self.registry, self.dtype)
        self.rng = np.random.default_rng(cfg.seed)

    def parameters(self) -> dict[str, Tensor]:
        return self.registry

    def encode_batch(self, batch: Batch, train: bool):
        """Shared front half: bundle, attended set, initial decoder state."""
        cfg = self.config
        bundle = E.compute_bundle(batch, self.embeddings, cfg, train, self.rng)
        aset = A.run_attention(bundle, self.attention, cfg)
        state, steps = D.encode_audio_visual(aset, bundle.r_h, self.decoder, cfg)
        context = D.step_context(aset, bundle.r_h, cfg)
        trace = {
            "aud_vis_steps": steps,
            "modalities": A.modality_names(cfg),
            "context_width": 0 if context is None else int(context.shape[-1]),
            "a_t_width": int(aset.a_t.shape[-1]),
        }
        return bundle, aset, state, context, trace

    def forward_batch(self, batch: Batch, train: bool) -> ForwardResult:
        """Teacher-forced pass producing per-step distributions and the loss."""
        from .training import sequence_loss

        cfg = self.config
        _, _, state, context, trace = self.encode_batch(batch, train)
        step_probs = []
        for i in range(batch.answer_input.shape[1]):
            probs, state = D.decode_step(
                batch.answer_input[:, i], state, context, self.decoder,
                train=train, rng=self.rng, dropout_rate=cfg.dropout,
            )
            step_probs.append(probs)
        loss = sequence_loss(step_probs, batch.answer_target, batch.target_mask)
        return ForwardResult(loss=loss, step_probs=step_probs, trace=trace)

    def generate(self, batch: Batch, beam_width: int | None = None,
                 max_len: int | None = None):
        """Beam-decode one answer per batch row (rows decoded one at a time).

        Returns a list of (AnswerSequence, attention map dict) pairs.
        """
        cfg = self.config
        width = cfg.beam_width if beam_width is None else beam_width
        cap = cfg.max_answer_len if max_len is None else max_len
        out = []
        for i in range(batch.size):
            row = _slice_batch(batch, i)
            bundle, aset, state, context, _ = self.encode_batch(row, train=False)
            seq = D.beam_search(state, context, self.decoder, width, cap,
                                length_normalize=cfg.length_normalize)
            masks = {"question": bundle.q_mask, "audio": bundle.a_mask}
            maps = A.attention_maps(aset, masks)
            out.append((seq, maps[0] if maps else {}))
        return out


def _slice_batch(batch: Batch, i: int) -> Batch:
    s = slice(i, i + 1)
    return Batch(
        video_ids=batch.video_ids[s],
        question=batch.question[s], question_mask=batch.question_mask[s],
        history=batch.history[s], history_token_mask=batch.history_token_mask[s],
        history_pair_mask=batch.history_pair_mask[s],
        video=batch.video[s], audio=batch.audio[s], audio_mask=batch.audio_mask[s],
        answer_input=batch.answer_input[s], answer_target=batch.answer_target[s],
        target_mask=batch.target_mask[s], examples=batch.examples[s],
    )
