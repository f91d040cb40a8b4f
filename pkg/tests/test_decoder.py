"""Two-stage decoder: encoder steps, decode distributions, greedy vs beam."""

import numpy as np
import pytest

from avdialog import attention as A
from avdialog import decoder as Dec
from avdialog import tensor as T
from avdialog.attention import AttendedSet
from avdialog.config import RunConfig
from avdialog.data import EOS, PAD, SOS
from avdialog.decoder import DecoderState
from avdialog.errors import ContractError
from avdialog.tensor import Tensor


def small_cfg(**overrides):
    base = dict(
        frame_count=4, video_entities=4, video_dim=6, audio_dim=4,
        word_embed_dim=5, question_hidden=7, history_hidden=3,
        attention_local_dim=5, attention_pair_dim=5, encoder_input_dim=8,
        decoder_hidden=8, dropout=0.0, precision="float64",
    )
    base.update(overrides)
    return RunConfig(**base)


def build_decoder(cfg, vocab_size=9, seed=0, scale=0.4):
    reg = {}
    emb = Tensor(np.zeros((vocab_size, cfg.word_embed_dim)), requires_grad=True,
                 name="embeddings.word_embedding")
    reg["embeddings.word_embedding"] = emb
    params = Dec.build_decoder_params(cfg, emb, vocab_size, reg, np.float64)
    rng = np.random.default_rng(seed)
    for name in sorted(reg):
        reg[name].data[...] = rng.normal(0, scale, size=reg[name].data.shape)
    return params, reg


def fake_attended(cfg, seed=0, batch=1):
    rng = np.random.default_rng(seed)
    attended = {"audio": Tensor(rng.normal(size=(batch, cfg.audio_dim))),
                "question": Tensor(rng.normal(size=(batch, cfg.question_hidden)))}
    for i in range(cfg.frame_count):
        attended[f"frame{i}"] = Tensor(rng.normal(size=(batch, cfg.video_dim)))
    r_h = Tensor(rng.normal(size=(batch, cfg.history_hidden)))
    a_t = T.concat([attended["question"], r_h], axis=-1)
    return AttendedSet(attended=attended, a_t=a_t, probs={}), r_h


class TestEncoder:
    def test_f_plus_one_steps(self):
        cfg = small_cfg(frame_count=4)
        params, _ = build_decoder(cfg)
        aset, r_h = fake_attended(cfg)
        _, steps = Dec.encode_audio_visual(aset, r_h, params, cfg)
        assert steps == cfg.frame_count + 1

    def test_zero_params_zero_state(self):
        cfg = small_cfg()
        params, reg = build_decoder(cfg)
        for t in reg.values():
            t.data[...] = 0.0
        aset, r_h = fake_attended(cfg)
        state, _ = Dec.encode_audio_visual(aset, r_h, params, cfg)
        # zero weights: every gate input is zero, candidate 0, c stays 0
        np.testing.assert_array_equal(state.h.data, 0.0)
        np.testing.assert_array_equal(state.c.data, 0.0)

    def test_frame_order_sensitivity(self):
        cfg = small_cfg()
        params, _ = build_decoder(cfg, seed=2)
        aset, r_h = fake_attended(cfg, seed=3)
        state, _ = Dec.encode_audio_visual(aset, r_h, params, cfg)
        swapped = dict(aset.attended)
        swapped["frame0"], swapped["frame3"] = swapped["frame3"], swapped["frame0"]
        aset2 = AttendedSet(attended=swapped, a_t=aset.a_t, probs={})
        state2, _ = Dec.encode_audio_visual(aset2, r_h, params, cfg)
        assert not np.allclose(state.h.data, state2.h.data)

    def test_video_audio_ordering_differs(self):
        cfg = small_cfg()
        params, _ = build_decoder(cfg, seed=4)
        aset, r_h = fake_attended(cfg, seed=5)
        default_state, steps_a = Dec.encode_audio_visual(aset, r_h, params, cfg)
        cfg_rev = small_cfg(fusion_mode="video-audio-lstm")
        rev_state, steps_b = Dec.encode_audio_visual(aset, r_h, params, cfg_rev)
        assert steps_a == steps_b == cfg.frame_count + 1
        assert not np.allclose(default_state.h.data, rev_state.h.data)


class TestDecodeStep:
    def test_distribution_sums_to_one(self):
        cfg = small_cfg()
        params, _ = build_decoder(cfg, seed=6)
        aset, r_h = fake_attended(cfg, seed=7)
        context = Dec.step_context(aset, r_h, cfg)
        state = Dec._zero_state(1, cfg.decoder_hidden, np.float64)
        probs, _ = Dec.decode_step(np.array([SOS]), state, context, params)
        assert abs(probs.data.sum() - 1.0) < 1e-6

    def test_pad_probability_zero(self):
        cfg = small_cfg()
        params, _ = build_decoder(cfg, seed=8)
        aset, r_h = fake_attended(cfg, seed=9)
        context = Dec.step_context(aset, r_h, cfg)
        state = Dec._zero_state(1, cfg.decoder_hidden, np.float64)
        probs, _ = Dec.decode_step(np.array([SOS]), state, context, params)
        assert probs.data[0, PAD] == 0.0

    def test_default_input_width_is_word_plus_text_context(self):
        cfg = RunConfig()  # paper-default dimensions
        assert cfg.word_embed_dim + Dec.context_width(cfg) == 128 + 384 == 512

    def test_invalid_token_rejected(self):
        cfg = small_cfg()
        params, _ = build_decoder(cfg, vocab_size=9)
        aset, r_h = fake_attended(cfg)
        context = Dec.step_context(aset, r_h, cfg)
        state = Dec._zero_state(1, cfg.decoder_hidden, np.float64)
        with pytest.raises(ContractError):
            Dec.decode_step(np.array([99]), state, context, params)


def enumerate_best(params, state, context, max_len, vocab):
    """Brute-force argmax over every EOS-terminated sequence.

    Scores accumulate left to right exactly like the beam does, so agreement
    is exact rather than within a tolerance.
    """
    best = None  # (score, tokens)

    def recurse(prev, state, tokens, score, depth):
        nonlocal best
        logp, new_state = Dec._step_logprobs(prev, state, context, params)
        done = (score + float(logp[EOS]), tuple(tokens))
        if best is None or (-done[0], done[1]) < (-best[0], best[1]):
            best = done
        if depth == max_len - 1:
            return
        for tok in range(vocab):
            if tok in (PAD, EOS):
                continue
            recurse(tok, new_state, tokens + [tok], score + float(logp[tok]), depth + 1)

    with T.no_grad():
        recurse(SOS, state, [], 0.0, 0)
    return best


class TestBeamSearch:
    def _toy(self, monkeypatch, step1, step2):
        """Install hand-set step distributions keyed by the previous token."""
        def fake_decode_step(y_prev, state, context, p, **kwargs):
            table = {SOS: step1, **step2}
            probs = np.array([table[int(y_prev[0])]])
            return Tensor(probs), state
        monkeypatch.setattr(Dec, "decode_step", fake_decode_step)

    def test_spec_toy_prefers_early_eos(self, monkeypatch):
        # vocab: PAD SOS EOS a(3) b(4); p(a)=0.6 p(b)=0.4;
        # after a: p(EOS)=0.3 rest on a; after b: p(EOS)=0.9 rest on b
        self._toy(monkeypatch,
                  step1=[0.0, 0.0, 0.0, 0.6, 0.4],
                  step2={3: [0.0, 0.0, 0.3, 0.7, 0.0],
                         4: [0.0, 0.0, 0.9, 0.0, 0.1]})
        params = type("P", (), {"out_w": Tensor(np.zeros((1, 5)))})()
        state = DecoderState(h=Tensor(np.zeros((1, 1))), c=Tensor(np.zeros((1, 1))))
        seq = Dec.beam_search(state, None, params, width=2, max_len=2)
        assert seq.tokens == [4]
        assert seq.terminated
        np.testing.assert_allclose(np.exp(seq.log_prob), 0.36, atol=1e-12)

    def test_width_zero_rejected(self):
        cfg = small_cfg()
        params, _ = build_decoder(cfg)
        state = Dec._zero_state(1, cfg.decoder_hidden, np.float64)
        with pytest.raises(ContractError):
            Dec.beam_search(state, None, params, width=0, max_len=3)

    def test_max_len_zero_empty(self):
        cfg = small_cfg()
        params, _ = build_decoder(cfg)
        aset, r_h = fake_attended(cfg)
        context = Dec.step_context(aset, r_h, cfg)
        state = Dec._zero_state(1, cfg.decoder_hidden, np.float64)
        assert Dec.greedy_decode(state, context, params, 0).tokens == []
        assert Dec.beam_search(state, context, params, 3, 0).tokens == []

    @pytest.mark.parametrize("seed", range(8))
    def test_exhaustive_width_equals_brute_force(self, seed):
        vocab = 5
        cfg = small_cfg(frame_count=2)
        params, _ = build_decoder(cfg, vocab_size=vocab, seed=seed, scale=1.0)
        aset, r_h = fake_attended(cfg, seed=seed + 50)
        context = Dec.step_context(aset, r_h, cfg)
        state = Dec._zero_state(1, cfg.decoder_hidden, np.float64)
        max_len = 3
        width = vocab ** max_len
        seq = Dec.beam_search(state, context, params, width, max_len)
        score, tokens = enumerate_best(params, state, context, max_len, vocab)
        assert tuple(seq.tokens) == tokens
        assert seq.log_prob == score  # identical float accumulation order

    @pytest.mark.parametrize("seed", range(8))
    def test_width_one_equals_greedy(self, seed):
        cfg = small_cfg(frame_count=2)
        params, _ = build_decoder(cfg, vocab_size=7, seed=seed, scale=1.2)
        aset, r_h = fake_attended(cfg, seed=seed + 80)
        context = Dec.step_context(aset, r_h, cfg)
        state = Dec._zero_state(1, cfg.decoder_hidden, np.float64)
        greedy = Dec.greedy_decode(state, context, params, 6)
        beam = Dec.beam_search(state, context, params, 1, 6)
        assert beam.tokens == greedy.tokens
        assert beam.log_prob == greedy.log_prob
        assert beam.terminated == greedy.terminated

    def test_greedy_deterministic(self):
        cfg = small_cfg()
        params, _ = build_decoder(cfg, seed=11)
        aset, r_h = fake_attended(cfg, seed=12)
        context = Dec.step_context(aset, r_h, cfg)
        state = Dec._zero_state(1, cfg.decoder_hidden, np.float64)
        a = Dec.greedy_decode(state, context, params, 8)
        b = Dec.greedy_decode(state, context, params, 8)
        assert a.tokens == b.tokens and a.log_prob == b.log_prob

    @pytest.mark.parametrize("seed", range(6))
    def test_exhaustive_width_bounds_terminated_scores(self, seed):
        """The exhaustive beam returns the global terminated argmax, so its
        score upper-bounds every terminated result at any narrower width.

        (Raw width-to-width monotonicity is not a theorem once finished
        hypotheses are preferred over live ones: a narrow beam may fall back
        to an unterminated sequence whose running score carries no
        end-token factor, and terminated results at intermediate widths may
        descend from different survivor sets.)
        """
        cfg = small_cfg(frame_count=2)
        params, _ = build_decoder(cfg, vocab_size=6, seed=seed + 20, scale=1.0)
        aset, r_h = fake_attended(cfg, seed=seed + 90)
        context = Dec.step_context(aset, r_h, cfg)
        state = Dec._zero_state(1, cfg.decoder_hidden, np.float64)
        results = [Dec.beam_search(state, context, params, w, 3)
                   for w in (1, 2, 4, 8)]
        exhaustive = Dec.beam_search(state, context, params, 6 ** 3, 3)
        assert exhaustive.terminated
        for res in results:
            if res.terminated:
                assert exhaustive.log_prob >= res.log_prob - 1e-12


class TestFactorization:
    def test_conditionals_partition_probability_one(self):
        """Sum over EOS-terminated sequences plus live mass at the cap == 1."""
        vocab = 5
        cfg = small_cfg(frame_count=2)
        params, _ = build_decoder(cfg, vocab_size=vocab, seed=3, scale=0.8)
        aset, r_h = fake_attended(cfg, seed=4)
        context = Dec.step_context(aset, r_h, cfg)
        state = Dec._zero_state(1, cfg.decoder_hidden, np.float64)
        max_len = 3
        total = 0.0

        def recurse(prev, state, prob, depth):
            nonlocal total
            if depth == max_len:
                total += prob  # unterminated mass at the cap
                return
            with T.no_grad():
                probs, new_state = Dec.decode_step(np.array([prev]), state,
                                                   context, params)
            row = probs.data[0]
            total += prob * row[EOS]
            for tok in range(vocab):
                if tok in (PAD, EOS):
                    continue
                recurse(tok, new_state, prob * row[tok], depth + 1)

        recurse(SOS, state, 1.0, 0)
        assert abs(total - 1.0) < 1e-5
