"""Factor-graph attention: formula oracles, masking, invariances."""

import numpy as np
import pytest

from avdialog import attention as A
from avdialog import tensor as T
from avdialog.config import RunConfig
from avdialog.embeddings import ModalityBundle
from avdialog.errors import ContractError
from avdialog.tensor import Tensor


def small_cfg(**overrides):
    base = dict(
        frame_count=2, video_entities=4, video_dim=6, audio_dim=4,
        word_embed_dim=5, question_hidden=7, history_hidden=3,
        attention_local_dim=5, attention_pair_dim=5, encoder_input_dim=8,
        decoder_hidden=8, dropout=0.0, precision="float64",
        question_prior_len=8,
    )
    base.update(overrides)
    return RunConfig(**base)


def build_params(cfg, seed=0, scale=0.5):
    reg = {}
    params = A.build_attention_params(cfg, reg, np.float64)
    rng = np.random.default_rng(seed)
    for name in sorted(reg):
        reg[name].data[...] = rng.normal(0, scale, size=reg[name].data.shape)
    return params, reg


def random_bundle(cfg, seed=0, batch=1, n_q=3, n_a=3, a_pad=1):
    rng = np.random.default_rng(seed)
    q_mask = np.ones((batch, n_q), dtype=bool)
    a_mask = np.ones((batch, n_a), dtype=bool)
    if a_pad:
        a_mask[:, -a_pad:] = False
    r_a = rng.normal(size=(batch, n_a, cfg.audio_dim))
    r_a[~a_mask] = 0.0
    return ModalityBundle(
        r_q=Tensor(rng.normal(size=(batch, n_q, cfg.question_hidden))),
        q_mask=q_mask,
        q_final=Tensor(rng.normal(size=(batch, cfg.question_hidden))),
        r_h=Tensor(rng.normal(size=(batch, cfg.history_hidden))),
        r_v=Tensor(rng.normal(size=(batch, cfg.frame_count, cfg.video_entities,
                                     cfg.video_dim))),
        r_a=Tensor(r_a),
        a_mask=a_mask,
    )


class TestLocalEvidence:
    def test_analytic_example(self):
        # w=1, V=I, v=ones: entities [1,-2] -> relu [1,0] -> score 1
        cfg = small_cfg(video_dim=2, attention_local_dim=2)
        params, _ = build_params(cfg)
        ma = params.per["frame0"]
        ma.V.data[...] = np.eye(2)
        ma.v.data[...] = 1.0
        ma.w_local.data[...] = 1.0
        r = Tensor(np.array([[[1.0, -2.0]]]))
        out = A.local_evidence(r, ma)
        np.testing.assert_allclose(out.data, [[1.0]])

    def test_zero_weight_kills_evidence(self):
        cfg = small_cfg()
        params, _ = build_params(cfg, seed=1)
        ma = params.per["question"]
        ma.w_local.data[...] = 0.0
        r = Tensor(np.random.default_rng(0).normal(size=(2, 3, cfg.question_hidden)))
        assert not A.local_evidence(r, ma).data.any()

    def test_random_vs_scalar_loop(self):
        cfg = small_cfg()
        params, _ = build_params(cfg, seed=2)
        ma = params.per["audio"]
        rng = np.random.default_rng(3)
        r = rng.normal(size=(2, 4, cfg.audio_dim))
        out = A.local_evidence(Tensor(r), ma).data
        for b in range(2):
            for k in range(4):
                hidden = np.maximum(r[b, k] @ ma.V.data, 0.0)
                expected = ma.w_local.data.item() * float(hidden @ ma.v.data[:, 0])
                assert abs(out[b, k] - expected) < 1e-12


def cross_oracle(cfg, params, sources, name):
    """Brute-force double loop over (k, source, j) with cosine terms."""
    r, _ = sources[name]
    batch, n = r.shape[0], r.shape[1]
    i = params.index[name]
    out = np.zeros((batch, n))
    l_mat = params.per[name].L.data
    for b in range(batch):
        for k in range(n):
            lk = l_mat.T @ r.data[b, k]
            lk_n = lk / np.linalg.norm(lk) if np.linalg.norm(lk) > 1e-12 else lk * 0
            for other, (r_b, mask_b) in sources.items():
                j_idx = range(r_b.shape[1]) if mask_b is None else np.where(mask_b[b])[0]
                j_idx = list(j_idx)
                if not j_idx:
                    continue
                w = float(params.pair_weights.data[i, params.index[other]])
                acc = 0.0
                for j in j_idx:
                    rj = params.per[other].R.data.T @ r_b.data[b, j]
                    norm = np.linalg.norm(rj)
                    rj_n = rj / norm if norm > 1e-12 else rj * 0
                    acc += float(lk_n @ rj_n)
                out[b, k] += w * acc / len(j_idx)
    return out


def collect_sources(bundle, cfg):
    sources = {"audio": (bundle.r_a, bundle.a_mask), "question": (bundle.r_q, bundle.q_mask)}
    for i in range(cfg.frame_count):
        sources[f"frame{i}"] = (bundle.r_v[:, i], None)
    return sources


class TestCrossEvidence:
    def test_identical_unit_vectors_give_one(self):
        # single other source whose projections match this source's exactly
        cfg = small_cfg(modalities=["q"], attention=True)
        params, _ = build_params(cfg)
        ma = params.per["question"]
        ma.L.data[...] = np.eye(cfg.question_hidden, cfg.attention_pair_dim)
        ma.R.data[...] = np.eye(cfg.question_hidden, cfg.attention_pair_dim)
        params.pair_weights.data[...] = 1.0
        vec = np.zeros(cfg.question_hidden)
        vec[0] = 3.0  # any positive multiple of one basis vector
        r = Tensor(np.tile(vec, (1, 4, 1)))
        means = {"question": A.unit_mean(r, None, ma.R)}
        out = A.cross_evidence("question", r, params, means)
        np.testing.assert_allclose(out.data, np.ones((1, 4)), atol=1e-12)

    def test_zero_pair_weights(self):
        cfg = small_cfg()
        params, _ = build_params(cfg, seed=4)
        params.pair_weights.data[...] = 0.0
        bundle = random_bundle(cfg, seed=5)
        sources = collect_sources(bundle, cfg)
        means = {n: A.unit_mean(r, m, params.per[n].R) for n, (r, m) in sources.items()}
        out = A.cross_evidence("question", bundle.r_q, params, means)
        assert not out.data.any()

    @pytest.mark.parametrize("seed", range(4))
    def test_random_vs_double_loop_oracle(self, seed):
        cfg = small_cfg()
        params, _ = build_params(cfg, seed=seed)
        bundle = random_bundle(cfg, seed=seed + 10, batch=2)
        sources = collect_sources(bundle, cfg)
        means = {n: A.unit_mean(r, m, params.per[n].R) for n, (r, m) in sources.items()}
        for name in params.names:
            r, _ = sources[name]
            got = A.cross_evidence(name, r, params, means).data
            want = cross_oracle(cfg, params, sources, name)
            np.testing.assert_allclose(got, want, atol=1e-10)


class TestAttentionProbs:
    def test_all_zero_components_uniform(self):
        out = A.attention_probs(None, None, None, Tensor(np.ones((1, 1))), None,
                                (1, 4), np.float64)
        np.testing.assert_allclose(out.data, [[0.25] * 4])

    def test_ln3_logits(self):
        local = Tensor(np.array([[0.0, np.log(3)]]))
        out = A.attention_probs(None, local, None, Tensor(np.ones((1, 1))), None,
                                (1, 2), np.float64)
        np.testing.assert_allclose(out.data, [[0.25, 0.75]], atol=1e-12)

    def test_mask_renormalizes(self):
        local = Tensor(np.zeros((1, 3)))
        mask = np.array([[True, False, True]])
        out = A.attention_probs(None, local, None, Tensor(np.ones((1, 1))), mask,
                                (1, 3), np.float64)
        np.testing.assert_allclose(out.data, [[0.5, 0.0, 0.5]])
        assert out.data[0, 1] == 0.0

    def test_all_masked_rejected(self):
        local = Tensor(np.zeros((1, 3)))
        with pytest.raises(ContractError):
            A.attention_probs(None, local, None, Tensor(np.ones((1, 1))),
                              np.zeros((1, 3), dtype=bool), (1, 3), np.float64)


class TestAttend:
    def test_one_hot_picks_entity(self):
        r = Tensor(np.arange(12.0).reshape(1, 3, 4))
        p = Tensor(np.array([[0.0, 1.0, 0.0]]))
        np.testing.assert_allclose(A.attend(r, p).data, r.data[:, 1])

    def test_even_mixture(self):
        r = Tensor(np.array([[[2.0, 0.0], [0.0, 4.0]]]))
        p = Tensor(np.array([[0.5, 0.5]]))
        np.testing.assert_allclose(A.attend(r, p).data, [[1.0, 2.0]])

    def test_output_in_convex_hull(self):
        rng = np.random.default_rng(0)
        r = rng.normal(size=(1, 5, 3))
        p = rng.dirichlet(np.ones(5))[None]
        out = A.attend(Tensor(r), Tensor(p)).data
        assert (out >= r.min(axis=1) - 1e-12).all()
        assert (out <= r.max(axis=1) + 1e-12).all()


class TestRunAttention:
    def test_six_distributions_for_four_frames(self):
        cfg = small_cfg(frame_count=4)
        params, _ = build_params(cfg)
        bundle = random_bundle(cfg, seed=1)
        aset = A.run_attention(bundle, params, cfg)
        assert len(aset.probs) == 6  # audio + question + 4 frames
        for p in aset.probs.values():
            np.testing.assert_allclose(p.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_textual_context_is_concat(self):
        cfg = small_cfg()
        params, _ = build_params(cfg, seed=2)
        bundle = random_bundle(cfg, seed=3)
        aset = A.run_attention(bundle, params, cfg)
        assert aset.a_t.shape == (1, cfg.question_hidden + cfg.history_hidden)
        np.testing.assert_array_equal(aset.a_t.data[:, cfg.question_hidden:],
                                      bundle.r_h.data)

    def test_no_attention_mode_uses_means(self):
        cfg = small_cfg(attention=False)
        bundle = random_bundle(cfg, seed=4)
        aset = A.run_attention(bundle, None, cfg)
        np.testing.assert_allclose(aset.attended["frame0"].data,
                                   bundle.r_v.data[:, 0].mean(axis=1), atol=1e-12)
        expect_audio = bundle.r_a.data[0][bundle.a_mask[0]].mean(axis=0)
        np.testing.assert_allclose(aset.attended["audio"].data[0], expect_audio, atol=1e-12)
        np.testing.assert_array_equal(aset.attended["question"].data,
                                      bundle.q_final.data)
        assert aset.probs == {}

    def test_entity_rescaling_leaves_cross_unchanged(self):
        """Doubling every entity of one source must not move any other
        source's cross evidence (normalized cosines)."""
        cfg = small_cfg()
        params, _ = build_params(cfg, seed=5)
        cfg_local_off = small_cfg(local_evidence=False)
        bundle = random_bundle(cfg, seed=6)
        base = A.run_attention(bundle, params, cfg_local_off)
        scaled = ModalityBundle(
            r_q=bundle.r_q, q_mask=bundle.q_mask, q_final=bundle.q_final,
            r_h=bundle.r_h, r_v=Tensor(bundle.r_v.data * 2.0),
            r_a=bundle.r_a, a_mask=bundle.a_mask,
        )
        after = A.run_attention(scaled, params, cfg_local_off)
        np.testing.assert_allclose(after.probs["question"].data,
                                   base.probs["question"].data, atol=1e-9)
        np.testing.assert_allclose(after.probs["audio"].data,
                                   base.probs["audio"].data, atol=1e-9)

    def test_decoupled_when_cross_and_prior_off(self):
        """With pairwise weights zeroed and no priors, each p_a is the
        softmax of its local evidence alone."""
        cfg = small_cfg(question_prior=False, frame_prior=False)
        params, _ = build_params(cfg, seed=7)
        params.pair_weights.data[...] = 0.0
        bundle = random_bundle(cfg, seed=8, a_pad=0)
        aset = A.run_attention(bundle, params, cfg)
        local = A.local_evidence(bundle.r_q, params.per["question"])
        expected = T.softmax(local, mask=bundle.q_mask)
        np.testing.assert_allclose(aset.probs["question"].data, expected.data,
                                   atol=1e-12)

    def test_gradient_matches_fd(self):
        cfg = small_cfg()
        params, reg = build_params(cfg, seed=9)
        bundle = random_bundle(cfg, seed=10)
        rng = np.random.default_rng(11)
        weights = {name: Tensor(rng.normal(size=(1, dim)))
                   for name, dim in [("audio", cfg.audio_dim),
                                     ("question", cfg.question_hidden),
                                     ("frame0", cfg.video_dim),
                                     ("frame1", cfg.video_dim)]}

        def f():
            aset = A.run_attention(bundle, params, cfg)
            total = None
            for name, w in weights.items():
                term = T.tsum(T.mul(aset.attended[name], w))
                total = term if total is None else T.add(total, term)
            return T.tanh(total)

        tensors = [reg[k] for k in sorted(reg)]
        assert T.grad_check(f, tensors) < 1e-4

    def test_zero_unmasked_audio_degrades_gracefully(self):
        cfg = small_cfg()
        params, _ = build_params(cfg, seed=12)
        bundle = random_bundle(cfg, seed=13, n_a=2, a_pad=2)  # all audio masked
        aset = A.run_attention(bundle, params, cfg)
        assert not aset.probs["audio"].data.any()
        assert not aset.attended["audio"].data.any()
        np.testing.assert_allclose(aset.probs["question"].data.sum(), 1.0, atol=1e-6)
