"""Autodiff core: analytic identities, scalar-loop oracles, FD agreement."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avdialog import tensor as T
from avdialog.errors import ContractError


def t64(data, requires_grad=False):
    return T.Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax(t64([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_ln3(self):
        out = T.softmax(t64([0.0, math.log(3)]))
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            T.softmax(t64(np.zeros(0)))

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=16),
           st.floats(-100, 100))
    @settings(max_examples=200, deadline=None)
    def test_sums_to_one_and_shift_invariant(self, values, shift):
        x = t64(values)
        out = T.softmax(x)
        assert out.data.min() >= 0
        assert abs(out.data.sum() - 1.0) < 1e-6
        shifted = T.softmax(t64([v + shift for v in values]))
        np.testing.assert_allclose(out.data, shifted.data, atol=1e-9)

    def test_mask_forces_exact_zero(self):
        x = t64([[1.0, 5.0, 1.0]])
        mask = np.array([[True, False, True]])
        out = T.softmax(x, mask=mask)
        assert out.data[0, 1] == 0.0
        np.testing.assert_allclose(out.data[0], [0.5, 0.0, 0.5])


class TestL2Normalize:
    def test_three_four_five(self):
        out = T.l2_normalize(t64([[3.0, 4.0]]))
        np.testing.assert_allclose(out.data, [[0.6, 0.8]])

    def test_unit_vector_fixed_point(self):
        v = np.array([[1.0, 0.0, 0.0]])
        np.testing.assert_allclose(T.l2_normalize(t64(v)).data, v)

    def test_zero_vector_stays_zero(self):
        out = T.l2_normalize(t64([[0.0, 0.0]]))
        np.testing.assert_array_equal(out.data, [[0.0, 0.0]])

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=8))
    @settings(max_examples=200, deadline=None)
    def test_norm_is_zero_or_one(self, values):
        out = T.l2_normalize(t64([values]))
        norm = np.linalg.norm(out.data)
        assert norm == 0.0 or abs(norm - 1.0) < 1e-9


def scalar_lstm_oracle(x, h, c, wx, wh, b):
    """Gate-by-gate scalar evaluation of the LSTM update."""
    batch, _ = x.shape
    hid = wh.shape[0]
    h2 = np.zeros((batch, hid))
    c2 = np.zeros((batch, hid))
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    for bi in range(batch):
        for j in range(hid):
            z = [b[g * hid + j] for g in range(4)]
            for g in range(4):
                for k in range(x.shape[1]):
                    z[g] += x[bi, k] * wx[k, g * hid + j]
                for k in range(hid):
                    z[g] += h[bi, k] * wh[k, g * hid + j]
            i_g, f_g, g_g, o_g = sig(z[0]), sig(z[1]), math.tanh(z[2]), sig(z[3])
            c2[bi, j] = f_g * c[bi, j] + i_g * g_g
            h2[bi, j] = o_g * math.tanh(c2[bi, j])
    return h2, c2


class TestLstmCell:
    def _zero_params(self, n_in, hid):
        return T.LstmCellParams(
            w_x=t64(np.zeros((n_in, 4 * hid)), requires_grad=True),
            w_h=t64(np.zeros((hid, 4 * hid)), requires_grad=True),
            b=t64(np.zeros(4 * hid), requires_grad=True),
        )

    def test_zero_params_unit_cell(self):
        p = self._zero_params(1, 1)
        h, c = T.lstm_cell(t64([[0.0]]), t64([[0.0]]), t64([[1.0]]), p)
        np.testing.assert_allclose(c.data, [[0.5]])
        np.testing.assert_allclose(h.data, [[0.5 * math.tanh(0.5)]])

    def test_zero_fixed_point(self):
        p = self._zero_params(2, 3)
        h, c = T.lstm_cell(t64(np.zeros((1, 2))), t64(np.zeros((1, 3))),
                           t64(np.zeros((1, 3))), p)
        np.testing.assert_array_equal(h.data, np.zeros((1, 3)))
        np.testing.assert_array_equal(c.data, np.zeros((1, 3)))

    def test_random_vs_scalar_oracle(self):
        rng = np.random.default_rng(7)
        n_in, hid, batch = 3, 4, 2
        wx = rng.normal(size=(n_in, 4 * hid))
        wh = rng.normal(size=(hid, 4 * hid))
        b = rng.normal(size=4 * hid)
        x = rng.normal(size=(batch, n_in))
        h0 = rng.normal(size=(batch, hid))
        c0 = rng.normal(size=(batch, hid))
        p = T.LstmCellParams(w_x=t64(wx), w_h=t64(wh), b=t64(b))
        h, c = T.lstm_cell(t64(x), t64(h0), t64(c0), p)
        h_exp, c_exp = scalar_lstm_oracle(x, h0, c0, wx, wh, b)
        np.testing.assert_allclose(h.data, h_exp, atol=1e-12)
        np.testing.assert_allclose(c.data, c_exp, atol=1e-12)

    def test_dim_mismatch_rejected(self):
        p = self._zero_params(2, 3)
        with pytest.raises(ContractError):
            T.lstm_cell(t64(np.zeros((1, 5))), t64(np.zeros((1, 3))),
                        t64(np.zeros((1, 3))), p)

    def test_grad_check(self):
        rng = np.random.default_rng(3)
        n_in, hid = 3, 2
        p = T.LstmCellParams(
            w_x=t64(rng.normal(size=(n_in, 4 * hid)), requires_grad=True),
            w_h=t64(rng.normal(size=(hid, 4 * hid)), requires_grad=True),
            b=t64(rng.normal(size=4 * hid), requires_grad=True),
        )
        x = t64(rng.normal(size=(1, n_in)))
        h0 = t64(rng.normal(size=(1, hid)))
        c0 = t64(rng.normal(size=(1, hid)))

        def f():
            h, c = T.lstm_cell(x, h0, c0, p)
            return T.tsum(T.add(T.mul(h, h), c))

        assert T.grad_check(f, [p.w_x, p.w_h, p.b]) < 1e-6


class TestBackward:
    def test_xtx_gradient_is_2x(self):
        x = t64([[1.0, -2.0, 3.0]], requires_grad=True)
        loss = T.tsum(T.mul(x, x))
        loss.backward()
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_softmax_cross_entropy_identity(self):
        # d/dz of -log softmax(z)[target] == softmax(z) - onehot(target)
        rng = np.random.default_rng(0)
        z = t64(rng.normal(size=(1, 5)), requires_grad=True)
        target = 2
        probs = T.softmax(z)
        loss = T.mul(T.log(probs[:, target]), -1.0)
        loss.backward()
        expected = np.exp(z.data - z.data.max())
        expected /= expected.sum()
        expected[0, target] -= 1.0
        np.testing.assert_allclose(z.grad, expected, atol=1e-12)

    def test_non_scalar_loss_rejected(self):
        x = t64([[1.0, 2.0]], requires_grad=True)
        with pytest.raises(ContractError):
            T.mul(x, 2.0).backward()

    def test_unreachable_parameter_gets_zero(self):
        x = t64([[1.0]], requires_grad=True, )
        unused = t64([[5.0]], requires_grad=True)
        grads = T.backward(T.tsum(T.mul(x, x)), [x, unused])
        np.testing.assert_allclose(grads["param_0"], [[2.0]])
        np.testing.assert_array_equal(grads["param_1"], [[0.0]])

    def test_backward_twice_is_deterministic(self):
        rng = np.random.default_rng(5)
        x = t64(rng.normal(size=(2, 3)), requires_grad=True)
        w = t64(rng.normal(size=(3, 2)), requires_grad=True)
        loss = T.tsum(T.tanh(T.matmul(x, w)))
        loss.backward()
        first = (x.grad.copy(), w.grad.copy())
        loss.backward()
        np.testing.assert_array_equal(x.grad, first[0])
        np.testing.assert_array_equal(w.grad, first[1])

    @pytest.mark.parametrize("seed", range(6))
    def test_random_composite_matches_fd(self, seed):
        """Composites of the primitive set agree with central differences."""
        rng = np.random.default_rng(seed)
        a = t64(rng.normal(size=(2, 4)), requires_grad=True)
        w1 = t64(rng.normal(size=(4, 3)), requires_grad=True)
        w2 = t64(rng.normal(size=(3, 3)), requires_grad=True)
        bias = t64(rng.normal(size=3), requires_grad=True)
        mask = np.array([[True, True, False], [True, True, True]])
        weights = t64(rng.normal(size=(2, 6)))

        def f():
            h = T.tanh(T.add(T.matmul(a, w1), bias))
            h = T.relu(T.matmul(h, w2))
            p = T.softmax(h, mask=mask)
            u = T.l2_normalize(T.sigmoid(T.concat([h, p], axis=-1)))
            return T.mean(T.mul(u, weights))

        err = T.grad_check(f, [a, w1, w2, bias])
        assert err < 1e-4

    def test_linear_map_grad_check_is_exact(self):
        rng = np.random.default_rng(1)
        w = t64(rng.normal(size=(4, 1)), requires_grad=True)
        x = t64(rng.normal(size=(1, 4)))
        assert T.grad_check(lambda: T.tsum(T.matmul(x, w)), [w]) < 1e-10


class TestPrimitivePlumbing:
    def test_embedding_accumulates_repeated_ids(self):
        table = t64(np.eye(3), requires_grad=True)
        out = T.embedding(table, np.array([1, 1, 2]))
        T.tsum(out).backward()
        # each lookup contributes a full ones-row; id 1 twice, id 2 once
        np.testing.assert_allclose(table.grad, [[0] * 3, [2] * 3, [1] * 3])

    def test_embedding_id_out_of_range(self):
        table = t64(np.eye(3), requires_grad=True)
        with pytest.raises(ContractError):
            T.embedding(table, np.array([3]))

    def test_gather_rows(self):
        x = t64([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
        out = T.gather_rows(x, np.array([1, 0]))
        np.testing.assert_allclose(out.data, [2.0, 3.0])
        T.tsum(out).backward()
        np.testing.assert_allclose(x.grad, [[0, 1], [1, 0]])

    def test_dropout_scales_survivors(self):
        rng = np.random.default_rng(0)
        x = t64(np.ones((1000,)))
        out = T.dropout(x, 0.5, rng)
        kept = out.data[out.data != 0]
        assert np.allclose(kept, 2.0)
        assert abs(out.data.mean() - 1.0) < 0.1

    def test_concat_splits_gradient(self):
        a = t64([[1.0, 2.0]], requires_grad=True)
        b = t64([[3.0]], requires_grad=True)
        out = T.concat([a, b], axis=-1)
        T.tsum(T.mul(out, t64([[1.0, 2.0, 3.0]]))).backward()
        np.testing.assert_allclose(a.grad, [[1.0, 2.0]])
        np.testing.assert_allclose(b.grad, [[3.0]])

    def test_values_stay_finite(self):
        rng = np.random.default_rng(2)
        x = t64(rng.normal(size=(4, 4)) * 30)
        for op in (T.relu, T.tanh, T.sigmoid, T.softmax, T.l2_normalize):
            assert np.isfinite(op(x).data).all()
