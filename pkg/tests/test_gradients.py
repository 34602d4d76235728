import numpy as np
import pytest
from scipy.special import expit

from lateral_dae.gradients import backward, cost_and_grads, finite_diff_check
from lateral_dae.network import DivergenceError, ModelSpec, forward, init_params
from lateral_dae.optimizer import OptState, adadelta_step


def random_model(variant, sizes, seed, batch=4):
    rng = np.random.default_rng(seed)
    p = init_params(ModelSpec(variant, sizes), rng, dtype=np.float64)
    for name, t in p.tensors.items():
        t += 0.3 * rng.standard_normal(t.shape)
    for b in p.centering.values():
        b += 0.1 * rng.standard_normal(b.shape)
    x = rng.standard_normal((batch, sizes[0]))
    x_tilde = x + 0.5 * rng.standard_normal(x.shape)
    return p, x_tilde, x


class TestFiniteDifferences:
    @pytest.mark.parametrize("variant", ["nolat", "add", "mod"])
    @pytest.mark.parametrize("sizes", [(8, 6), (8, 6, 3)])
    def test_twenty_seeds(self, variant, sizes):
        for seed in range(20):
            p, xt, x = random_model(variant, sizes, seed)
            err, _ = finite_diff_check(p, xt, x, epsilon=1e-5)
            assert err < 1e-4, (variant, sizes, seed, err)

    def test_mod_example(self):
        p, xt, x = random_model("mod", (8, 6, 3), 123)
        err, excluded = finite_diff_check(p, xt, x)
        assert err < 1e-5
        assert excluded >= 0

    def test_linear_model(self):
        p, xt, x = random_model("linear", (8,), 0)
        err, excluded = finite_diff_check(p, xt, x)
        assert err < 1e-7
        assert excluded == 0

    def test_kink_is_excluded(self):
        p = init_params(ModelSpec("nolat", (1, 1)), np.random.default_rng(0), dtype=np.float64)
        for t in p.all_tensors().values():
            t[...] = 0
        p["Wf1"][...] = 1.0
        x = np.array([[0.0], [1.0]])
        # bf1 sits exactly on the kink of the first sample
        err, excluded = finite_diff_check(p, x, 2 * x + 0.5)
        assert excluded == 1
        assert err < 1e-7

    def test_epsilon_must_be_positive(self):
        p, xt, x = random_model("nolat", (3, 2), 0)
        with pytest.raises(ValueError):
            finite_diff_check(p, xt, x, epsilon=0)


class TestClosedForms:
    def test_zero_nolat_bias_gradient(self):
        p = init_params(ModelSpec("nolat", (5, 4)), np.random.default_rng(0), dtype=np.float64)
        for t in p.all_tensors().values():
            t[...] = 0
        x = np.random.default_rng(1).standard_normal((7, 5))
        _, g, _ = cost_and_grads(p, x, x)
        # cost averages over all n*d elements; each bias entry sees n of them
        np.testing.assert_allclose(g["bg0"], -2 * x.mean(axis=0) / x.shape[1], atol=1e-15)

    def test_zero_nolat_bias_gradient_scalar(self):
        p = init_params(ModelSpec("nolat", (1, 1)), np.random.default_rng(0), dtype=np.float64)
        for t in p.all_tensors().values():
            t[...] = 0
        x = np.array([[1.0], [2.0], [6.0]])
        _, g, _ = cost_and_grads(p, x, x)
        assert g["bg0"][0] == pytest.approx(-2 * 3.0)

    @pytest.mark.parametrize("variant", ["nolat", "add", "mod", "linear"])
    def test_perfect_reconstruction(self, variant):
        sizes = (6,) if variant == "linear" else (6, 5, 3)
        p, xt, _ = random_model(variant, sizes, 3)
        x = forward(p, xt).x_hat.copy()
        _, g, _ = cost_and_grads(p, xt, x)
        for name, t in g.items():
            assert not t.any(), name

    @pytest.mark.parametrize("variant", ["nolat", "add", "mod"])
    def test_residual_linearity(self, variant):
        p, xt, x = random_model(variant, (6, 5, 3), 4)
        acts = forward(p, xt)
        g1 = backward(p, acts, x)
        x2 = acts.x_hat - 2 * (acts.x_hat - x)
        g2 = backward(p, acts, x2)
        for name in g1:
            np.testing.assert_allclose(g2[name], 2 * g1[name], rtol=1e-12, atol=1e-15)

    def test_gate_derivative_wrt_topdown_weight(self):
        # single Mod unit under a single top unit; the top-down weight
        # enters only through the gate of the lower unit
        p = init_params(ModelSpec("mod", (1, 1, 1)), np.random.default_rng(0), dtype=np.float64)
        for t in p.all_tensors().values():
            t[...] = 0
        vals = dict(Wf1=1.0, bf1=0.2, ba1=0.3, a1=0.7, bb1=-0.4, bf2=0.5, ba2=0.1, a2=0.0, bb2=1.1)
        for k, v in vals.items():
            p.all_tensors()[k][...] = v
        w = 0.0  # the tied top weight, kept at zero so h2 does not depend on it
        x = np.array([[0.8]])
        target = np.array([[0.0]])
        acts = forward(p, x)
        h1 = acts.h[1][0, 0]
        hhat2 = acts.hhat[2][0, 0]
        pre = vals["a1"] * h1 + w * hhat2 + vals["bb1"]
        s = expit(pre)
        dhhat1_dw = (h1 + vals["ba1"]) * s * (1 - s) * hhat2
        # x_hat = Wg0 * hhat1 with Wg0 = Wf1 = 1
        dC_dhhat1 = 2 * (acts.x_hat[0, 0] - target[0, 0])
        g = backward(p, acts, target)
        # with w = 0 the encoder route through h2 carries a factor w and vanishes
        assert acts.hhat[2][0, 0] == hhat2
        assert g["Wf2"][0, 0] == pytest.approx(dC_dhhat1 * dhhat1_dw, rel=1e-12)

    def test_gate_derivative_matches_symbolic_pre(self):
        p, xt, x = random_model("mod", (4, 3), 5, batch=1)
        acts = forward(p, xt)
        g = backward(p, acts, x)
        h, s = acts.h[1], acts.gate[1]
        upstream = 2 * (acts.x_hat - x) / acts.x_hat.size @ p.decoder_weight(0)
        g_pre = upstream * (h + p["ba1"]) * s * (1 - s)
        np.testing.assert_allclose(g["bb1"], g_pre.sum(axis=0), rtol=1e-12)
        np.testing.assert_allclose(g["a1"], (g_pre * h).sum(axis=0), rtol=1e-12)


class TestShapesAndTying:
    @pytest.mark.parametrize("variant", ["nolat", "add", "mod"])
    def test_shapes_mirror_params(self, variant):
        p, xt, x = random_model(variant, (6, 5, 3), 0)
        _, g, _ = cost_and_grads(p, xt, x)
        assert set(g) == set(p.tensors)
        for k in g:
            assert g[k].shape == p[k].shape

    def test_tying_after_steps(self):
        p, xt, x = random_model("mod", (6, 5, 3), 1)
        state = OptState.for_params(p)
        for _ in range(5):
            _, g, _ = cost_and_grads(p, xt, x)
            adadelta_step(state, p, g)
        for l in (0, 1):
            assert np.array_equal(p.decoder_weight(l), p.encoder_weight(l + 1).T)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_gradient_raises(self):
        p, xt, x = random_model("nolat", (3, 2), 0)
        acts = forward(p, xt)
        acts.x_hat[0, 0] = np.inf
        with pytest.raises(DivergenceError):
            backward(p, acts, x)

    def test_float32_precision(self):
        p, xt, x = random_model("add", (6, 5), 2)
        p32 = p.astype(np.float32)
        _, g, _ = cost_and_grads(p32, xt.astype(np.float32), x.astype(np.float32))
        assert all(t.dtype == np.float32 for t in g.values())
