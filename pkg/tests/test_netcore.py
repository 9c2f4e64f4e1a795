import copy
import math

import numpy as np
import pytest

from divlab.errors import ContractError, NumericError
from divlab.netcore import (DenseLayer, LinearHead, Mlp, NormBudget,
                            forward, forward_batch, init_opt_state,
                            lipschitz_bound, loss_and_gradients, measured_norms,
                            output_bound, parameters, spectral_norm, step,
                            validate, with_parameters, backward)
from divlab.seeding import make_rng


# ---------------------------------------------------------------------------
# Oracles (independent of the implementation under test)
# ---------------------------------------------------------------------------

def scalar_forward_oracle(net, x):
    """Straight-line scalar-by-scalar evaluation of the composition."""
    z = [float(v) for v in x]
    for layer in net.layers:
        out = []
        for i in range(layer.weight.shape[0]):
            s = float(layer.bias[i])
            for j in range(layer.weight.shape[1]):
                s += float(layer.weight[i, j]) * z[j]
            if layer.activation == "relu":
                s = max(0.0, s)
            elif layer.activation == "sigmoid":
                s = 1.0 / (1.0 + math.exp(-s))
            out.append(s)
        z = out
    if net.head is not None:
        z = [sum(float(a) * v for a, v in zip(net.head.alpha, z)) + net.head.beta]
    return np.array(z)


def fd_gradient(net, xs, ys, h=1e-5):
    """Central finite differences of the batch loss over every parameter."""
    def loss_of(arrays):
        probe = with_parameters(net, arrays)
        out = forward_batch(probe, xs)
        return float(((out - ys) ** 2).sum() / xs.shape[0])

    base = [np.array(p, dtype=float) for p in parameters(net)]
    grads = []
    for idx, p in enumerate(base):
        g = np.zeros_like(p)
        flat = g.reshape(-1)
        for j in range(p.size):
            plus = [q.copy() for q in base]
            minus = [q.copy() for q in base]
            plus[idx].reshape(-1)[j] += h
            minus[idx].reshape(-1)[j] -= h
            flat[j] = (loss_of(plus) - loss_of(minus)) / (2 * h)
        grads.append(g)
    return grads


def random_net(rng, depth, width, activation, d_in=3, head=False):
    layers = []
    prev = d_in
    for k in range(depth):
        layers.append(DenseLayer(weight=rng.normal(0, 0.7, size=(width, prev)),
                                 bias=rng.normal(0, 0.3, size=width),
                                 activation=activation))
        prev = width
    head_obj = LinearHead(alpha=rng.normal(0, 0.7, size=prev), beta=float(rng.normal())) if head else None
    return Mlp(layers=layers, head=head_obj)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def test_forward_identity_layer_is_identity():
    net = Mlp(layers=[DenseLayer(weight=np.eye(2), bias=np.zeros(2), activation="identity")])
    np.testing.assert_array_equal(forward(net, np.array([1.0, 2.0])), [1.0, 2.0])


def test_forward_relu_clamps_negative_preactivation():
    net = Mlp(layers=[DenseLayer(weight=np.array([[1.0]]), bias=np.array([-2.0]),
                                 activation="relu")])
    np.testing.assert_array_equal(forward(net, np.array([1.0])), [0.0])


def test_forward_matches_scalar_oracle():
    rng = make_rng(77, "forward-oracle")
    net = random_net(rng, depth=2, width=3, activation="relu", head=True)
    for _ in range(10):
        x = rng.normal(size=3)
        np.testing.assert_allclose(forward(net, x), scalar_forward_oracle(net, x),
                                   atol=1e-12, rtol=0)


def test_forward_dimension_mismatch_raises():
    net = Mlp(layers=[DenseLayer(weight=np.eye(2), bias=np.zeros(2), activation="relu")])
    with pytest.raises(ContractError):
        forward(net, np.array([1.0, 2.0, 3.0]))


def test_validate_rejects_broken_chaining():
    net = Mlp(layers=[DenseLayer(weight=np.eye(2), bias=np.zeros(2), activation="relu"),
                      DenseLayer(weight=np.eye(3), bias=np.zeros(3), activation="relu")])
    with pytest.raises(ContractError):
        validate(net)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def test_interpolating_net_has_zero_gradient():
    rng = make_rng(78, "zero-residual")
    net = random_net(rng, depth=2, width=3, activation="relu")
    xs = rng.normal(size=(6, 3))
    ys = forward_batch(net, xs)  # labels equal predictions: residual is zero
    _, grads = loss_and_gradients(net, xs, ys)
    for dw, db in grads.layers:
        np.testing.assert_array_equal(dw, 0.0)
        np.testing.assert_array_equal(db, 0.0)


@pytest.mark.parametrize("activation", ["relu", "sigmoid", "identity"])
@pytest.mark.parametrize("depth", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("width", [1, 2, 3, 4])
def test_gradient_matches_finite_differences(depth, width, activation):
    rng = make_rng(79, "fd", depth, width, activation)
    net = random_net(rng, depth, width, activation, head=(depth % 2 == 0))
    xs = rng.normal(size=(5, 3))
    ys = rng.normal(size=(5, net.out_dim))
    _, grads = loss_and_gradients(net, xs, ys)
    analytic = grads.as_list()
    numeric = fd_gradient(net, xs, ys)
    scale = max(1.0, max(np.abs(a).max() for a in analytic))
    for a, n in zip(analytic, numeric):
        assert np.abs(a - n.reshape(a.shape)).max() <= 1e-5 * scale


def test_hand_differentiated_linear_gradient():
    # loss(w) = (w*1 - 0)^2 at w=2: d/dw = 2*w = 4 (confirmed below by
    # central differences; the mean-over-batch loss carries no 1/2 factor).
    net = Mlp(layers=[DenseLayer(weight=np.array([[2.0]]), bias=np.zeros(1),
                                 activation="identity")])
    grads = backward(net, [(np.array([1.0]), np.array([0.0]))])
    np.testing.assert_allclose(grads.layers[0][0], [[4.0]], atol=1e-12)
    fd = fd_gradient(net, np.array([[1.0]]), np.array([[0.0]]))
    np.testing.assert_allclose(fd[0], [[4.0]], atol=1e-9)


def test_backward_empty_batch_raises():
    net = Mlp(layers=[DenseLayer(weight=np.eye(1), bias=np.zeros(1), activation="identity")])
    with pytest.raises(ContractError):
        backward(net, [])


def test_backward_rejects_unknown_loss():
    net = Mlp(layers=[DenseLayer(weight=np.eye(1), bias=np.zeros(1), activation="identity")])
    with pytest.raises(ContractError):
        backward(net, [(np.zeros(1), np.zeros(1))], loss="hinge")


# ---------------------------------------------------------------------------
# optimizer steps
# ---------------------------------------------------------------------------

def test_sgd_step_moves_against_gradient():
    params = [np.array([1.0])]
    opt = init_opt_state(params, method="sgd", learning_rate=0.1)
    new_params, new_opt = step(opt, params, [np.array([2.0])])
    np.testing.assert_allclose(new_params[0], [0.8], atol=1e-15)
    assert new_opt.step_count == 1


def test_adam_first_step_magnitude_is_learning_rate():
    # First bias-corrected step: m_hat/sqrt(v_hat) = sign(g) up to epsilon.
    lr = 1e-3
    params = [np.array([1.0, -0.5])]
    grads = [np.array([2.0, -30.0])]
    opt = init_opt_state(params, method="adam", learning_rate=lr)
    new_params, _ = step(opt, params, grads)
    expected = params[0] - lr * grads[0] / (np.abs(grads[0]) + opt.epsilon)
    np.testing.assert_allclose(new_params[0], expected, atol=1e-15)
    np.testing.assert_allclose(np.abs(new_params[0] - params[0]), lr, rtol=1e-6)


def test_zero_gradient_leaves_parameters_unchanged():
    params = [np.array([3.0, -1.0])]
    opt = init_opt_state(params, method="adam")
    new_params, new_opt = step(opt, params, [np.zeros(2)])
    np.testing.assert_array_equal(new_params[0], params[0])
    assert new_opt.step_count == 1


def test_adam_update_consistent_with_moment_recomputation():
    # |delta| must equal lr * |m_hat| / (sqrt(v_hat) + eps) with moments
    # recomputed by an independent accumulator.
    rng = make_rng(80, "adam-consistency")
    params = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    opt = init_opt_state(params, method="adam", learning_rate=0.01)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    for t in range(1, 8):
        grads = [rng.normal(size=p.shape) for p in params]
        new_params, opt = step(opt, params, grads)
        for i, g in enumerate(grads):
            m[i] = 0.9 * m[i] + 0.1 * g
            v[i] = 0.999 * v[i] + 0.001 * g * g
            m_hat = m[i] / (1 - 0.9 ** t)
            v_hat = v[i] / (1 - 0.999 ** t)
            delta = new_params[i] - params[i]
            np.testing.assert_allclose(np.abs(delta),
                                       0.01 * np.abs(m_hat) / (np.sqrt(v_hat) + 1e-8),
                                       atol=1e-15)
        params = new_params


def test_step_shape_mismatch_raises():
    params = [np.zeros(2)]
    opt = init_opt_state(params)
    with pytest.raises(ContractError):
        step(opt, params, [np.zeros(3)])


# ---------------------------------------------------------------------------
# norms and bound formulas
# ---------------------------------------------------------------------------

def test_lipschitz_bound_spot_values():
    assert lipschitz_bound(NormBudget(m_alpha=1.0, m_k=[1.0])) == 1.0
    assert lipschitz_bound(NormBudget(m_alpha=0.5, m_k=[2.0, 3.0])) == 3.0


def test_output_bound_spot_values():
    assert output_bound(NormBudget(m_alpha=1.0, m_k=[1.0], d_z=1.0)) == 2.0
    assert output_bound(NormBudget(m_alpha=1.0, m_k=[4.0], d_z=0.0)) == 0.0


def test_norm_budget_rejects_negative_entries():
    with pytest.raises(ContractError):
        lipschitz_bound(NormBudget(m_alpha=-1.0, m_k=[1.0]))


def test_sampled_slopes_never_exceed_lipschitz_bound():
    rng = make_rng(81, "lipschitz-oracle")
    for trial in range(10):
        net = random_net(rng, depth=2, width=3, activation="relu", head=True)
        budget = measured_norms(net)
        bound = lipschitz_bound(budget)
        xs = rng.normal(size=(100, 3))
        ys = rng.normal(size=(100, 3))
        fx = forward_batch(net, xs)
        fy = forward_batch(net, ys)
        slope = np.linalg.norm(fx - fy, axis=1) / np.linalg.norm(xs - ys, axis=1)
        assert slope.max() <= bound + 1e-9


def test_sampled_outputs_never_exceed_output_bound():
    rng = make_rng(82, "output-oracle")
    d_z = 1.5
    for trial in range(10):
        net = random_net(rng, depth=2, width=3, activation="relu", head=True)
        budget = measured_norms(net)
        budget.d_z = d_z
        bound = output_bound(budget)
        z = rng.normal(size=(200, 3))
        z = d_z * z / np.maximum(np.linalg.norm(z, axis=1, keepdims=True), d_z)
        out = forward_batch(net, z)
        diffs = np.abs(out[:, None, 0] - out[None, :, 0])
        assert diffs.max() <= bound + 1e-9


def test_measured_norms_scaled_identity():
    net = Mlp(layers=[DenseLayer(weight=2.0 * np.eye(2), bias=np.zeros(2),
                                 activation="relu")])
    np.testing.assert_allclose(measured_norms(net).m_k, [2.0], atol=1e-9)


def test_measured_norms_matches_dense_svd_oracle():
    w = np.array([[1.0, 1.0], [0.0, 1.0]])
    golden = np.linalg.svd(w, compute_uv=False)[0]
    np.testing.assert_allclose(golden, (1 + np.sqrt(5)) / 2, atol=1e-12)
    np.testing.assert_allclose(spectral_norm(w), golden, atol=1e-9)
    net = Mlp(layers=[DenseLayer(weight=w, bias=np.zeros(2), activation="relu")])
    # infinity norm 2 beats the spectral value ~1.618
    np.testing.assert_allclose(measured_norms(net).m_k, [2.0], atol=1e-12)


def test_measured_norms_zero_matrix():
    net = Mlp(layers=[DenseLayer(weight=np.zeros((2, 2)), bias=np.zeros(2),
                                 activation="relu")])
    assert measured_norms(net).m_k == [0.0]


def test_spectral_norm_random_matrices_match_svd():
    rng = make_rng(83, "spectral-proposals")
    for shape in [(3, 3), (2, 5), (6, 2)]:
        w = rng.normal(size=shape)
        np.testing.assert_allclose(spectral_norm(w),
                                   np.linalg.svd(w, compute_uv=False)[0], atol=1e-8)


def test_sigmoid_slopes_respect_quarter_lipschitz_constant():
    from divlab.netcore import ACTIVATION_LIPSCHITZ
    assert ACTIVATION_LIPSCHITZ["sigmoid"] == 0.25
    rng = make_rng(85, "sigmoid-slope")
    net = Mlp(layers=[DenseLayer(weight=rng.normal(size=(3, 3)), bias=np.zeros(3),
                                 activation="sigmoid")])
    bound = 0.25 * spectral_norm(net.layers[0].weight)
    xs, ys = rng.normal(size=(200, 3)), rng.normal(size=(200, 3))
    slopes = (np.linalg.norm(forward_batch(net, xs) - forward_batch(net, ys), axis=1)
              / np.linalg.norm(xs - ys, axis=1))
    assert slopes.max() <= bound + 1e-9


def test_power_iteration_reports_non_convergence():
    w = np.array([[3.0, 1.0], [0.0, 0.5]])
    with pytest.raises(NumericError):
        spectral_norm(w, max_iter=1)


def test_forward_is_deterministic():
    rng = make_rng(84, "determinism")
    net = random_net(rng, depth=3, width=4, activation="relu", head=True)
    x = rng.normal(size=3)
    a = forward(net, x)
    b = forward(net, x)
    assert a.tobytes() == b.tobytes()
