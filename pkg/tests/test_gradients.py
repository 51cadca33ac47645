import numpy as np
import pytest

from greedy_unfold import gradients, solvers
from greedy_unfold.gradients import NetSpec, loss_and_grad, ls_solve_backward, modulus_backward, net_forward
from greedy_unfold.rng import substream
from greedy_unfold.solvers import SolverConfig


def make_instance(seed, m, n, s, sigma=1e-3, complex_field=False):
    rng = substream(seed, "gradinst")
    if complex_field:
        a = (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))) / np.sqrt(2 * m)
    else:
        a = rng.standard_normal((m, n)) / np.sqrt(m)
    a = a / np.linalg.norm(a, axis=0)
    sup = rng.choice(n, size=s, replace=False)
    x = np.zeros(n)
    x[sup] = rng.standard_normal(s)
    y = a @ x
    if sigma > 0:
        noise = rng.standard_normal(m)
        if complex_field:
            noise = (noise + 1j * rng.standard_normal(m)) / np.sqrt(2)
        y = y + sigma * noise
    return a, x, y


def fd_gradient(net, w, a, y, x_true, step=1e-5):
    """Central finite differences of the squared loss through the untaped path."""

    def loss(weights):
        out = net_forward(net, weights, a, y)
        d = out - x_true
        return float(np.real(np.vdot(d, d)))

    g = np.zeros_like(w)
    for i in range(w.size):
        wp = w.copy()
        wm = w.copy()
        wp[i] += step
        wm[i] -= step
        g[i] = (loss(wp) - loss(wm)) / (2 * step)
    return g


def assert_grad_close(grad, fd, rtol, floor=1e-8, fd_resolution=0.0):
    # fd_resolution: central differences resolve the gradient only to
    # ~eps * loss / (2 * step) absolute; below that the oracle, not the
    # gradient, is the bottleneck
    mask = np.abs(grad) > floor
    assert mask.any()
    err = np.abs(grad[mask] - fd[mask])
    assert np.all(err <= np.maximum(rtol * np.abs(grad[mask]), fd_resolution))


def test_single_layer_iht_identity_hand_computed():
    n = 4
    a = np.eye(n)
    x_true = np.array([2.0, 0.0, -1.0, 0.0])
    y = a @ x_true
    w = np.ones(n)
    net = NetSpec(family="iht", layers=1, tau=0.3, k=2, eta=1.0)
    res = loss_and_grad(net, w, a, y, x_true)

    # by hand: u = y, mask = summed softsort rows of |u|, out = mask * u
    from greedy_unfold.sortops import softsort_top_rows

    u = y.copy()
    q = softsort_top_rows(np.abs(u), 0.3, 2).sum(axis=0)
    expect_loss = float(np.sum((q * u - x_true) ** 2))
    assert res.loss == pytest.approx(expect_loss, rel=1e-12)

    fd = fd_gradient(net, w, a, y, x_true)
    assert_grad_close(res.grad_w, fd, rtol=1e-6)


def test_zero_signal_gives_zero_loss_and_gradient():
    n = 5
    a = np.eye(n)
    x_true = np.zeros(n)
    y = a @ x_true
    net = NetSpec(family="iht", layers=2, tau=0.5, k=2, eta=1.0)
    res = loss_and_grad(net, np.ones(n), a, y, x_true)
    assert res.loss == 0.0
    assert np.array_equal(res.grad_w, np.zeros(n))


def test_three_layer_omp_net_matches_finite_differences():
    a, x_true, y = make_instance(2024, 10, 20, 3)
    net = NetSpec(family="omp", layers=3, tau=1e-2)
    w = np.ones(20)
    res = loss_and_grad(net, w, a, y, x_true)
    fd = fd_gradient(net, w, a, y, x_true)
    assert_grad_close(res.grad_w, fd, rtol=1e-5)


@pytest.mark.parametrize("family", ["omp", "iht"])
@pytest.mark.parametrize("complex_field", [False, True])
@pytest.mark.parametrize("layers", [1, 3])
def test_gradient_matches_fd_families(family, complex_field, layers):
    # a temperature comparable to the competition gaps keeps the softmax
    # rows (and hence the weight gradients) away from saturation
    for seed in range(20):
        a, x_true, y = make_instance(
            1000 * seed + 42 + layers, 12, 24, 3, complex_field=complex_field
        )
        if family == "omp":
            net = NetSpec(family="omp", layers=layers, tau=0.2)
        else:
            net = NetSpec(family="iht", layers=layers, tau=0.2, k=3, eta=0.7)
        w = np.ones(24)
        res = loss_and_grad(net, w, a, y, x_true)
        fd = fd_gradient(net, w, a, y, x_true)
        # eps * loss / step with a 4x allowance for rounding accumulated
        # across the two loss evaluations
        resolution = 4e-16 * max(res.loss, 1.0) / 1e-5
        assert_grad_close(res.grad_w, fd, rtol=1e-4, fd_resolution=resolution)


def test_taped_forward_equals_solver_trace():
    a, x_true, y = make_instance(77, 12, 24, 3, complex_field=True)
    net = NetSpec(family="iht", layers=4, tau=1e-2, k=3, eta=0.6)
    w = substream(78, "w").uniform(0.2, 1.5, size=24)
    res = loss_and_grad(net, w, a, y, x_true)
    trace = solvers.soft_iht(a, y, SolverConfig(k=3, eta=0.6, n_iter=4, tau=1e-2, weights=w))
    assert np.max(np.abs(res.output - trace.final)) <= 1e-12

    net_omp = NetSpec(family="omp", layers=3, tau=1e-2)
    res_omp = loss_and_grad(net_omp, w, a, y, x_true)
    trace_omp = solvers.soft_omp(a, y, SolverConfig(k=3, tau=1e-2, weights=w))
    assert np.max(np.abs(res_omp.output - trace_omp.final)) <= 1e-12


def test_gradient_is_additive_over_instances():
    a1, x1, y1 = make_instance(101, 10, 18, 3)
    a2, x2, y2 = make_instance(102, 10, 18, 3)
    net = NetSpec(family="iht", layers=2, tau=1e-2, k=3, eta=0.6)
    w = np.ones(18)
    g1 = loss_and_grad(net, w, a1, y1, x1).grad_w
    g2 = loss_and_grad(net, w, a2, y2, x2).grad_w
    both = g1 + g2
    again = loss_and_grad(net, w, a1, y1, x1).grad_w + loss_and_grad(net, w, a2, y2, x2).grad_w
    assert np.max(np.abs(both - again)) <= 1e-10


def test_rejects_negative_weights():
    a, x_true, y = make_instance(103, 8, 12, 2)
    net = NetSpec(family="omp", layers=2, tau=1e-2)
    w = np.ones(12)
    w[3] = -0.5
    with pytest.raises(ValueError):
        loss_and_grad(net, w, a, y, x_true)


def test_saturated_layers_reported_at_tiny_tau():
    a, x_true, y = make_instance(104, 10, 16, 2)
    net = NetSpec(family="omp", layers=2, tau=1e-12)
    res = loss_and_grad(net, np.ones(16), a, y, x_true)
    assert res.saturated_layers == [0, 1]
    assert all(n == 0.0 for n in res.layer_grad_norms)


def test_ls_backward_identity_pass_through():
    b = np.eye(3)
    y = np.array([1.0, 2.0, 3.0])
    z = y.copy()
    g = np.array([0.5, -1.0, 2.0])
    cot_b, cot_y = ls_solve_backward(b, y, z, g)
    assert np.allclose(cot_y, g, atol=1e-14)


def test_ls_backward_single_column_closed_form():
    # z = (b . y)/(b . b); hand-derived partials
    b = np.array([[1.0], [1.0]])
    y = np.array([1.0, 3.0])
    z = np.array([2.0])
    g = np.array([1.0])
    cot_b, cot_y = ls_solve_backward(b, y, z, g)
    assert np.allclose(cot_y, [0.5, 0.5], atol=1e-14)
    assert np.allclose(cot_b.ravel(), [-1.5, -0.5], atol=1e-14)


def test_ls_backward_complex_matches_fd():
    rng = substream(105, "lsfd")
    b = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
    y = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    probe = rng.standard_normal(3) + 1j * rng.standard_normal(3)

    def scalar_out(mat):
        z, *_ = np.linalg.lstsq(mat, y, rcond=None)
        return float(np.real(np.vdot(probe, z)))

    from greedy_unfold.linalg import least_squares

    z = least_squares(b, y)
    # packed cotangent of z for L = Re(probe^H z) is probe itself
    cot_b, _ = ls_solve_backward(b, y, z, probe)
    step = 1e-6
    for i in range(6):
        for j in range(3):
            for part, direction in ((0, 1.0), (1, 1.0j)):
                bp = b.copy()
                bm = b.copy()
                bp[i, j] += step * direction
                bm[i, j] -= step * direction
                fd = (scalar_out(bp) - scalar_out(bm)) / (2 * step)
                got = cot_b[i, j].real if part == 0 else cot_b[i, j].imag
                assert got == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_modulus_backward_examples():
    assert modulus_backward(np.complex128(3 + 4j), 1.0) == pytest.approx(0.6 + 0.8j)
    assert modulus_backward(np.complex128(0.0), 1.0) == 0.0
    assert modulus_backward(np.float64(0.0), 1.0) == 0.0


def test_modulus_backward_matches_fd():
    rng = substream(106, "modfd")
    z = rng.standard_normal(20) + 1j * rng.standard_normal(20)
    u = rng.standard_normal(20)
    cot = modulus_backward(z, u)
    step = 1e-6
    for i in range(20):
        for direction, pick in ((1.0, np.real), (1.0j, np.imag)):
            zp = z.copy()
            zm = z.copy()
            zp[i] += step * direction
            zm[i] -= step * direction
            fd = (u[i] * abs(zp[i]) - u[i] * abs(zm[i])) / (2 * step)
            assert pick(cot[i]) == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_nan_input_raises_located_error():
    a, x_true, y = make_instance(107, 8, 12, 2)
    y = y.copy()
    y[0] = np.nan
    net = NetSpec(family="iht", layers=2, tau=1e-2, k=2, eta=0.5)
    with pytest.raises(gradients.GradientNumericsError) as exc:
        loss_and_grad(net, np.ones(12), a, y, x_true)
    assert exc.value.layer == 0
