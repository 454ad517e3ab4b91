import math

import numpy as np
import pytest

from twoscale.ergodics import AveragedCoeffs, analytic_averaged
from twoscale.errors import InvalidArgument
from twoscale.experiments import auxiliary_study
from twoscale.integrator import simulate_coupled
from twoscale.khasminskii import (
    CylindricalFn,
    PartitionPlan,
    aligned_step,
    build_partition,
    eval_L_av,
    eval_L_sl,
    kolmogorov_gap,
    quadratic_mode_fn,
    remainder_path,
    simulate_auxiliary,
)
from twoscale.model import bistable_model, linear_test_model


# -- partition --------------------------------------------------------------


def test_partition_examples():
    p = build_partition(0.01, 0.5, 1.0, 1.0)
    assert p.zeta == pytest.approx(math.sqrt(math.log(100)), rel=1e-14)
    assert p.zeta == pytest.approx(2.1460, abs=1e-4)
    assert p.delta == pytest.approx(0.021460, abs=1e-6)
    assert build_partition(0.1, 1.0, 1.0).zeta == pytest.approx(math.log(10), rel=1e-14)
    assert p.intervals == math.ceil(1.0 / p.delta)


def test_partition_monotone_and_idempotent():
    plans = [build_partition(e) for e in (0.1, 0.02, 0.004, 0.001)]
    assert all(a.delta > b.delta and a.zeta < b.zeta for a, b in zip(plans, plans[1:]))
    for p in plans:
        assert p.delta / p.eps == pytest.approx(p.zeta, rel=1e-15)
        assert build_partition(p.eps, p.kappa1, p.kappa2, p.T) == p


def test_partition_rejects():
    with pytest.raises(InvalidArgument):
        build_partition(0.5, T=0.1)
    with pytest.raises(InvalidArgument):
        build_partition(1.5)
    with pytest.raises(InvalidArgument):
        build_partition(0.1, kappa1=0.0)


# -- auxiliary process --------------------------------------------------------


def _coupled(model, eps, dt, T=0.2, replicas=3, seed=4):
    x = np.eye(model.N)[0]
    return simulate_coupled(model, x, 2 * x, eps, T, dt, seed, replicas)


def test_auxiliary_equals_v_without_slow_feedback():
    m = linear_test_model(N=8, b2_slow=0.0)
    plan = build_partition(0.1, T=1.0)
    dt, _ = aligned_step(plan)
    tr = _coupled(m, 0.1, dt, T=0.6)
    aux = simulate_auxiliary(m, tr, plan)
    assert np.array_equal(aux.v, tr.v)


def test_auxiliary_fresh_every_step():
    m = linear_test_model(N=8)
    dt = 1e-3
    tr = _coupled(m, 0.05, dt)
    plan = PartitionPlan(0.05, 0.5, 1.0, dt / 0.05, dt, 0.2)
    aux = simulate_auxiliary(m, tr, plan)
    assert np.max(np.abs(aux.v - tr.v)) <= dt


def test_auxiliary_rejects_misaligned_grid():
    m = linear_test_model(N=4)
    plan = build_partition(0.1, T=1.0)
    tr = _coupled(m, 0.1, 0.0097)
    with pytest.raises(InvalidArgument):
        simulate_auxiliary(m, tr, plan)


def test_auxiliary_gap_shrinks_with_eps():
    m = linear_test_model(N=8)
    t = auxiliary_study(m, np.eye(8)[0], None, [0.1, 0.02, 0.004], T=1.0, replicas=20)
    est = t.column("estimate")
    assert est[0] > est[1] > est[2]


# -- remainder --------------------------------------------------------------


def test_remainder_zero_cases():
    ctrl = linear_test_model(N=8, b1_slow=1.0, b1_fast=0.0)
    tr = _coupled(ctrl, 0.1, 0.01)
    R = remainder_path(ctrl, tr, ctrl.bbar_exact, np.eye(8)[0])
    assert np.max(np.abs(R)) < 1e-12
    m = linear_test_model(N=8)
    tr = _coupled(m, 0.1, 0.01)
    assert np.all(remainder_path(m, tr, m.bbar_exact, np.zeros(8)) == 0.0)


def test_remainder_linear_in_h():
    m = linear_test_model(N=8)
    tr = _coupled(m, 0.1, 0.01)
    h = np.random.default_rng(1).normal(size=8)
    R1 = remainder_path(m, tr, m.bbar_exact, h)
    R3 = remainder_path(m, tr, m.bbar_exact, -3.7 * h)
    np.testing.assert_allclose(R3, -3.7 * R1, rtol=1e-12, atol=1e-15)
    with pytest.raises(InvalidArgument):
        remainder_path(m, tr, m.bbar_exact, np.zeros(3))


# -- Kolmogorov operators ---------------------------------------------------


def test_L_av_hand_value():
    for N in (8, 32):
        m = linear_test_model(N=N)
        val = eval_L_av(quadratic_mode_fn(N), analytic_averaged(m), np.eye(N)[0])
        assert val[0] == pytest.approx(-1 / 3, abs=1e-9)


def _const_fn(N):
    return CylindricalFn(lambda s: np.full(s.shape[0], 4.0), lambda s: np.zeros_like(s),
                         lambda s: np.zeros(s.shape + (s.shape[1],)), np.eye(N)[:2], 2)


def test_constant_function_gives_zero(lin8):
    x = np.random.default_rng(0).normal(size=(3, 8))
    phi = _const_fn(8)
    assert np.all(eval_L_sl(phi, lin8, x, x) == 0.0)
    assert np.all(eval_L_av(phi, analytic_averaged(lin8), x) == 0.0)


def test_operators_agree_without_fast_dependence():
    m = linear_test_model(N=8, b1_slow=1.0, b1_fast=0.0)
    avg = AveragedCoeffs(m.slow, m.bbar_exact, gbar_const=np.eye(8))
    phi = quadratic_mode_fn(8)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 8))
    for _ in range(5):
        y = rng.normal(size=(1, 8)) * 3
        assert eval_L_sl(phi, m, x, y)[0] == pytest.approx(eval_L_av(phi, avg, x)[0], rel=1e-12)


def test_projection_order_checked(lin8):
    with pytest.raises(InvalidArgument):
        eval_L_av(quadratic_mode_fn(8, n_proj=9), analytic_averaged(lin8), np.zeros(8))


def _smooth_fn(N):
    a = np.zeros((2, N))
    a[0, 0], a[0, 2] = 1.0, 0.5
    a[1, 1], a[1, 3] = 1.0, -0.3

    def f(s):
        return np.sin(s[:, 0]) * np.cos(s[:, 1]) + 0.2 * s[:, 0] ** 2 * s[:, 1]

    def grad(s):
        return np.stack([np.cos(s[:, 0]) * np.cos(s[:, 1]) + 0.4 * s[:, 0] * s[:, 1],
                         -np.sin(s[:, 0]) * np.sin(s[:, 1]) + 0.2 * s[:, 0] ** 2], axis=1)

    def hess(s):
        h = np.empty((s.shape[0], 2, 2))
        h[:, 0, 0] = -np.sin(s[:, 0]) * np.cos(s[:, 1]) + 0.4 * s[:, 1]
        h[:, 1, 1] = -np.sin(s[:, 0]) * np.cos(s[:, 1])
        h[:, 0, 1] = h[:, 1, 0] = -np.cos(s[:, 0]) * np.sin(s[:, 1]) + 0.4 * s[:, 0]
        return h

    return CylindricalFn(f, grad, hess, a, N)


def _fd_generator(phi, x, alphas, drift, ops, h=1e-4):
    """Generator by central differences of phi in the full coefficient space.

    ``ops`` holds the columns G Q e_l of the diffusion; ``drift`` is B.
    Steps are taken along unit directions and rescaled.
    """
    def d1(direction):
        n = np.linalg.norm(direction)
        if n == 0:
            return 0.0
        u = direction / n
        return n * (phi(x + h * u) - phi(x - h * u)) / (2 * h)

    def d2(direction):
        n = np.linalg.norm(direction)
        if n == 0:
            return 0.0
        u, k = direction / n, 1e-3
        return n * n * (phi(x + k * u) - 2 * phi(x) + phi(x - k * u)) / k ** 2

    first = d1(-alphas * x + drift)
    second = 0.5 * sum(d2(col) for col in ops)
    return first + second


def _multiplier_columns(model, g_grid):
    # explicit sine sums, independent of the package transforms
    N, M, L = model.N, model.grid.M, model.slow.L
    xi = np.arange(1, M + 1) * L / (M + 1)
    E = np.sqrt(2 / L) * np.sin(np.outer(np.arange(1, N + 1), xi) * math.pi / L)
    W = (L / (M + 1)) * (E * g_grid) @ E.T
    return [W[:, l] * model.slow.lambdas[l] for l in range(N)]


@pytest.mark.parametrize("model", [linear_test_model(N=6, g1_const=2.0, g1_sin_fast=1.0),
                                   bistable_model(N=6)], ids=["sin_noise", "bistable"])
def test_L_sl_matches_finite_differences(model):
    rng = np.random.default_rng(5)
    phi = _smooth_fn(model.N)
    assert phi.check_derivatives(rng.normal(size=(4, 2)))
    for _ in range(3):
        x, y = 0.5 * rng.normal(size=model.N), rng.normal(size=model.N)
        g = model.grid
        drift = g.from_grid(model.b1(g.points, g.to_grid(x), g.to_grid(y)))
        gg = np.broadcast_to(model.g1(g.points, g.to_grid(x), g.to_grid(y)), (g.M,))
        want = _fd_generator(lambda z: phi(z)[0], x, model.slow.alphas, drift,
                             _multiplier_columns(model, gg))
        got = eval_L_sl(phi, model, x, y)[0]
        assert got == pytest.approx(want, rel=1e-6, abs=1e-6)


def test_L_av_matches_finite_differences():
    model = bistable_model(N=6)
    avg = analytic_averaged(model)
    rng = np.random.default_rng(6)
    phi = _smooth_fn(6)
    for _ in range(3):
        x = 0.5 * rng.normal(size=6)
        want = _fd_generator(lambda z: phi(z)[0], x, model.slow.alphas,
                             avg.bbar(x[None])[0], list(np.eye(6)))
        assert eval_L_av(phi, avg, x)[0] == pytest.approx(want, rel=1e-6, abs=1e-6)


def test_check_derivatives_detects_errors():
    good = _smooth_fn(4)
    bad = CylindricalFn(good.f, lambda s: 2 * good.grad(s), good.hess, good.anchors, 4)
    pts = np.random.default_rng(0).normal(size=(3, 2))
    assert good.check_derivatives(pts) and not bad.check_derivatives(pts)


# -- gap ----------------------------------------------------------------------


def test_gap_empty_interval(lin8):
    st = kolmogorov_gap(lin8, analytic_averaged(lin8), quadratic_mode_fn(8), 0.1, 0.2, 0.2,
                        np.eye(8)[0], outer=10, inner=10)
    assert st.estimate == 0.0 and st.se == 0.0


def test_gap_replica_floor(lin8):
    with pytest.raises(InvalidArgument):
        kolmogorov_gap(lin8, analytic_averaged(lin8), quadratic_mode_fn(8), 0.1, 0.0, 0.1,
                       np.eye(8)[0], outer=9)
    with pytest.raises(InvalidArgument):
        kolmogorov_gap(lin8, analytic_averaged(lin8), quadratic_mode_fn(8), 0.1, 0.0, 0.1,
                       np.eye(8)[0], outer=10, inner=5)


def test_gap_control_is_zero():
    m = linear_test_model(N=8, b1_slow=1.0, b1_fast=0.0)
    avg = AveragedCoeffs(m.slow, m.bbar_exact, gbar_const=np.eye(8))
    st = kolmogorov_gap(m, avg, quadratic_mode_fn(8), 0.1, 0.05, 0.15, np.eye(8)[0],
                        outer=10, inner=10)
    assert st.estimate < 1e-12


def test_gap_positive_for_linear(lin8):
    st = kolmogorov_gap(lin8, analytic_averaged(lin8), quadratic_mode_fn(8), 0.1, 0.0, 0.1,
                        np.eye(8)[0], outer=10, inner=10)
    assert st.estimate > 0 and st.replicas == 10
