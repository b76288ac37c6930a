import numpy as np
import pytest

from qpme.analytic import DomainSpec, barenblatt_ic
from qpme.ansatz import (
    AnsatzKind,
    DegenerateSigmaError,
    PhiAnsatz,
    PinnAnsatz,
    QSigmaAnsatz,
    SingularDenominatorError,
    eval_phi,
    eval_q_sigma,
    eval_u,
    f_dc,
    f_dc_bundle,
    recover_u_phi,
)
from qpme.autodiff import MlpSpec, ParamVector, value_of


@pytest.fixture
def setup2d():
    dom = DomainSpec.cube(2, 4.0)
    spec = MlpSpec(input_dim=3, hidden_widths=(6, 6))
    p = ParamVector.init(spec, np.random.default_rng(0))
    return dom, spec, p


def boundary_points(rng, dom, n):
    d = dom.d
    a = np.asarray(dom.half_widths)
    x = rng.uniform(-1, 1, size=(d, n)) * a[:, None]
    axis = rng.integers(0, d, n)
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    x[axis, np.arange(n)] = sign * a[axis]
    return x


def test_boundary_factor_basic_identities():
    assert f_dc(np.zeros(3), (2.0, 2.0, 2.0)) == pytest.approx(1.0)
    assert f_dc(np.array([2.0, 0.3, -1.0]), (2.0, 2.0, 2.0)) == 0.0
    rng = np.random.default_rng(1)
    X = rng.uniform(-2, 2, size=(3, 100))
    F, dF, d2F = f_dc_bundle(X, (2.0, 2.0, 2.0))
    h = 1e-6
    for k in range(3):
        e = np.zeros((3, 1))
        e[k] = h
        Fp, _, _ = f_dc_bundle(X + e, (2.0, 2.0, 2.0))
        Fm, _, _ = f_dc_bundle(X - e, (2.0, 2.0, 2.0))
        assert np.allclose(dF[k], (Fp - Fm) / (2 * h), rtol=1e-6, atol=1e-8)
        assert np.allclose(d2F[k], (Fp - 2 * F + Fm) / h**2, rtol=1e-3,
                           atol=1e-3)


def test_hard_constraints_exact_on_fuzzed_points(setup2d):
    dom, spec, p = setup2d
    rng = np.random.default_rng(2)
    n = 10000
    xb = boundary_points(rng, dom, n)
    t = rng.uniform(0, 1, n)

    assert np.max(np.abs(f_dc(xb, dom.half_widths))) <= 1e-12

    pinn = PinnAnsatz(spec, dom, soft_ic=True)
    assert np.max(np.abs(pinn.value(p, t, xb))) <= 1e-12

    phi = PhiAnsatz(spec, dom)
    ph, pht, _ = phi.bundle(p, t, xb)
    assert np.max(np.abs(value_of(ph))) <= 1e-12
    assert np.max(np.abs(value_of(pht))) <= 1e-12
    xin = rng.uniform(-4, 4, size=(2, n))
    phT, _, _ = phi.bundle(p, np.full(n, dom.T), xin)
    assert np.max(np.abs(value_of(phT))) <= 1e-12

    qs = QSigmaAnsatz(spec, spec, dom)
    qb, _, _ = qs.q_bundle(p, t, xb, with_lap=False)
    assert np.max(np.abs(value_of(qb))) <= 1e-12
    sigT, _, _ = qs.sigma_bundle(p, np.full(n, dom.T), xin, with_t=False)
    assert np.max(np.abs(value_of(sigT) - 1.0)) <= 1e-12

    u_in = pinn.value(p, rng.uniform(0, 1, n), xin)
    assert np.all(u_in >= 0.0)


def test_hard_ic_exact_at_initial_time(setup2d):
    dom, spec, p = setup2d
    ic = barenblatt_ic(2)
    pinn = PinnAnsatz(spec, dom, soft_ic=False, u0=ic)
    rng = np.random.default_rng(3)
    X = rng.uniform(-4, 4, size=(2, 500))
    assert np.max(np.abs(pinn.value(p, np.zeros(500), X) - ic.value(X))) <= 1e-12


@pytest.mark.parametrize("soft", [True, False])
def test_pinn_bundle_matches_finite_differences(setup2d, soft):
    dom, spec, p = setup2d
    ic = barenblatt_ic(2) if not soft else None
    pinn = PinnAnsatz(spec, dom, soft_ic=soft, u0=ic)
    rng = np.random.default_rng(4)
    X = rng.uniform(-2.0, 2.0, size=(2, 30))
    t = rng.uniform(0.1, 0.9, 30)
    b = pinn.bundle(p, t, X)
    h = 1e-5
    ut_fd = (pinn.value(p, t + h, X) - pinn.value(p, t - h, X)) / (2 * h)
    assert np.allclose(value_of(b.ut), ut_fd, rtol=1e-5, atol=1e-7)
    lap_fd = np.zeros(30)
    for k in range(2):
        e = np.zeros((2, 1))
        e[k] = h
        up = pinn.value(p, t, X + e)
        um = pinn.value(p, t, X - e)
        assert np.allclose(value_of(b.grad[k]), (up - um) / (2 * h),
                           rtol=1e-5, atol=1e-7)
        lap_fd += (up - 2 * pinn.value(p, t, X) + um) / h**2
    assert np.allclose(value_of(b.lap), lap_fd, rtol=2e-4, atol=2e-4)


def test_phi_bundle_matches_finite_differences(setup2d):
    dom, spec, p = setup2d
    phi = PhiAnsatz(spec, dom)
    rng = np.random.default_rng(5)
    X = rng.uniform(-2, 2, size=(2, 20))
    t = rng.uniform(0.1, 0.9, 20)
    _, pht, lap = phi.bundle(p, t, X)

    def phival(tt, XX):
        ph, _, _ = phi.bundle(p, tt, XX)
        return value_of(ph)

    h = 1e-5
    assert np.allclose(value_of(pht),
                       (phival(t + h, X) - phival(t - h, X)) / (2 * h),
                       rtol=1e-5, atol=1e-7)
    lap_fd = np.zeros(20)
    for k in range(2):
        e = np.zeros((2, 1))
        e[k] = h
        lap_fd += (phival(t, X + e) - 2 * phival(t, X) + phival(t, X - e)) / h**2
    assert np.allclose(value_of(lap), lap_fd, rtol=2e-4, atol=2e-4)


def test_sigma_variants_final_time_and_dt(setup2d):
    dom, spec, p = setup2d
    rng = np.random.default_rng(6)
    X = rng.uniform(-2, 2, size=(2, 25))
    t = rng.uniform(0.05, 0.95, 25)
    for growing in (False, True):
        qs = QSigmaAnsatz(spec, spec, dom, growing=growing)
        sig, sigt, _ = qs.sigma_bundle(p, t, X)
        h = 1e-6

        def sval(tt):
            s, _, _ = qs.sigma_bundle(p, tt, X, with_t=False)
            return value_of(s)

        fd = (sval(t + h) - sval(t - h)) / (2 * h)
        assert np.allclose(value_of(sigt), fd, rtol=1e-4, atol=1e-6)
        assert np.all(value_of(sig) > 0)
        sT, _, _ = qs.sigma_bundle(p, np.full(25, dom.T), X, with_t=False)
        assert np.max(np.abs(value_of(sT) - 1.0)) <= 1e-12


def test_growing_sigma_respects_floor(setup2d):
    dom, spec, p = setup2d
    qs = QSigmaAnsatz(spec, spec, dom, growing=True)
    rng = np.random.default_rng(7)
    X = rng.uniform(-2, 2, size=(2, 50))
    t = rng.uniform(0.0, 1.0, 50)
    sig, _, _ = qs.sigma_bundle(p, t, X, with_t=False)
    floor = (t / dom.T) ** (2.0 / 4.0)
    assert np.all(value_of(sig) >= floor - 1e-12)


def test_recover_u_phi_quotient_and_guard():
    rec = recover_u_phi(np.array([0.3]), np.array([0.4]))
    assert rec.u[0] == pytest.approx(0.5)
    assert rec.denominator[0] == pytest.approx(0.6)
    with pytest.raises(SingularDenominatorError):
        recover_u_phi(np.array([0.3]), np.array([1.0 - 1e-12]))


def test_qsigma_evaluate_guards_degenerate_sigma(setup2d):
    dom, spec, p = setup2d
    qs = QSigmaAnsatz(spec, spec, dom)
    X = np.zeros((2, 1))
    q, sig, rec, sigt, lapq = qs.evaluate(p, p, np.array([0.5]), X)
    assert value_of(rec.u)[0] == pytest.approx(
        value_of(q)[0] / value_of(sig)[0])
    with pytest.raises(DegenerateSigmaError):
        qs.evaluate(p, p, np.array([0.5]), X, sigma_floor=1e6)


def test_point_wrappers_match_batch_interfaces(setup2d):
    dom, spec, p = setup2d
    x = np.array([0.7, -1.1])
    d = eval_u(AnsatzKind.PINN_SOFT_IC_HARD_BC, p, 0.4, x, dom)
    pinn = PinnAnsatz(spec, dom, soft_ic=True)
    b = pinn.bundle(p, np.array([0.4]), x.reshape(2, 1))
    assert d.u == pytest.approx(value_of(b.u)[0])
    assert d.lap == pytest.approx(value_of(b.lap)[0])

    ph, pht, lap = eval_phi(p, 0.4, x, dom)
    assert np.isfinite([ph, pht, lap]).all()

    q, sig, rec, sigt, lapq = eval_q_sigma(AnsatzKind.Q_SIGMA, p, p, 0.4, x, dom)
    assert rec.u == pytest.approx(q / sig)


def test_phi_value_and_grad_consistent_with_values(setup2d):
    dom, spec, p = setup2d
    phi = PhiAnsatz(spec, dom)
    rng = np.random.default_rng(8)
    X = rng.uniform(-2, 2, size=(2, 10))
    t = np.full(10, 0.5)
    u, g = phi.value_and_grad(p, t, X)
    h = 1e-4
    for k in range(2):
        e = np.zeros((2, 1))
        e[k] = h
        fd = (phi.value(p, t, X + e) - phi.value(p, t, X - e)) / (2 * h)
        assert np.allclose(g[k], fd, rtol=1e-3, atol=1e-6)
