import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy import integrate, linalg, stats

from qpmh._kernels import bfgs_recursion
from qpmh.diagnostics import inefficiency_factor
from qpmh.pmh import (
    ChainState,
    GaussianProposal,
    GaussianTarget,
    ProposalSpec,
    acceptance_probability,
    bfgs_inverse_hessian,
    default_step,
    hybrid_psd_fallback,
    pmh_proposal,
    run_pmh,
)
from qpmh.smc import PosteriorEstimate


def _state(theta, loglik=0.0, grad=None, k=0):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    g = np.zeros_like(theta) if grad is None else np.atleast_1d(np.asarray(grad, dtype=float))
    return ChainState(theta, PosteriorEstimate(loglik, 0.0, g), True, k)


def _quadratic_window(A, points, b=None):
    """Chain states of the log-target -0.5 x'Ax + b'x."""
    b = np.zeros(A.shape[0]) if b is None else b
    out = []
    for k, x in enumerate(points):
        out.append(_state(x, -0.5 * x @ A @ x + b @ x, -A @ x + b, k))
    return out


# -- proposal specification --------------------------------------------------


def test_step_rules():
    assert default_step("pmh0", 3) ** 2 == pytest.approx(2.562**2 / 3)
    assert default_step("pmh1", 3) ** 2 == pytest.approx(1.125**2 * 3 ** (-1 / 3))
    assert default_step("pmh2", 3) == 1.0 and default_step("qpmh2", 3) == 1.0


@pytest.mark.parametrize("kw", [
    dict(kind="pmh0"),
    dict(kind="pmh1", precond=np.array([[1.0, 2.0], [2.0, 1.0]])),
    dict(kind="pmh0", precond=np.array([[1.0, 0.5], [0.0, 1.0]])),
    dict(kind="qpmh2", memory=1),
    dict(kind="qpmh2", delta=0.0),
    dict(kind="nuts"),
    dict(kind="pmh0", precond=np.eye(2), step=-1.0),
])
def test_invalid_proposal_specs(kw):
    with pytest.raises(ValueError):
        ProposalSpec(**kw)


def test_qpmh2_needs_no_preconditioner():
    assert ProposalSpec("qpmh2").precond is None


# -- acceptance probability -------------------------------------------------


def test_acceptance_equal_posteriors():
    assert acceptance_probability(_state(0.0, -1.0), _state(1.0, -1.0), 0.0, 0.0) == 1.0


def test_acceptance_capped_at_one():
    assert acceptance_probability(_state(0.0, np.log(2.0)), _state(1.0, 0.0), 0.0, 0.0) == 1.0


def test_acceptance_ratio_and_proposal_correction():
    a = acceptance_probability(_state(0.0, -np.log(4.0)), _state(1.0, 0.0), np.log(0.5), np.log(1.0))
    assert a == pytest.approx(0.5)


def test_acceptance_zero_for_minus_inf():
    assert acceptance_probability(_state(0.0, -np.inf), _state(1.0, 0.0), 0.0, 0.0) == 0.0


# -- fixed proposals ----------------------------------------------------------


def test_pmh0_covariance_with_identity_preconditioner():
    q = pmh_proposal(_state(np.zeros(3)), ProposalSpec("pmh0", precond=np.eye(3)))
    assert np.allclose(q.cov, 2.562**2 / 3 * np.eye(3))


def test_pmh1_with_zero_gradient_is_pmh0_with_its_step():
    P = np.array([[2.0, 0.3], [0.3, 1.0]])
    s = _state([0.4, -0.2])
    q1 = pmh_proposal(s, ProposalSpec("pmh1", precond=P))
    q0 = pmh_proposal(s, ProposalSpec("pmh0", precond=P, step=default_step("pmh1", 2)))
    assert np.allclose(q1.mean, q0.mean) and np.allclose(q1.cov, q0.cov)


def test_pmh2_on_quadratic_takes_half_newton_step():
    mean = np.array([1.0, -2.0])
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    target = GaussianTarget(mean, cov)
    theta = np.array([3.0, 1.0])
    s = ChainState(theta, target(theta), True, 0)
    q = pmh_proposal(s, ProposalSpec("pmh2"))
    # the drift term theta + 0.5 H^-1 G with eps = 1 is the midpoint to the Newton point
    assert np.allclose(q.mean, 0.5 * (theta + mean))
    assert np.allclose(q.cov, cov)


# -- BFGS ---------------------------------------------------------------------


def test_bfgs_one_dimensional_secant():
    # log-target -x^2: curvature 2, so the inverse estimate is 0.5
    win = _quadratic_window(np.array([[2.0]]), [np.array([0.0]), np.array([1.0])])
    H, fb = bfgs_inverse_hessian(win, 1000.0)
    assert not fb and H[0, 0] == pytest.approx(0.5)


def test_bfgs_identical_states_fall_back():
    s = _state([0.1, 0.2], -1.0, [1.0, 1.0])
    H, fb = bfgs_inverse_hessian([s, s, s], 1000.0)
    assert fb and np.allclose(H, np.eye(2) / 1000.0)


def test_bfgs_no_curvature_falls_back():
    # a linear log-target has zero curvature: every pair is skipped
    win = [_state([x], x, [1.0], k) for k, x in enumerate([0.0, 1.0, 2.0])]
    H, fb = bfgs_inverse_hessian(win, 10.0)
    assert fb and H[0, 0] == pytest.approx(0.1)


def test_bfgs_exact_with_conjugate_steps():
    # four points whose loglik-sorted steps are A-conjugate: three pairs suffice in p = 3
    rng = np.random.default_rng(0)
    Q = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    A = Q @ np.diag([1.0, 4.0, 9.0]) @ Q.T
    pts = [np.zeros(3)]
    for j, r in enumerate((1.0, 2.0, 3.0)):
        # moving outward along conjugate directions keeps loglik decreasing
        pts.append(pts[-1] + r * Q[:, j] / np.sqrt([1.0, 4.0, 9.0][j]))
    win = _quadratic_window(A, pts[::-1])
    assert _sorted_conjugate(win, A)
    H, fb = bfgs_inverse_hessian(win, 1000.0)
    assert not fb
    Ainv = np.linalg.inv(A)
    assert np.linalg.norm(H - Ainv) / np.linalg.norm(Ainv) < 1e-6


def _sorted_conjugate(win, A):
    order = np.argsort([s.estimate.loglik for s in win], kind="stable")
    th = np.array([win[i].theta for i in order])
    S = np.diff(th, axis=0)
    M = S @ A @ S.T
    return bool(np.allclose(M - np.diag(np.diag(M)), 0.0, atol=1e-10))


@given(hnp.arrays(np.float64, (6, 3), elements=st.floats(-3, 3)), st.floats(0.5, 5.0))
def test_bfgs_symmetric_and_positive_definite(X, scale):
    A = np.diag([1.0, 2.0, 3.0]) * scale
    S = np.diff(X, axis=0)
    G = S @ A
    H, used = bfgs_recursion(S, G, 1e-10)
    if used:
        assert np.allclose(H, H.T, atol=1e-12 * max(1.0, np.abs(H).max()))
        assert np.all(np.linalg.eigvalsh(0.5 * (H + H.T)) > -1e-12 * np.abs(H).max())


def test_bfgs_skips_negative_curvature_pairs():
    S = np.array([[1.0, 0.0], [0.0, 1.0]])
    G = np.array([[-1.0, 0.0], [0.0, 2.0]])
    H, used = bfgs_recursion(S, G, 1e-10)
    assert used == 1 and np.allclose(H, 0.5 * np.eye(2))


# -- hybrid fallback ----------------------------------------------------------


def test_hybrid_keeps_positive_definite_input():
    assert np.array_equal(hybrid_psd_fallback(np.eye(2), []), np.eye(2))


def test_hybrid_mirrors_eigenvalues_without_samples():
    assert np.allclose(hybrid_psd_fallback(np.diag([1.0, -2.0]), []), np.diag([1.0, 2.0]))


def test_hybrid_floor():
    assert np.allclose(hybrid_psd_fallback(np.diag([1.0, 0.0 - 1e-20]), []), np.diag([1.0, 1e-8]))


def test_hybrid_uses_recent_sample_covariance(rng):
    trace = rng.normal(size=(4000, 2)) * [1.0, 3.0]
    out = hybrid_psd_fallback(np.diag([1.0, -2.0]), trace, 2500)
    assert np.allclose(out, np.cov(trace[-2500:], rowvar=False) + 1e-8 * np.eye(2))


def test_hybrid_short_trace_mirrors(rng):
    trace = rng.normal(size=(10, 2))
    assert np.allclose(hybrid_psd_fallback(np.diag([1.0, -2.0]), trace), np.diag([1.0, 2.0]))


# -- the chain ----------------------------------------------------------------


def _closed_form_rw_acceptance(s):
    # stationary E[min(1, pi(x')/pi(x))] for a N(0,1) target and N(x, s^2) proposal
    f = lambda z, x: min(1.0, np.exp(-0.5 * ((x + s * z) ** 2 - x * x))) * stats.norm.pdf(x) * stats.norm.pdf(z)
    val, _ = integrate.dblquad(f, -10, 10, -10, 10, epsabs=1e-9)
    return val


def test_pmh0_acceptance_matches_closed_form():
    target = GaussianTarget([0.0], [[1.0]])
    hist = run_pmh(np.random.default_rng(1), target, ProposalSpec("pmh0", precond=np.eye(1)), 100_000, [0.0])
    expected = _closed_form_rw_acceptance(2.562)
    assert expected == pytest.approx(2 / np.pi * np.arctan(2 / 2.562), abs=1e-6)
    assert abs(hist.acceptance_rate() - expected) < 0.01


@pytest.mark.parametrize("kind", ["pmh0", "pmh1", "pmh2", "qpmh2"])
def test_every_kind_recovers_a_gaussian_target(kind):
    target = GaussianTarget([1.5], [[0.49]])
    spec = ProposalSpec(kind, precond=np.array([[1 / 0.49]]) if kind in ("pmh0", "pmh1") else None)
    burn = 1000
    hist = run_pmh(np.random.default_rng(2), target, spec, 30_000, [1.5], burn)
    w = hist.thetas[burn:, 0]
    se = np.sqrt(0.49 * max(inefficiency_factor(w), 1.0) / w.size)
    assert abs(w.mean() - 1.5) < 3 * se
    assert w.var() == pytest.approx(0.49, rel=0.1)


def _closed_form_qn_acceptance():
    # exact inverse Hessian on N(0,1): proposal N(x/2, 1), log ratio (x^2 - x'^2)/8
    f = lambda xp, x: min(1.0, np.exp((x * x - xp * xp) / 8)) * stats.norm.pdf(x) * stats.norm.pdf(xp, x / 2, 1.0)
    val, _ = integrate.dblquad(f, -10, 10, -12, 12, epsabs=1e-9)
    return val


def test_qpmh2_one_dimensional_acceptance_matches_closed_form():
    hist = run_pmh(np.random.default_rng(3), GaussianTarget([0.0], [[1.0]]), ProposalSpec("qpmh2"), 20_000, [0.0], 2000)
    assert hist.fallbacks == 0
    assert abs(hist.acceptance_rate(2000) - _closed_form_qn_acceptance()) < 0.01


def test_qpmh2_rejections_copy_lag_m_state():
    M = 20
    hist = run_pmh(np.random.default_rng(4), GaussianTarget([0.0, 1.0], np.eye(2)), ProposalSpec("qpmh2", memory=M), 3000, [0.0, 1.0])
    rej = np.flatnonzero(~hist.accepted)
    late = rej[rej >= M]
    assert late.size > 0
    assert np.array_equal(hist.thetas[late], hist.thetas[late - M])
    early = rej[(rej < M) & (rej > 0)]
    assert np.array_equal(hist.thetas[early], hist.thetas[early - 1])


def test_ring_buffer_length():
    M = 15
    for K in (5, 40):
        hist = run_pmh(np.random.default_rng(5), GaussianTarget([0.0], [[1.0]]), ProposalSpec("qpmh2", memory=M), K, [0.0])
        # the buffer also keeps the initial state until it is pushed out
        assert len(hist.buffer) == min(K + 1, M)


def test_posterior_mean_is_arithmetic_mean():
    hist = run_pmh(np.random.default_rng(6), GaussianTarget([0.0, 2.0], np.eye(2)), ProposalSpec("pmh0", precond=np.eye(2)), 5000, [0.0, 2.0])
    assert np.allclose(hist.posterior_mean(1000), hist.thetas[1000:].mean(axis=0), rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        hist.posterior_mean(5000)


def test_same_seed_same_chain():
    args = (GaussianTarget([0.0], [[1.0]]), ProposalSpec("qpmh2", memory=10), 500, [0.0])
    a = run_pmh(np.random.default_rng(7), *args)
    b = run_pmh(np.random.default_rng(7), *args)
    assert np.array_equal(a.thetas, b.thetas)


def test_invalid_start_raises():
    class Dead:
        def __call__(self, theta, rng=None, need_grad=True):
            return PosteriorEstimate(-np.inf, 0.0, np.zeros(1))

    with pytest.raises(ValueError):
        run_pmh(np.random.default_rng(0), Dead(), ProposalSpec("pmh0", precond=np.eye(1)), 10, [0.0])


def test_persistent_degeneracy_warns_without_aborting():
    class Collapsing:
        def __init__(self):
            self.calls = 0

        def __call__(self, theta, rng=None, need_grad=True):
            self.calls += 1
            ll = 0.0 if self.calls == 1 else -np.inf
            return PosteriorEstimate(ll, 0.0, np.zeros(1))

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        hist = run_pmh(np.random.default_rng(0), Collapsing(), ProposalSpec("pmh0", precond=np.eye(1)), 1000, [0.0])
    assert hist.K == 1000 and hist.degenerate_warnings == 2
    assert any("degenerate" in str(w.message) for w in caught)


def test_out_of_support_proposals_do_not_count_as_degenerate():
    class Bounded:
        def __call__(self, theta, rng=None, need_grad=True):
            inside = abs(theta[0]) < 1e-3
            return PosteriorEstimate(0.0 if inside else -np.inf, 0.0 if inside else -np.inf, np.zeros(1))

    hist = run_pmh(np.random.default_rng(0), Bounded(), ProposalSpec("pmh0", precond=np.eye(1)), 1000, [0.0])
    assert hist.degenerate_warnings == 0


def test_gaussian_proposal_density():
    q = GaussianProposal.build(np.array([0.5, -1.0]), np.array([[2.0, 0.4], [0.4, 1.0]]))
    x = np.array([0.1, 0.2])
    assert q.logpdf(x) == pytest.approx(stats.multivariate_normal(q.mean, q.cov).logpdf(x))
    with pytest.raises(linalg.LinAlgError):
        GaussianProposal.build(np.zeros(2), np.diag([1.0, -1.0]))
