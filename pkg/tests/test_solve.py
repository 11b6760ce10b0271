import numpy as np
import pytest
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from carlift.carleman import CarlemanBasis, lift, run_lifted
from carlift.errors import ConvergenceError, StructureError
from carlift.model import scalar_model
from carlift.schedule import make_lambda_grid, make_vp_schedule
from carlift.solve import (
    LchsConfig,
    forward_substitute,
    gmres_solve,
    lchs_solve,
    qlss_cost_model,
)
from carlift.system import assemble_global_dpm

S = make_vp_schedule(0.1, 20.0, 1.0)


def quadratic_system(N=3, M=6):
    m = scalar_model({(0, 0): 0.1, (1, 0): -0.5, (2, 0): 0.1})
    basis = CarlemanBasis(N=N, d=1)
    grid = make_lambda_grid(S, 0.6, 0.05, M)
    states, qcms = run_lifted(S, m, [0.8], grid, basis, scheme="dpm", order=1)
    return assemble_global_dpm(qcms, lift([0.8], basis).y), states


def test_forward_substitution_solves_exactly():
    system, states = quadratic_system()
    result = forward_substitute(system)
    assert result.residual < 1e-11
    assert result.method == "forward_substitution"
    assert np.allclose(result.solution, np.concatenate([st.y for st in states]), atol=1e-12)
    dense = np.linalg.solve(system.mat.toarray(), system.rhs)
    assert np.allclose(result.solution, dense, atol=1e-11)


def test_forward_substitution_structure_checks():
    class Fake:
        pass

    bad = Fake()
    bad.mat = sp.csr_matrix(np.array([[1.0, 0.5], [0.0, 1.0]]))
    bad.rhs = np.ones(2)
    with pytest.raises(StructureError):
        forward_substitute(bad)
    bad.mat = sp.csr_matrix(np.array([[2.0, 0.0], [1.0, 1.0]]))
    with pytest.raises(StructureError):
        forward_substitute(bad)
    bad.mat = sp.csr_matrix(np.eye(3))
    with pytest.raises(ValueError):
        forward_substitute(bad)


def test_gmres_agrees_with_forward_substitution():
    system, _ = quadratic_system()
    direct = forward_substitute(system)
    iterative = gmres_solve(system, tol=1e-12)
    assert iterative.residual <= 1e-12
    assert iterative.iterations > 0
    assert np.allclose(iterative.solution, direct.solution, atol=1e-8)


def test_gmres_unreachable_tolerance_raises():
    system, _ = quadratic_system()
    with pytest.raises(ConvergenceError) as exc:
        gmres_solve(system, tol=1e-30)
    assert exc.value.residual is not None
    assert exc.value.iterations is not None


CONST_A = np.array([[2.0, 1.0], [1.0, 3.0]])
CONST_B = np.array([1.0, 0.5])
U0 = np.array([1.0, -0.5])


def expm_endpoint(A, b, u0, T):
    E = expm(-A * T)
    u = E @ u0
    if b is not None:
        u = u + np.linalg.solve(A, (np.eye(len(u0)) - E) @ b)
    return u


def test_lchs_constant_inhomogeneous_matches_expm():
    ref = expm_endpoint(CONST_A, CONST_B, U0, 1.0)
    res = lchs_solve(lambda t: CONST_A, lambda t: CONST_B, U0, 1.0)
    assert res.config.K == 32.0 and res.config.nodes == 257
    assert np.linalg.norm(res.u - ref) < 2e-4
    assert not np.iscomplexobj(res.u)
    # constant coefficients are detected: one exponential per node
    assert res.n_exponentials == 257


def test_lchs_homogeneous_and_nonsymmetric():
    A = np.array([[2.0, 1.5], [0.5, 3.0]])
    ref = expm_endpoint(A, None, U0, 1.0)
    res = lchs_solve(lambda t: A, None, U0, 1.0)
    assert np.linalg.norm(res.u - ref) < 2e-4
    assert res.shift == pytest.approx(0.0, abs=1e-9)


def test_lchs_error_non_increasing_as_kernel_window_doubles():
    ref = expm_endpoint(CONST_A, CONST_B, U0, 1.0)
    errs = []
    for K, nodes in ((32.0, 257), (64.0, 513), (128.0, 1025)):
        cfg = LchsConfig(K=K, nodes=nodes, substeps=64)
        res = lchs_solve(lambda t: CONST_A, lambda t: CONST_B, U0, 1.0, cfg)
        errs.append(float(np.linalg.norm(res.u - ref)))
        # trapezoid mass of the truncated kernel: (2/pi) atan(K)
        assert res.kernel_mass == pytest.approx(2.0 / np.pi * np.arctan(K), abs=2e-4)
    assert errs[0] >= errs[1] >= errs[2]


def test_lchs_time_dependent_matches_adaptive_integrator():
    def A_fun(t):
        return np.array([[2.0 + t, 1.0], [1.0, 3.0 - 0.5 * t]])

    def b_fun(t):
        return np.array([np.sin(t), 1.0])

    sol = solve_ivp(lambda t, u: -A_fun(t) @ u + b_fun(t), (0.0, 1.0), U0,
                    rtol=1e-11, atol=1e-13)
    res = lchs_solve(A_fun, b_fun, U0, 1.0)
    assert np.linalg.norm(res.u - sol.y[:, -1]) < 1e-3
    # frozen-midpoint propagators are rebuilt per node and substep
    assert res.n_exponentials == 257 * 64


def test_lchs_stability_shift_for_indefinite_part():
    A = np.diag([-1.0, 2.0])
    ref = expm_endpoint(A, None, U0, 1.0)
    res = lchs_solve(lambda t: A, None, U0, 1.0)
    assert res.shift == pytest.approx(1.0, abs=1e-9)
    assert np.linalg.norm(res.u - ref) / np.linalg.norm(ref) < 0.05


def test_lchs_validation():
    with pytest.raises(ValueError):
        lchs_solve(lambda t: CONST_A, None, U0, 0.0)
    with pytest.raises(ValueError):
        LchsConfig(K=-1.0)
    with pytest.raises(ValueError):
        LchsConfig(nodes=2)
    with pytest.raises(ValueError):
        LchsConfig(substeps=0)
    with pytest.raises(ValueError):
        LchsConfig(kernel="gaussian")


def test_qlss_cost_model_value_and_ratios():
    base = qlss_cost_model(kappa=10.0, eps=1e-3, J=2, p=2, N=64)
    assert base == pytest.approx(2 * 2 * 10.0 * np.log2(64 / 1e-3) ** 2)
    assert qlss_cost_model(20.0, 1e-3, 2, 2, 64) == pytest.approx(2 * base)
    assert qlss_cost_model(10.0, 1e-3, 4, 2, 64) == pytest.approx(2 * base)
    # the polylog knob is labelled, not hidden
    linear = qlss_cost_model(10.0, 1e-3, 2, 2, 64, c_poly=1.0)
    assert base / linear == pytest.approx(np.log2(64 / 1e-3))


def test_qlss_cost_model_validation():
    with pytest.raises(ValueError):
        qlss_cost_model(0.5, 1e-3, 1, 1, 4)
    with pytest.raises(ValueError):
        qlss_cost_model(2.0, 0.0, 1, 1, 4)
    with pytest.raises(ValueError):
        qlss_cost_model(2.0, 1e-3, 0, 1, 4)
    with pytest.raises(ValueError):
        qlss_cost_model(2.0, 8.0, 1, 1, 4)
