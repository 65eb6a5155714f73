import math

import numpy as np
import pytest
from scipy.optimize import linprog

from commslide.bench.instances import generate_instance
from commslide.geometry import Box
from commslide.metrics import (
    BoundHypothesisError,
    THEOREMS,
    UncertifiedReferenceError,
    bound_report,
    certify_eps_delta,
    dual_norm_bound,
    feasibility_residual,
    gap_Q,
    lad_saddle_point,
    perturbed_gap,
    reference_solve,
    replicate,
    theorem_bounds,
)
from commslide.model import AgentProblem, LADObjective, MaxAffineObjective, Problem
from commslide.schedule import dcs_convex_schedule
from commslide.solver import run_dcs
from commslide.topology import apply_laplacian, build_graph, laplacian


@pytest.fixture(scope="module")
def tiny():
    p = generate_instance("lad_convex", 3, 2, 11)
    g = build_graph("path:3")
    L = laplacian(g, 2)
    xs, ys = lad_saddle_point(p, g)
    return p, g, L, xs, ys


def test_gap_Q_examples(tiny, rng):
    p, g, L, xs, ys = tiny
    box = p.agents[0].cset
    z = (box.sample(rng, 3), rng.standard_normal((3, 2)))
    assert gap_Q(z, z, p, L) == pytest.approx(0.0, abs=1e-12)
    x, y = z
    xb, yb = box.sample(rng, 3), rng.standard_normal((3, 2))
    naive = (p.value(x) + np.sum(apply_laplacian(L, x) * yb) - p.value(xb)
             - np.sum(apply_laplacian(L, xb) * y))
    assert gap_Q((x, y), (xb, yb), p, L) == pytest.approx(naive, rel=1e-13)


def test_gap_nonpositive_at_saddle(tiny, rng):
    p, g, L, xs, ys = tiny
    box = p.agents[0].cset
    for _ in range(300):
        zb = (box.sample(rng, 3), 5 * rng.standard_normal((3, 2)))
        assert gap_Q((xs, ys), zb, p, L) <= 1e-9


def _dual_value(p, L, y):
    """q(y) = sum_i min_{x_i in box} f_i(x_i) + <(Ly)_i, x_i>, each an LP."""
    s = apply_laplacian(L, y)
    total = 0.0
    for i, a in enumerate(p.agents):
        A, b = a.objective.A, a.objective.b
        R, d = A.shape
        c = np.concatenate([s[i], np.ones(R)])
        res = linprog(c, A_ub=np.block([[A, -np.eye(R)], [-A, -np.eye(R)]]),
                      b_ub=np.concatenate([b, -b]),
                      bounds=[(a.cset.lo[j], a.cset.hi[j]) for j in range(d)] + [(0, None)] * R,
                      method="highs")
        total += res.fun
    return total


def test_saddle_dual_attains_strong_duality(tiny):
    p, g, L, xs, ys = tiny
    ref = reference_solve(p)
    assert _dual_value(p, L, ys) == pytest.approx(ref.F_star, abs=1e-8)
    np.testing.assert_allclose(xs, replicate(ref.x_star, 3), atol=1e-7)


def test_perturbed_gap_examples(tiny, rng):
    p, g, L, xs, ys = tiny
    ref = reference_solve(p)
    box = p.agents[0].cset
    x, y = box.sample(rng, 3), rng.standard_normal((3, 2))
    v0 = np.zeros((3, 2))
    assert perturbed_gap(v0, (x, y), p, L, ref.x_star, [v0]) == pytest.approx(
        p.value(x) - ref.F_star, abs=1e-12)
    v = apply_laplacian(L, x)
    yb = rng.standard_normal((3, 2))
    vals = [perturbed_gap(v, (x, y), p, L, ref.x_star, [c * yb]) for c in (0.0, 1.0, -7.5)]
    assert max(vals) - min(vals) <= 1e-10
    for _ in range(50):
        probes = [10 * rng.standard_normal((3, 2)) for _ in range(5)]
        assert perturbed_gap(v0, (xs, ys), p, L, xs, probes) <= 1e-9
    with pytest.raises(ValueError):
        perturbed_gap(v0, (x, y), p, L, ref.x_star, [])


def test_feasibility_residual_examples(rng):
    L = laplacian(build_graph("path:3"), 1)
    assert feasibility_residual([[1.0], [0.0], [0.0]], L) == pytest.approx(math.sqrt(2))
    assert feasibility_residual(np.full((3, 1), 0.3), L) == 0.0
    L2 = laplacian(build_graph("cycle:5"), 3)
    x = rng.standard_normal((5, 3))
    dense = np.kron(L2.dense(), np.eye(3)) @ x.ravel()
    assert feasibility_residual(x, L2) == pytest.approx(np.linalg.norm(dense), rel=1e-13)


def test_certify(tiny):
    p, g, L, xs, ys = tiny
    ref = reference_solve(p)
    assert certify_eps_delta(replicate(ref.x_star, 3), ref, 1e-6, 1e-6, p, L).ok
    with pytest.raises(ValueError):
        certify_eps_delta(replicate(ref.x_star, 3), ref, -1.0, 1.0, p, L)
    loose = type(ref)(ref.x_star, ref.F_star, 1e-3)
    with pytest.raises(UncertifiedReferenceError):
        certify_eps_delta(replicate(ref.x_star, 3), loose, 1e-3, 1.0, p, L)


def test_certify_dcs_output_at_theorem_rhs(desk):
    problem, graph, L, spec = desk
    ref = reference_solve(problem)
    outer, inner = dcs_convex_schedule(spec.op_norm, 5, problem.M, 10, problem.D_sq)
    tr = run_dcs(problem, graph, outer, inner)
    br = bound_report(tr, problem, L, ref, spec)
    assert certify_eps_delta(tr.x_ergodic, ref, br.primal_bound_rhs, br.feas_bound_rhs,
                             problem, L).ok


def test_dual_norm_bound_examples():
    assert dual_norm_bound(4, 2.0, 1.0) == 4.0
    assert dual_norm_bound(1, 3.0, 2.0) == 1.5
    with pytest.raises(ValueError):
        dual_norm_bound(3, 1.0, 0.0)


def test_bound_formulas():
    assert theorem_bounds("dpd-convex", L_norm=3, N=10, V0=1).primal == pytest.approx(0.6)
    assert theorem_bounds("dcs-convex", L_norm=1, N=4, V0=1, D_tilde=1).primal == pytest.approx(1.25)
    assert theorem_bounds("dcs-strongly-convex", L_norm=1, N=2, V0=1, D_tilde=1, mu=1,
                          C=1).primal == pytest.approx(0.6)
    b = theorem_bounds("dcs-convex", L_norm=2, N=5, V0=1, D_tilde=1, ystar_dist=0.5)
    assert b.feas == pytest.approx(2 / 5 * (3 * math.sqrt(10) + 2))
    b = theorem_bounds("sdcs-convex", L_norm=2, N=5, V0=1, D_tilde=1, ystar_dist=0.5)
    assert b.primal == pytest.approx(2 / 5 * 7)
    assert b.feas == pytest.approx(2 / 5 * (3 * math.sqrt(14) + 2))
    assert b.primal_id == THEOREMS["sdcs-convex"][0]


def test_bound_hypotheses():
    with pytest.raises(BoundHypothesisError):
        theorem_bounds("dcs-strongly-convex", L_norm=1, N=2, V0=1, D_tilde=1, mu=0.0, C=1)
    with pytest.raises(BoundHypothesisError):
        theorem_bounds("sdcs-strongly-convex", L_norm=1, N=1, V0=1, D_tilde=1, mu=1, C=1)
    with pytest.raises(BoundHypothesisError):
        theorem_bounds("dcs-strongly-convex", L_norm=1, N=3, V0=1, D_tilde=1, mu=1, C=math.inf)
    with pytest.raises(ValueError):
        theorem_bounds("admm", L_norm=1, N=3, V0=1)


def test_reference_weighted_median():
    bs = [-0.5, 0.2, 0.9, 3.0, 3.5]
    agents = [AgentProblem(LADObjective([[1.0]], [b]), Box.cube(1, -1, 1)) for b in bs]
    ref = reference_solve(Problem(agents))
    assert ref.x_star[0] == pytest.approx(0.9, abs=1e-9)
    agents = [AgentProblem(LADObjective([[1.0]], [b]), Box.cube(1, -1, 1)) for b in (2.0, 3.0, 4.0)]
    assert reference_solve(Problem(agents)).x_star[0] == pytest.approx(1.0, abs=1e-9)


def test_reference_strongly_convex_golden_section():
    from scipy.optimize import minimize_scalar

    p = generate_instance("lad_strongly_convex", 3, 1, 8)
    ref = reference_solve(p)
    res = minimize_scalar(lambda t: p.value(np.full((3, 1), t)), bounds=(-2, 2), method="bounded",
                          options={"xatol": 1e-12})
    assert ref.x_star[0] == pytest.approx(res.x, abs=1e-6)
    assert ref.F_star <= res.fun + 1e-12


def test_reference_zero_objective():
    agents = [AgentProblem(LADObjective(np.zeros((0, 2)), []), Box.cube(2, -1, 1))] * 2
    ref = reference_solve(Problem(agents))
    assert ref.F_star == 0.0


def test_reference_max_affine_grid():
    C = np.array([[1.0, 0.0], [-1.0, 0.5], [0.0, -1.0]])
    agents = [AgentProblem(MaxAffineObjective(C, [0.0, 0.1, 0.2]), Box.cube(2, -1, 1)),
              AgentProblem(MaxAffineObjective(-C, [0.3, 0.0, 0.0]), Box.cube(2, -1, 1))]
    p = Problem(agents)
    ref = reference_solve(p, accuracy=1e-7)
    grid = np.linspace(-1, 1, 801)
    G = np.stack(np.meshgrid(grid, grid, indexing="ij"), -1).reshape(-1, 2)
    best = float(np.min((G @ C.T + [0.0, 0.1, 0.2]).max(1) + (-G @ C.T + [0.3, 0.0, 0.0]).max(1)))
    assert ref.F_star <= best + 1e-12
    assert best - ref.F_star <= 1e-2
    assert ref.tolerance <= 1e-7


def test_desk_reference_accuracy(desk):
    assert reference_solve(desk[0], accuracy=1e-8).tolerance <= 1e-8
