import numpy as np
import pytest

from rtadapt import assembly, postprocess, quadrature as quad, solver
from rtadapt.assembly import MixedSolution, assemble_centered
from rtadapt.mesh import Triangulation, build_initial_mesh
from rtadapt.postprocess import (FluxField, build_ptilde, edge_mean_mismatch,
                                 element_quadratic, nodal_average,
                                 ptilde_gradient, ptilde_values,
                                 tangential_jump_sq)
from rtadapt.problem import ElementCoefficients, ProblemData, benchmark


def make_problem(mesh, S=None, n=None):
    n = mesh.num_elements if n is None else n
    S = np.eye(2) if S is None else S
    coeffs = [ElementCoefficients(S, np.zeros(2), 0.0) for _ in range(n)]
    return ProblemData(coeffs)


def dofs_from_field(mesh, func):
    """Edge coefficients (mean normal trace) of an arbitrary vector field."""
    rule = quad.gauss_edge_rule(5)
    a = mesh.vert_coords[mesh.edge_verts[:, 0]]
    b = mesh.vert_coords[mesh.edge_verts[:, 1]]
    pts = rule.physical_points(a, b)
    vals = func(pts[..., 0], pts[..., 1])
    trace = np.einsum("eqd,ed->eq", vals, mesh.edge_normal)
    return trace @ rule.weights


class TestBuildPtilde:
    def test_zero_flux_gives_constant(self):
        mesh = build_initial_mesh("unit-square")
        data = make_problem(mesh)
        sol = MixedSolution(np.zeros(mesh.num_edges),
                            np.arange(mesh.num_elements, dtype=float),
                            "centered")
        coeffs = build_ptilde(mesh, data.fields(mesh), sol)
        assert np.allclose(coeffs[:, 1:], 0.0, atol=1e-15)
        assert np.allclose(coeffs[:, 0], sol.pressure, atol=1e-15)

    def test_constant_field_recovers_linear(self):
        # u_h = (1, 0), S = I, p_K = 0: ptilde = -(x - xbar_K)
        mesh = build_initial_mesh("unit-square")
        data = make_problem(mesh)
        sol = MixedSolution(
            dofs_from_field(mesh, lambda x, y: np.stack(
                [np.ones_like(x), np.zeros_like(y)], axis=-1)),
            np.zeros(mesh.num_elements), "centered")
        coeffs = build_ptilde(mesh, data.fields(mesh), sol)
        bary = mesh.barycenters()
        for t in range(mesh.num_elements):
            q = element_quadratic(coeffs, t)
            assert q.coeffs[1] == pytest.approx(-1.0, abs=1e-13)
            assert np.allclose(q.coeffs[2:], 0.0, atol=1e-13)
            assert q.coeffs[0] == pytest.approx(bary[t, 0], abs=1e-13)

    def test_mean_reproduction_random(self):
        mesh = build_initial_mesh("square2x2")
        rng = np.random.default_rng(31)
        for _ in range(100):
            Q = rng.normal(size=(2, 2))
            S = Q @ Q.T + 0.2 * np.eye(2)
            data = make_problem(mesh, S=S)
            sol = MixedSolution(rng.normal(size=mesh.num_edges),
                                rng.normal(size=mesh.num_elements),
                                "centered")
            coeffs = build_ptilde(mesh, data.fields(mesh), sol)
            pts = quad.SEVEN_POINT.physical_points(mesh.elem_coords())
            means = ptilde_values(coeffs, pts) @ quad.SEVEN_POINT.weights
            assert np.abs(means - sol.pressure).max() <= 1e-12

    def test_gradient_identity_at_quadrature_points(self):
        mesh = build_initial_mesh("square2x2").uniform_refine()
        rng = np.random.default_rng(8)
        Q = rng.normal(size=(2, 2))
        S = Q @ Q.T + 0.5 * np.eye(2)
        data = make_problem(mesh, S=S, n=8)
        fields = data.fields(mesh)
        sol = MixedSolution(rng.normal(size=mesh.num_edges),
                            rng.normal(size=mesh.num_elements), "centered")
        coeffs = build_ptilde(mesh, fields, sol)
        flux = FluxField(mesh, fields, sol)
        pts = quad.SEVEN_POINT.physical_points(mesh.elem_coords())
        grad = ptilde_gradient(coeffs, pts)
        u_h = flux.u(np.arange(mesh.num_elements), pts)
        resid = np.einsum("tab,tqb->tqa", fields.S, grad) + u_h
        scale = 1.0 + np.abs(u_h).max()
        assert np.abs(resid).max() <= 1e-12 * scale


class TestTangentialJumps:
    def test_continuous_gradient_no_interior_jump(self):
        # u = S grad q for affine q and S = I: S^-1 u = grad q is continuous
        mesh = build_initial_mesh("unit-square").uniform_refine()
        data = make_problem(mesh, n=8)
        g = np.array([2.0, -3.0])
        sol = MixedSolution(
            dofs_from_field(mesh, lambda x, y: np.broadcast_to(
                g, x.shape + (2,))),
            np.zeros(mesh.num_elements), "centered")
        flux = FluxField(mesh, data.fields(mesh), sol)
        jumps = tangential_jump_sq(mesh, flux)
        interior = mesh.edge_flag == 0
        assert np.abs(jumps[interior]).max() <= 1e-26
        # one-sided boundary traces equal |gamma_t(g)|^2 * length
        for e in np.flatnonzero(~interior):
            expected = (g @ mesh.edge_tangent[e]) ** 2 * mesh.edge_length[e]
            assert jumps[e] == pytest.approx(expected, rel=1e-12, abs=1e-15)

    def test_random_patch_against_oracle(self):
        mesh = build_initial_mesh("square2x2")
        rng = np.random.default_rng(77)
        for trial in range(20):
            Q = rng.normal(size=(2, 2))
            S = Q @ Q.T + 0.3 * np.eye(2)
            data = make_problem(mesh, S=S)
            fields = data.fields(mesh)
            sol = MixedSolution(rng.normal(size=mesh.num_edges),
                                rng.normal(size=mesh.num_elements),
                                "centered")
            flux = FluxField(mesh, fields, sol)
            got = tangential_jump_sq(mesh, flux)
            oracle = tangential_jump_sq(mesh, flux, rule=quad.ORACLE_EDGE)
            assert np.abs(got - oracle).max() <= 1e-12 * (1 + oracle.max())

    def test_scaled_weighting_factor(self):
        # S = 4I on both sides: S^-1 scales traces by 1/16 in the square,
        # S^-1/2 by 1/4, so the squared-jump ratio is 4
        mesh = build_initial_mesh("unit-square")
        data4 = make_problem(mesh, S=4.0 * np.eye(2))
        rng = np.random.default_rng(13)
        sol = MixedSolution(rng.normal(size=mesh.num_edges),
                            np.zeros(mesh.num_elements), "centered")
        flux = FluxField(mesh, data4.fields(mesh), sol)
        j_inv = tangential_jump_sq(mesh, flux, "inv")
        j_half = tangential_jump_sq(mesh, flux, "invsqrt")
        assert np.allclose(j_half, 4.0 * j_inv, rtol=1e-12)

    def test_identity_weighting_coincides(self):
        mesh = build_initial_mesh("unit-square")
        data = make_problem(mesh)
        rng = np.random.default_rng(14)
        sol = MixedSolution(rng.normal(size=mesh.num_edges),
                            np.zeros(mesh.num_elements), "centered")
        flux = FluxField(mesh, data.fields(mesh), sol)
        assert np.allclose(tangential_jump_sq(mesh, flux, "inv"),
                           tangential_jump_sq(mesh, flux, "invsqrt"),
                           rtol=1e-14)
        assert np.array_equal(
            postprocess.tangential_jump_sq_scaled(mesh, flux),
            tangential_jump_sq(mesh, flux, "invsqrt"))

    def test_zero_field(self):
        mesh = build_initial_mesh("lshape")
        data = make_problem(mesh)
        sol = MixedSolution(np.zeros(mesh.num_edges),
                            np.zeros(mesh.num_elements), "centered")
        flux = FluxField(mesh, data.fields(mesh), sol)
        assert np.all(tangential_jump_sq(mesh, flux) == 0.0)

    def test_hand_computed_two_element_patch(self):
        # square split along the diagonal; prescribe raw affine fields
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        mesh = Triangulation(coords, np.array([[0, 1, 2], [0, 2, 3]]))
        data = make_problem(mesh)
        fields = data.fields(mesh)
        sol = MixedSolution(np.zeros(mesh.num_edges),
                            np.zeros(mesh.num_elements), "centered")
        flux = FluxField(mesh, fields, sol)
        # overwrite the reconstruction: side 0 carries u = (y, 0), side 1 zero
        flux.a = np.array([[0.0, 0.0], [0.0, 0.0]])
        flux.b = np.array([0.0, 0.0])
        # u = a + b x only spans fields with u_x,x = u_y,y; use b = 0 and
        # constant a = (1, 0) against zero: jump of gamma_t across y = x
        flux.a[0] = [1.0, 0.0]
        diag = [e for e in range(mesh.num_edges)
                if mesh.edge_flag[e] == 0][0]
        t = mesh.edge_tangent[diag]
        expected = (np.array([1.0, 0.0]) @ t) ** 2 * mesh.edge_length[diag]
        got = tangential_jump_sq(mesh, flux)[diag]
        assert got == pytest.approx(expected, rel=1e-14)


class TestSolvedSolutionProperties:
    def test_edge_mean_continuity_pure_diffusion(self):
        _, data, _ = benchmark("lshape")
        mesh = data.initial_mesh("lshape").uniform_refine()
        sol = solver.solve(assemble_centered(mesh, data), mesh.num_edges)
        coeffs = build_ptilde(mesh, data.fields(mesh), sol)
        mismatch = edge_mean_mismatch(mesh, coeffs)
        interior = mesh.edge_flag == 0
        scale = np.abs(sol.pressure).max()
        assert np.abs(mismatch[interior]).max() <= 1e-8 * scale

    def test_dirichlet_edge_means_match_data(self):
        _, data, _ = benchmark("lshape")
        mesh = data.initial_mesh("lshape").uniform_refine()
        sol = solver.solve(assemble_centered(mesh, data), mesh.num_edges)
        coeffs = build_ptilde(mesh, data.fields(mesh), sol)
        mismatch = edge_mean_mismatch(mesh, coeffs)
        pd = assembly.dirichlet_edge_means(mesh, data)
        boundary = mesh.edge_flag == 1
        assert np.abs(mismatch[boundary] - pd[boundary]).max() <= 1e-8


def test_edge_mean_continuity_reported_for_upwind():
    # the mean-continuity identity follows from the flux equation, which
    # both schemes share; for the upwind scheme it is reported, not relied
    # upon, so this check only prints the observed magnitude
    domain, data, _ = benchmark("layer", eps=0.01, a=0.1)
    mesh = data.initial_mesh(domain).uniform_refine()
    sol = solver.solve(assembly.assemble_upwind(mesh, data), mesh.num_edges)
    coeffs = build_ptilde(mesh, data.fields(mesh), sol)
    mismatch = edge_mean_mismatch(mesh, coeffs)
    interior = mesh.edge_flag == 0
    observed = np.abs(mismatch[interior]).max()
    print(f"upwind interior edge-mean mismatch: {observed:.3e}")
    assert np.isfinite(observed)


def test_nodal_average():
    mesh = build_initial_mesh("unit-square")
    values = np.arange(mesh.num_elements, dtype=float)
    nodal = nodal_average(mesh, values)
    # the center vertex touches all 8 elements
    assert nodal[8] == pytest.approx(values.mean())
