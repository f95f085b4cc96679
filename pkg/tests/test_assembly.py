import numpy as np
import pytest

from rtadapt import assembly, quadrature as quad, solver
from rtadapt.assembly import (CENTERED, UPWIND, assemble_centered,
                              assemble_upwind, basis_factors,
                              flux_through_edge, local_matrices, reconstruct,
                              upwind_value_coeffs, upwind_weight)
from rtadapt.mesh import DIRICHLET, Triangulation, build_initial_mesh
from rtadapt.problem import ElementCoefficients, ProblemData, benchmark


def identity_problem(n_coarse, f=None, dirichlet=None, w=(0.0, 0.0), r=0.0,
                     S=None):
    S = np.eye(2) if S is None else S
    coeffs = [ElementCoefficients(S, np.asarray(w, dtype=float), r)
              for _ in range(n_coarse)]
    return ProblemData(coeffs, f=f, dirichlet_data=dirichlet)


def reference_triangle():
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    elems = np.array([[0, 1, 2]])
    return Triangulation(coords, elems)


def oracle_mass_entry(mesh, Sinv, t, i, j):
    """High-order quadrature of int_K (S^-1 phi_i) . phi_j."""
    rule = quad.ORACLE_TRI
    coords = mesh.elem_coords()[t]
    pts = rule.physical_points(coords)
    C = basis_factors(mesh)[t]
    phi_i = C[i] * (pts - coords[i])
    phi_j = C[j] * (pts - coords[j])
    integrand = np.einsum("qa,ab,qb->q", phi_i, Sinv, phi_j)
    return float(rule.integrate(integrand, mesh.elem_area[t]))


class TestLocalMatrices:
    def test_reference_triangle_identity(self):
        mesh = reference_triangle()
        data = identity_problem(1)
        local = local_matrices(mesh, data.fields(mesh))[0]
        Sinv = np.eye(2)
        for i in range(3):
            for j in range(3):
                assert local.M[i, j] == pytest.approx(
                    oracle_mass_entry(mesh, Sinv, 0, i, j), abs=1e-12
                )

    def test_random_triangles_random_spd(self):
        rng = np.random.default_rng(12)
        for _ in range(25):
            coords = rng.uniform(-1, 1, size=(3, 2))
            d1, d2 = coords[1] - coords[0], coords[2] - coords[0]
            if d1[0] * d2[1] - d1[1] * d2[0] < 0.05:
                continue
            mesh = Triangulation(coords, np.array([[0, 1, 2]]))
            Q = rng.normal(size=(2, 2))
            S = Q @ Q.T + 0.3 * np.eye(2)
            data = identity_problem(1, S=S)
            local = local_matrices(mesh, data.fields(mesh))[0]
            Sinv = np.linalg.inv(S)
            for i in range(3):
                for j in range(3):
                    assert local.M[i, j] == pytest.approx(
                        oracle_mass_entry(mesh, Sinv, 0, i, j),
                        rel=1e-12, abs=1e-13,
                    )

    def test_divergence_integrals_are_signed_lengths(self):
        mesh = build_initial_mesh("lshape")
        data = identity_problem(6)
        for t, local in enumerate(local_matrices(mesh, data.fields(mesh))):
            expected = mesh.elem_signs[t] * mesh.edge_length[mesh.elem_edges[t]]
            assert np.array_equal(local.B, expected)

    def test_zero_velocity_kills_convection(self):
        mesh = build_initial_mesh("unit-square")
        data = identity_problem(8)
        for local in local_matrices(mesh, data.fields(mesh)):
            assert np.all(local.conv == 0.0)

    def test_reaction_block(self):
        mesh = reference_triangle()
        coeffs = [ElementCoefficients(np.eye(2), np.zeros(2), 3.0)]
        data = ProblemData(coeffs)
        local = local_matrices(mesh, data.fields(mesh))[0]
        assert local.react == pytest.approx(3.0 * 0.5)


class TestFluxThroughEdge:
    def test_horizontal_edge(self):
        # unit-square mesh: element 0 is ((0,0),(0.5,0),(0.5,0.5));
        # its edge opposite the apex lies on y=0 with outward normal (0,-1)
        mesh = build_initial_mesh("unit-square")
        t = 0
        local = None
        for i in range(3):
            e = mesh.elem_edges[t, i]
            mid = mesh.edge_midpoints()[e]
            if abs(mid[1]) < 1e-12:
                local = i
        w = np.array([0.0, 1.0])
        got = flux_through_edge(w, mesh, t, local)
        assert got == pytest.approx(-0.5)  # outward normal (0,-1), length 1/2

    def test_vertical_velocity_through_vertical_edge(self):
        mesh = build_initial_mesh("unit-square")
        mids = mesh.edge_midpoints()
        w = np.array([0.0, 1.0])
        for t in range(mesh.num_elements):
            for i in range(3):
                e = mesh.elem_edges[t, i]
                a, b = mesh.edge_verts[e]
                dvec = mesh.vert_coords[b] - mesh.vert_coords[a]
                if abs(dvec[0]) < 1e-12:  # vertical edge
                    assert flux_through_edge(w, mesh, t, i) == pytest.approx(0.0)

    def test_antisymmetry_across_interior_edges(self):
        mesh = build_initial_mesh("square2x2")
        rng = np.random.default_rng(5)
        w = rng.normal(size=2)
        for e in range(mesh.num_edges):
            patch = mesh.edge_patch(e)
            if len(patch) != 2:
                continue
            vals = []
            for t in patch:
                i = int(np.flatnonzero(mesh.elem_edges[t] == e)[0])
                vals.append(flux_through_edge(w, mesh, t, i))
            assert vals[0] == pytest.approx(-vals[1], rel=1e-14, abs=1e-15)


class TestUpwindWeight:
    def test_zero_flux(self):
        assert upwind_weight(1.0, 1.0, 0.5, 0.0, False) == 0.0

    def test_inflow_boundary(self):
        assert upwind_weight(1.0, None, 0.5, -2.0, True) == 0.0

    def test_harmonic_average_case(self):
        eps = 1e-3
        # equal eigenvalues, flux 4*eps: min(eps/(4 eps), 1/2) = 1/4
        assert upwind_weight(eps, eps, 1.0, 4 * eps, False) == pytest.approx(0.25)

    def test_cap_at_half(self):
        assert upwind_weight(10.0, 10.0, 1.0, 1.0, False) == 0.5

    def test_coefficient_pairs(self):
        assert upwind_value_coeffs(0.5, 1.0, True) == (0.5, 0.5)
        assert upwind_value_coeffs(0.0, 1.0, True) == (1.0, 0.0)
        # inflow boundary with nu = 0 puts full weight on the datum slot,
        # so a homogeneous datum gives a vanishing face value
        c_own, c_dat = upwind_value_coeffs(0.0, -1.0, False)
        assert c_own == 0.0 and c_dat == 1.0


class TestAssembleCentered:
    def test_dimension(self):
        mesh = build_initial_mesh("lshape")
        data = identity_problem(6)
        system = assemble_centered(mesh, data)
        n_free = int(np.count_nonzero(mesh.edge_flag != 2))
        assert system.dimension == n_free + mesh.num_elements

    def test_symmetric_for_pure_diffusion(self):
        _, data, _ = benchmark("kellogg1")
        mesh = data.initial_mesh("square2x2").uniform_refine()
        system = assemble_centered(mesh, data)
        asym = abs(system.matrix - system.matrix.T).max()
        assert asym <= 1e-14

    def test_pure_diffusion_zero_source_rhs_support(self):
        _, data, _ = benchmark("lshape")
        mesh = data.initial_mesh("lshape")
        system = assemble_centered(mesh, data)
        rhs = system.rhs
        dir_rows = set(system.edge_dof[np.flatnonzero(mesh.edge_flag == 1)])
        for row in range(system.dimension):
            if row in dir_rows:
                continue
            assert rhs[row] == pytest.approx(0.0, abs=1e-15)
        assert np.abs(rhs).max() > 0.0

    def test_nonsymmetric_with_convection(self):
        domain, data, _ = benchmark("layer", eps=0.1, a=0.1)
        mesh = data.initial_mesh(domain)
        system = assemble_centered(mesh, data)
        assert abs(system.matrix - system.matrix.T).max() > 1e-8
        # sparsity pattern still symmetric
        pattern = system.matrix.copy()
        pattern.data = np.ones_like(pattern.data)
        assert abs(pattern - pattern.T).max() == 0.0

    def test_matrix_dump_format(self):
        mesh = reference_triangle()
        data = identity_problem(1)
        system = assemble_centered(mesh, data)
        for line in system.dump_matrix().strip().splitlines():
            r, c, v = line.split()
            int(r), int(c), float(v)


class TestAssembleUpwind:
    def test_zero_velocity_equals_centered(self):
        _, data, _ = benchmark("kellogg1")
        mesh = data.initial_mesh("square2x2").uniform_refine()
        sys_c = assemble_centered(mesh, data)
        sys_u = assemble_upwind(mesh, data)
        assert abs(sys_c.matrix - sys_u.matrix).max() <= 1e-14
        assert np.allclose(sys_c.rhs, sys_u.rhs, atol=1e-15)

    def test_interior_edge_in_two_rows_with_opposite_fluxes(self):
        domain, data, _ = benchmark("layer", eps=0.01, a=0.05)
        mesh = data.initial_mesh(domain)
        fields = data.fields(mesh)
        wflux = assembly._edge_fluxes(mesh, fields)
        for e in range(mesh.num_edges):
            patch = mesh.edge_patch(e)
            if len(patch) != 2:
                continue
            vals = []
            for t in patch:
                i = int(np.flatnonzero(mesh.elem_edges[t] == e)[0])
                vals.append(wflux[t, i])
            assert vals[0] == pytest.approx(-vals[1], abs=1e-15)

    def test_upwind_element_rows_against_reevaluation(self):
        """Element rows rebuilt independently edge by edge."""
        domain, data, _ = benchmark("layer", eps=0.01, a=0.05)
        mesh = data.initial_mesh(domain).uniform_refine()
        fields = data.fields(mesh)
        system = assemble_upwind(mesh, data)
        A = system.matrix.tocsr()
        nu = system.nu
        pd_mean = assembly.dirichlet_edge_means(mesh, data)
        frow = assembly.load_vector(mesh, data)

        for t in range(mesh.num_elements):
            row = system.element_row(t)
            expected = {}
            rhs_expected = -frow[t]

            def add(col, val):
                expected[col] = expected.get(col, 0.0) + val

            add(row, -fields.r[t] * mesh.elem_area[t])
            for i in range(3):
                e = mesh.elem_edges[t, i]
                w_ke = flux_through_edge(fields.w[t], mesh, t, i)
                dof = system.edge_dof[e]
                if dof >= 0:
                    add(dof, -mesh.elem_signs[t, i] * mesh.edge_length[e])
                if w_ke == 0.0:
                    continue
                c_own, c_other = upwind_value_coeffs(float(nu[e]), w_ke, True)
                patch = mesh.edge_patch(e)
                if len(patch) == 2:
                    other = patch[0] if patch[1] == t else patch[1]
                    add(row, -w_ke * c_own)
                    add(system.element_row(other), -w_ke * c_other)
                elif mesh.edge_flag[e] == DIRICHLET:
                    add(row, -w_ke * c_own)
                    rhs_expected += w_ke * c_other * pd_mean[e]
                else:  # Neumann outflow: interior value
                    add(row, -w_ke)
            got = {int(c): v for c, v in
                   zip(A.indices[A.indptr[row]:A.indptr[row + 1]],
                       A.data[A.indptr[row]:A.indptr[row + 1]])}
            assert set(got) == set(expected)
            for col, val in expected.items():
                assert got[col] == pytest.approx(val, rel=1e-13, abs=1e-15)
            assert system.rhs[row] == pytest.approx(rhs_expected, rel=1e-13)


class TestSolutionMapping:
    def test_reconstruction_normal_traces(self):
        """The flux coefficient is the constant normal trace on its edge."""
        mesh = build_initial_mesh("unit-square")
        rng = np.random.default_rng(9)
        sol = assembly.MixedSolution(
            flux=rng.normal(size=mesh.num_edges),
            pressure=rng.normal(size=mesh.num_elements),
            scheme=CENTERED,
        )
        a, b = reconstruct(mesh, sol)
        rule = quad.gauss_edge_rule(2)
        for t in range(mesh.num_elements):
            for i in range(3):
                e = mesh.elem_edges[t, i]
                va = mesh.vert_coords[mesh.edge_verts[e, 0]]
                vb = mesh.vert_coords[mesh.edge_verts[e, 1]]
                pts = rule.physical_points(va, vb)
                u = a[t] + b[t] * pts
                trace = u @ mesh.edge_normal[e]
                mean = rule.integrate(trace, 1.0)
                assert mean == pytest.approx(sol.flux[e], rel=1e-12, abs=1e-13)

    def test_neumann_elimination_roundtrip(self):
        domain, data, _ = benchmark("layer", eps=0.1, a=0.1)
        mesh = data.initial_mesh(domain)
        system = assemble_centered(mesh, data)
        n_neumann = int(np.count_nonzero(mesh.edge_flag == 2))
        assert n_neumann == 2
        assert len(system.fixed_flux) == n_neumann
        sol = solver.solve(system, mesh.num_edges)
        for e, value in system.fixed_flux.items():
            assert sol.flux[e] == value == 0.0
