"""Elementwise a posteriori error estimators and the total indicator.

Every estimator is computable from the mixed solution alone: volume terms
are weighted norms of S^-1 u_h, face terms are tangential jumps of the
weighted flux, and the upwind estimator adds face-value differences of
the pressure constants.  Integrands are piecewise polynomial, so the
production quadrature is exact except for the source term, which uses the
degree-5 rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quadrature as quad
from .assembly import (MixedSolution, UPWIND, _edge_fluxes, _left_values,
                       dirichlet_edge_means)
from .mesh import DIRICHLET, INTERIOR, Triangulation
from .postprocess import FluxField, tangential_jump_sq
from .problem import ProblemData, patch_quantities


class EstimatorError(Exception):
    pass


POLICIES = ("theorem", "xi")


@dataclass
class ResidualWeights:
    """Residual scaling factors alpha_K and beta_K."""

    alpha: np.ndarray
    beta: np.ndarray


@dataclass
class EstimatorBreakdown:
    """Per-element estimator values and the marking indicator."""

    eta_D: np.ndarray
    eta_R: np.ndarray
    eta_NC: np.ndarray
    eta_C: np.ndarray
    eta_U: np.ndarray
    xi: np.ndarray
    total: np.ndarray
    policy: str

    def family_totals(self) -> dict:
        return {
            name: float(np.sqrt((getattr(self, name) ** 2).sum()))
            for name in ("eta_D", "eta_R", "eta_NC", "eta_C", "eta_U",
                         "xi", "total")
        }

    def to_csv(self) -> str:
        lines = ["element_id,eta_D,eta_R,eta_NC,eta_C,eta_U,xi,total"]
        for t in range(self.total.size):
            row = (self.eta_D[t], self.eta_R[t], self.eta_NC[t],
                   self.eta_C[t], self.eta_U[t], self.xi[t], self.total[t])
            lines.append(str(t) + "," + ",".join(f"{v:.17g}" for v in row))
        return "\n".join(lines) + "\n"


def residual_weights(mesh: Triangulation, fields) -> ResidualWeights:
    """alpha_K = min(h_K / sqrt(c_S), 1 / sqrt(c_wr)), beta_K = C_wr h alpha.

    With a vanishing combined reaction alpha_K falls back to the diffusive
    scaling h_K / sqrt(c_S).
    """
    diffusive = mesh.elem_diam / np.sqrt(fields.c_S)
    with np.errstate(divide="ignore"):
        reactive = np.where(fields.c_wr > 0.0,
                            1.0 / np.sqrt(np.maximum(fields.c_wr, 1e-300)),
                            np.inf)
    alpha = np.minimum(diffusive, reactive)
    beta = fields.C_wr * mesh.elem_diam * alpha
    return ResidualWeights(alpha=alpha, beta=beta)


def detect_singular_vertices(mesh: Triangulation, C_S: np.ndarray,
                             rel_tol: float = 1e-9) -> set:
    """Vertices where the maximal-coefficient elements do not form one fan.

    A vertex is singular when the elements of its star attaining the
    largest diffusion bound (within ``rel_tol`` relatively) split into
    more than one edge-connected group around the vertex.
    """
    singular = set()
    stars = mesh._vertex_incidence()
    for v in range(mesh.num_vertices):
        star = stars[v]
        if not star:
            continue
        values = C_S[star]
        top = values.max()
        if values.min() >= top * (1.0 - rel_tol):
            continue  # single coefficient class around v
        ordered, is_boundary = mesh.vertex_star(v)
        flags = [C_S[t] >= top * (1.0 - rel_tol) for t in ordered]
        blocks = 0
        n = len(flags)
        for i in range(n):
            prev = flags[i - 1] if (i > 0 or not is_boundary) else False
            if flags[i] and not prev:
                blocks += 1
        if blocks >= 2:
            singular.add(v)
    return singular


class EstimatorContext:
    """All estimator ingredients for one solved mesh.

    ``subtract_boundary_data`` switches the boundary face terms from the
    plain one-sided trace to the trace minus the tangential derivative of
    the Dirichlet datum (computable from the boundary data alone); it only
    affects Dirichlet boundary edges.
    """

    def __init__(self, mesh: Triangulation, problem: ProblemData,
                 solution: MixedSolution,
                 subtract_boundary_data: bool = False):
        self.mesh = mesh
        self.problem = problem
        self.solution = solution
        self.fields = problem.fields(mesh)
        self.flux = FluxField(mesh, self.fields, solution)
        self.patch = patch_quantities(mesh, self.fields)
        self.weights = residual_weights(mesh, self.fields)
        self.pd_mean = dirichlet_edge_means(mesh, problem)

        slope_inv = slope_half = None
        if subtract_boundary_data:
            slope_inv = _data_slope(mesh, problem, self.fields, "inv")
            slope_half = _data_slope(mesh, problem, self.fields, "invsqrt")
        self.jump_inv = tangential_jump_sq(mesh, self.flux, "inv",
                                           boundary_slope=slope_inv)
        self.jump_half = tangential_jump_sq(mesh, self.flux, "invsqrt",
                                            boundary_slope=slope_half)

        self.norm_sq = self._weighted_norm_sq()
        self._singular_elems = None

    # -- volume ingredients ------------------------------------------------

    def _weighted_norm_sq(self) -> np.ndarray:
        """int_K |S^-1 u_h|^2 per element (quadratic integrand)."""
        rule = quad.MIDPOINT
        pts = rule.physical_points(self.mesh.elem_coords())
        vals = self.flux.weighted(np.arange(self.mesh.num_elements), pts)
        return rule.integrate((vals**2).sum(axis=-1), self.mesh.elem_area)

    def _residual_norm_sq(self) -> np.ndarray:
        """int_K R^2 with the pure-diffusion reduction where it applies.

        Elements with no convection and no reaction satisfy the discrete
        identity div u_h = mean(f), so the residual reduces to f - f_K
        there and vanishes identically for f = 0.
        """
        mesh, fields = self.mesh, self.fields
        rule = quad.SEVEN_POINT
        pts = rule.physical_points(mesh.elem_coords())
        fvals = self.problem.f(pts[..., 0], pts[..., 1])
        if fvals.shape != pts.shape[:-1]:
            fvals = np.broadcast_to(fvals, pts.shape[:-1])

        pure = (fields.C_w == 0.0) & (fields.r == 0.0) & (fields.divw == 0.0)
        fmean = fvals @ rule.weights
        reduced = fvals - fmean[:, None]

        sinv_u = self.flux.weighted(np.arange(mesh.num_elements), pts)
        div_u = 2.0 * self.flux.b
        general = (
            fvals
            - div_u[:, None]
            + np.einsum("tqd,td->tq", sinv_u, fields.w)
            - ((fields.r + fields.divw) * self.solution.pressure)[:, None]
        )
        resid = np.where(pure[:, None], reduced, general)
        return rule.integrate(resid**2, mesh.elem_area)

    # -- per-element estimator families -------------------------------------

    def eta_D_all(self) -> np.ndarray:
        return np.sqrt(self.fields.c_wr) * self.mesh.elem_diam \
            * np.sqrt(self.norm_sq)

    def eta_R_all(self) -> np.ndarray:
        w = self.weights
        return np.sqrt(w.alpha**2 * self._residual_norm_sq()
                       + w.beta**2 * self.norm_sq)

    def _jump_sum(self, jumps: np.ndarray, edge_factor: np.ndarray,
                  delta: bool = True) -> np.ndarray:
        """Sum over element edges of factor * h_sigma * jump integral."""
        mesh = self.mesh
        E = mesh.elem_edges
        contrib = edge_factor[E] * mesh.edge_length[E] * jumps[E]
        if delta:
            deltas = np.where(mesh.edge_flag[E] == INTERIOR, 0.5, 1.0)
            contrib = contrib * deltas
        return contrib.sum(axis=1)

    def eta_NC_all(self) -> np.ndarray:
        volume = self.patch.lam_wr * self.mesh.elem_diam**2 * self.norm_sq
        face = self._jump_sum(self.jump_inv, self.patch.lam_sigma)
        return np.sqrt(volume + face)

    def eta_C_all(self) -> np.ndarray:
        volume = self.patch.lam_divw**2 * self.mesh.elem_diam**2 * self.norm_sq
        face = self._jump_sum(self.jump_inv, self.patch.lam_w_sigma**2)
        return np.sqrt(volume + face)

    def hat_hat_p(self, e: int) -> float:
        """Face-value defect of the upwind pressure on one edge.

        Interior edges: (1/2 - nu)(upstream - downstream).  Boundary
        edges: upwind face value minus the element constant, which for a
        homogeneous Dirichlet datum reduces to -nu p_K (outflow) or
        -(1 - nu) p_K (inflow).
        """
        if self.solution.scheme != UPWIND or self.solution.nu is None:
            raise EstimatorError("upwind face values need an upwind solution")
        return float(self._hat_hat_all()[e])

    def _hat_hat_all(self) -> np.ndarray:
        mesh = self.mesh
        nu = self.solution.nu
        p = self.solution.pressure
        wflux_left = _left_values(mesh, _edge_fluxes(mesh, self.fields))
        left = mesh.edge_elems[:, 0]
        right = mesh.edge_elems[:, 1]
        out = np.zeros(mesh.num_edges)

        interior = right >= 0
        up = np.where(wflux_left >= 0.0, left, np.where(interior, right, left))
        down = np.where(wflux_left >= 0.0, np.where(interior, right, left), left)
        out[interior] = (0.5 - nu[interior]) \
            * (p[up[interior]] - p[down[interior]])

        dirich = (~interior) & (mesh.edge_flag == DIRICHLET)
        if np.any(dirich):
            c_own = np.where(wflux_left >= 0.0, 1.0 - nu, nu)
            c_dat = np.where(wflux_left >= 0.0, nu, 1.0 - nu)
            p_hat = c_own * p[left] + c_dat * self.pd_mean
            out[dirich] = p_hat[dirich] - p[left[dirich]]
        # Neumann edges use the interior value, so the defect vanishes
        return out

    def eta_U_all(self) -> np.ndarray:
        if self.solution.scheme != UPWIND:
            raise EstimatorError(
                "the upwind estimator is undefined for a centered solution"
            )
        mesh = self.mesh
        hathat = self._hat_hat_all()
        wflux = _edge_fluxes(mesh, self.fields)          # (NT, 3)
        E = mesh.elem_edges
        lengths = mesh.edge_length[E]
        wn = wflux / lengths                             # (w . n)|_sigma
        patch_norm = self.norm_sq[mesh.edge_elems[:, 0]]
        interior = mesh.edge_elems[:, 1] >= 0
        patch_norm = patch_norm + np.where(
            interior, self.norm_sq[mesh.edge_elems[:, 1].clip(min=0)], 0.0
        )
        face = wn**2 * (hathat[E] ** 2 * lengths + lengths * patch_norm[E])
        return np.sqrt(self.mesh.elem_diam / self.fields.c_S
                       * face.sum(axis=1))

    def singular_elements(self) -> np.ndarray:
        if self._singular_elems is None:
            singular = detect_singular_vertices(self.mesh, self.fields.C_S)
            mask = np.zeros(self.mesh.num_elements, dtype=bool)
            if singular:
                for i in range(3):
                    mask |= np.isin(self.mesh.elem_verts[:, i],
                                    list(singular))
            self._singular_elems = mask
        return self._singular_elems

    def xi_all(self) -> np.ndarray:
        """Alternative face indicator switching on singular nodes."""
        plain = self._jump_sum(self.jump_half, np.ones(self.mesh.num_edges),
                               delta=False)
        weighted = self._jump_sum(
            self.jump_inv,
            np.ones(self.mesh.num_edges), delta=False,
        )
        weighted = weighted * self.patch.C_S_patch
        return np.sqrt(np.where(self.singular_elements(), weighted, plain))

    # -- single-element conveniences (used heavily by the tests) ------------

    def eta_D(self, t: int) -> float:
        return float(self.eta_D_all()[t])

    def eta_R(self, t: int) -> float:
        return float(self.eta_R_all()[t])

    def eta_NC(self, t: int) -> float:
        return float(self.eta_NC_all()[t])

    def eta_C(self, t: int) -> float:
        return float(self.eta_C_all()[t])

    def eta_U(self, t: int) -> float:
        return float(self.eta_U_all()[t])

    def xi_K(self, t: int) -> float:
        return float(self.xi_all()[t])

    def total_indicator(self, t: int, policy: str = "theorem") -> float:
        return float(self.compute(policy).total[t])

    def compute(self, policy: str = "theorem") -> EstimatorBreakdown:
        """Assemble the full per-element breakdown under a marking policy."""
        if policy not in POLICIES:
            raise EstimatorError(f"unknown indicator policy {policy!r}")
        nt = self.mesh.num_elements
        eta_D = self.eta_D_all()
        eta_R = self.eta_R_all()
        eta_NC = self.eta_NC_all()
        eta_C = self.eta_C_all()
        eta_U = (self.eta_U_all() if self.solution.scheme == UPWIND
                 else np.zeros(nt))
        xi = self.xi_all()
        if policy == "theorem":
            total_sq = eta_D**2 + eta_R**2 + eta_NC**2 + eta_C**2
            if self.solution.scheme == UPWIND:
                total_sq = total_sq + eta_U**2
            total = np.sqrt(total_sq)
        else:
            total = xi.copy()
        return EstimatorBreakdown(eta_D=eta_D, eta_R=eta_R, eta_NC=eta_NC,
                                  eta_C=eta_C, eta_U=eta_U, xi=xi,
                                  total=total, policy=policy)


def _data_slope(mesh: Triangulation, problem: ProblemData, fields,
                weighting: str):
    """Expected boundary tangential trace of the weighted flux, from data.

    gamma_t(S^-1 u) = -dp/dt on the boundary; the S^-1/2 variant scales by
    sqrt(c_S) and requires a scalar diffusion tensor.  The tangential
    derivative of the Dirichlet datum is taken by central differences
    along the edge line; Neumann edges carry no datum and get no
    correction.
    """
    if weighting == "invsqrt" and np.any(
        fields.C_S - fields.c_S > 1e-12 * fields.C_S
    ):
        raise EstimatorError(
            "boundary data subtraction for the square-root weighting "
            "needs a scalar diffusion tensor"
        )
    left = mesh.edge_elems[:, 0]
    factor = np.ones(mesh.num_edges) if weighting == "inv" \
        else np.sqrt(fields.c_S[left])
    dirichlet = mesh.edge_flag == DIRICHLET

    def slope(edge_ids, pts):
        out = np.zeros(pts.shape[:-1])
        for row, e in enumerate(edge_ids):
            if not dirichlet[e]:
                continue
            tvec = mesh.edge_tangent[e]
            delta = 6e-6 * mesh.edge_length[e]
            plus = pts[row] + delta * tvec
            minus = pts[row] - delta * tvec
            dpdt = (problem.dirichlet_data(plus[:, 0], plus[:, 1])
                    - problem.dirichlet_data(minus[:, 0], minus[:, 1])) \
                / (2.0 * delta)
            out[row] = -factor[e] * dpdt
        return out

    return slope
