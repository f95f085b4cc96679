"""True-error computation in the weighted norm, convergence rates, effectivity."""

from __future__ import annotations

import numpy as np

from . import quadrature as quad
from .mesh import Triangulation
from .postprocess import FluxField
from .problem import ExactSolution


class VerifyError(Exception):
    pass


def energy_error(mesh: Triangulation, fields, flux: FluxField,
                 pressure: np.ndarray, exact: ExactSolution
                 ) -> tuple[float, np.ndarray]:
    """Weighted stress-plus-displacement error against the exact solution.

    E_K^2 = ||S^-1/2 (u - u_h)||_K^2 + c_wr ||p - p_K||_K^2 with both terms
    integrated by the seven-point degree-5 rule (all nodes interior, so
    point singularities at mesh vertices are never evaluated).
    """
    rule = quad.SEVEN_POINT
    pts = rule.physical_points(mesh.elem_coords())
    elems = np.arange(mesh.num_elements)

    u_exact = exact.u(pts[..., 0], pts[..., 1])
    diff = u_exact - flux.u(elems, pts)
    weighted = np.einsum("tab,tqb->tqa", fields.Sinvhalf, diff)
    stress_sq = rule.integrate((weighted**2).sum(axis=-1), mesh.elem_area)

    p_exact = exact.p(pts[..., 0], pts[..., 1])
    disp_sq = rule.integrate((p_exact - pressure[:, None]) ** 2,
                             mesh.elem_area)
    per_elem_sq = stress_sq + fields.c_wr * disp_sq
    per_elem = np.sqrt(per_elem_sq)
    return float(np.sqrt(per_elem_sq.sum())), per_elem


def eoc(dofs, errors) -> np.ndarray:
    """Experimental orders of convergence between consecutive records.

    EOC_k = log(e_{k-1} / e_k) / log(dof_k / dof_{k-1}) aligned with
    iterations 2..k; invalid entries (nonpositive errors, non-increasing
    dofs) are flagged as nan rather than fabricated.
    """
    dofs = np.asarray(dofs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if dofs.size != errors.size:
        raise VerifyError("dof and error histories differ in length")
    if dofs.size < 2:
        raise VerifyError("need at least two records for a rate")
    out = np.full(dofs.size - 1, np.nan)
    for k in range(1, dofs.size):
        if (errors[k - 1] > 0.0 and errors[k] > 0.0
                and dofs[k] > dofs[k - 1]):
            out[k - 1] = np.log(errors[k - 1] / errors[k]) \
                / np.log(dofs[k] / dofs[k - 1])
    return out


def effectivity(etas, errors) -> np.ndarray:
    """Per-iteration ratio estimator / true error; nan where E vanishes."""
    etas = np.asarray(etas, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if etas.size != errors.size:
        raise VerifyError("histories differ in length")
    out = np.full(etas.size, np.nan)
    good = errors > 0.0
    out[good] = etas[good] / errors[good]
    return out
