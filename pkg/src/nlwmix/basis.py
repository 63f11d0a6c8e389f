"""Dirichlet sine eigenbasis on the box (0, pi)^d with modal/nodal transforms.

The eigenfunctions are normalized products of sines,

    e_(j1..jd)(x) = prod_k sqrt(2/pi) * sin(j_k x_k),    j_k >= 1,

with eigenvalues lambda = j1^2 + ... + jd^2 of the (negative) Dirichlet
Laplacian.  Modes are stored sorted by eigenvalue, ties broken by
lexicographic index order so projections onto leading modes are
reproducible.

Nodal collocation uses 2*modes_per_axis + 1 interior points per axis.  On
that grid the discrete sine transform is an exact quadrature for products
of retained eigenfunctions, which keeps the Gram matrix equal to the
identity at machine precision and suppresses aliasing when nonlinear terms
are evaluated pointwise and projected back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeError

__all__ = ["Basis", "build_basis", "to_nodal", "to_modal"]


@dataclass(frozen=True)
class Basis:
    """Immutable eigenbasis data plus transform plans.

    Shareable across threads; all transforms are pure functions of the
    basis and their inputs.
    """

    dim: int
    modes_per_axis: int
    mode_count: int
    eigenvalues: np.ndarray        # (M,) sorted ascending
    mode_indices: np.ndarray       # (M, dim) 1-based per-axis indices
    nodes_per_axis: int
    axis_nodes: np.ndarray         # (P,) interior points of one axis
    axis_weight: float             # quadrature weight per node per axis
    quadrature_weights: np.ndarray  # (P^dim,) flattened grid weights
    # transform plans
    _axis_eval: np.ndarray = field(repr=False)      # (P, M_ax) e-values per axis
    _sorted_to_tensor: np.ndarray = field(repr=False)  # (M,) flat tensor index per sorted mode

    @property
    def grid_size(self) -> int:
        return self.nodes_per_axis ** self.dim

    # -- single-field transforms -------------------------------------------

    def to_nodal(self, coeffs: np.ndarray) -> np.ndarray:
        """Evaluate a modal coefficient vector on the collocation grid."""
        return self.to_nodal_batch(_as_row(coeffs, self.mode_count))[0]

    def to_modal(self, field_values: np.ndarray) -> np.ndarray:
        """Project a nodal field onto the retained modes by quadrature."""
        flat = np.asarray(field_values, dtype=float).reshape(-1)
        if flat.shape[0] != self.grid_size:
            raise ShapeError(
                f"field has {flat.shape[0]} values, grid has {self.grid_size} nodes"
            )
        return self.to_modal_batch(flat[None, :])[0]

    # -- batched transforms (rows are independent fields) ------------------

    def to_nodal_batch(self, coeffs: np.ndarray) -> np.ndarray:
        """(n, M) modal rows -> (n, P^dim) nodal rows."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.ndim != 2 or coeffs.shape[1] != self.mode_count:
            raise ShapeError(
                f"expected (n, {self.mode_count}) coefficients, got {coeffs.shape}"
            )
        n = coeffs.shape[0]
        m, p = self.modes_per_axis, self.nodes_per_axis
        if self.dim == 1:
            return coeffs @ self._axis_eval.T
        tensor = np.zeros((n, m ** self.dim))
        tensor[:, self._sorted_to_tensor] = coeffs
        tensor = tensor.reshape((n,) + (m,) * self.dim)
        s = self._axis_eval
        if self.dim == 2:
            out = np.einsum("ia,jb,nab->nij", s, s, tensor, optimize=True)
        else:
            out = np.einsum("ia,jb,kc,nabc->nijk", s, s, s, tensor, optimize=True)
        return out.reshape(n, p ** self.dim)

    def to_modal_batch(self, fields: np.ndarray) -> np.ndarray:
        """(n, P^dim) nodal rows -> (n, M) modal rows (quadrature projection)."""
        fields = np.asarray(fields, dtype=float)
        if fields.ndim != 2 or fields.shape[1] != self.grid_size:
            raise ShapeError(
                f"expected (n, {self.grid_size}) nodal rows, got {fields.shape}"
            )
        n = fields.shape[0]
        m, p = self.modes_per_axis, self.nodes_per_axis
        sw = self._axis_eval * self.axis_weight  # (P, M_ax)
        if self.dim == 1:
            return fields @ sw
        grid = fields.reshape((n,) + (p,) * self.dim)
        if self.dim == 2:
            tensor = np.einsum("ia,jb,nij->nab", sw, sw, grid, optimize=True)
        else:
            tensor = np.einsum("ia,jb,kc,nijk->nabc", sw, sw, sw, grid, optimize=True)
        return tensor.reshape(n, m ** self.dim)[:, self._sorted_to_tensor]

    def integrate(self, field_values: np.ndarray) -> float:
        """Quadrature of a nodal field over the box."""
        flat = np.asarray(field_values, dtype=float).reshape(-1)
        if flat.shape[0] != self.grid_size:
            raise ShapeError("field not sampled on this basis grid")
        return float(flat @ self.quadrature_weights)

    @property
    def volume(self) -> float:
        return np.pi ** self.dim


def build_basis(dim: int, modes_per_axis: int) -> Basis:
    """Construct the sine eigenbasis on (0, pi)^dim.

    Eigenvalues are sums of squared per-axis indices; the collocation grid
    holds 2*modes_per_axis + 1 uniform interior points per axis.
    """
    if dim not in (1, 2, 3):
        raise ConfigurationError(f"dim must be 1, 2 or 3, got {dim}")
    if modes_per_axis < 1:
        raise ConfigurationError(f"modes_per_axis must be >= 1, got {modes_per_axis}")

    m = modes_per_axis
    p = 2 * m + 1
    h = np.pi / (p + 1)
    nodes = np.arange(1, p + 1) * h
    js = np.arange(1, m + 1)
    axis_eval = np.sqrt(2.0 / np.pi) * np.sin(np.outer(nodes, js))

    # tensor modes in lexicographic order, then sort by (eigenvalue, index)
    grids = np.meshgrid(*([js] * dim), indexing="ij")
    indices = np.stack([g.reshape(-1) for g in grids], axis=1)  # (m^dim, dim) lex order
    lam = (indices.astype(float) ** 2).sum(axis=1)
    order = np.lexsort(tuple(indices[:, k] for k in reversed(range(dim))) + (lam,))

    weights = np.full(p ** dim, h ** dim)
    return Basis(
        dim=dim,
        modes_per_axis=m,
        mode_count=m ** dim,
        eigenvalues=lam[order],
        mode_indices=indices[order],
        nodes_per_axis=p,
        axis_nodes=nodes,
        axis_weight=h,
        quadrature_weights=weights,
        _axis_eval=axis_eval,
        _sorted_to_tensor=order,
    )


def to_nodal(coeffs: np.ndarray, basis: Basis) -> np.ndarray:
    return basis.to_nodal(coeffs)


def to_modal(field_values: np.ndarray, basis: Basis) -> np.ndarray:
    return basis.to_modal(field_values)


def _as_row(coeffs: np.ndarray, mode_count: int) -> np.ndarray:
    arr = np.asarray(coeffs, dtype=float).reshape(-1)
    if arr.shape[0] != mode_count:
        raise ShapeError(f"expected {mode_count} coefficients, got {arr.shape[0]}")
    return arr[None, :]
