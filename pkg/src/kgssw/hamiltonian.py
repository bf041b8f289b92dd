"""Discretized Feshbach-Villars Hamiltonian of the quasi-1D Klein-Gordon problem.

States are stored interleaved: entry ``2*i`` is the upper and ``2*i + 1`` the
lower two-spinor component at grid point ``x_i``.  With that layout the
metric is ``eta = diag(1, -1, 1, -1, ...)``, i.e. sigma_3 on every site.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .core import Grid, PhysicalConstants
from .fields import FieldConfig, sample_scalar, sample_vector_y

SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)
# (sigma_3 + i sigma_2) is real
KINETIC_SPINOR = np.array([[1.0, 1.0], [-1.0, -1.0]])

SCHEMES = ("spectral", "fd3")


def metric_diagonal(N: int) -> np.ndarray:
    return np.tile([1.0, -1.0], N)


def laplacian_operator(grid: Grid, consts: PhysicalConstants, scheme: str = "spectral") -> np.ndarray:
    """Real symmetric matrix of ``-hbar^2 d^2/dx^2`` on the periodic grid."""
    if scheme == "spectral":
        column = np.fft.ifft(grid.fft_momenta**2).real
        return sla.circulant(column)
    if scheme == "fd3":
        column = np.zeros(grid.N)
        column[0] = 2.0
        column[1] = column[-1] = -1.0
        return sla.circulant(column) * consts.hbar**2 / grid.dx**2
    raise ValueError(f"unknown derivative scheme {scheme!r}; expected one of {SCHEMES}")


@dataclass(frozen=True, eq=False)
class FVHamiltonian:
    matrix: np.ndarray
    grid: Grid
    fields: FieldConfig
    consts: PhysicalConstants
    scheme: str = "spectral"
    potential: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def eta(self) -> np.ndarray:
        """Diagonal of the metric."""
        return metric_diagonal(self.grid.N)

    @property
    def metric(self) -> np.ndarray:
        return np.diag(self.eta).astype(complex)


def assemble(grid: Grid, fields: FieldConfig, consts: PhysicalConstants | None = None,
             scheme: str = "spectral") -> FVHamiltonian:
    """Assemble the ``2N x 2N`` FV Hamiltonian.

    The kinetic operator is
    ``-hbar^2 d^2/dx^2 + p_y^2 + p_z^2 - 2 q p_y A_y(x) + q^2 A_y(x)^2``
    coupled through ``(sigma_3 + i sigma_2)/(2m)``, plus ``q*phi(x)`` on the
    diagonal and ``sigma_3 m c^2``.
    """
    consts = consts or PhysicalConstants()
    K = laplacian_operator(grid, consts, scheme)
    V = sample_scalar(fields.scalar, grid)
    A = sample_vector_y(fields.vector, grid)
    py, pz, q = fields.momenta.p_y, fields.momenta.p_z, consts.q
    transverse = py**2 + pz**2 - 2 * q * py * A + (q * A) ** 2
    K[np.diag_indices_from(K)] += transverse
    H = np.kron(K / (2 * consts.m), KINETIC_SPINOR).astype(complex)
    diag = np.repeat(V, 2) + consts.rest_energy * metric_diagonal(grid.N)
    H[np.diag_indices_from(H)] += diag
    return FVHamiltonian(H, grid, fields, consts, scheme, potential=V)


def pseudo_hermiticity_residual(H: FVHamiltonian) -> float:
    """``||eta H^dagger eta - H||_F / ||H||_F``."""
    eta = H.eta
    M = H.matrix
    return float(np.linalg.norm(eta[:, None] * M.conj().T * eta[None, :] - M) / np.linalg.norm(M))


def spinor_view(state) -> np.ndarray:
    """Reshape ``(2N, ...)`` to ``(N, 2, ...)``."""
    state = np.asarray(state)
    return state.reshape((state.shape[0] // 2, 2) + state.shape[1:])


def pseudo_inner(a, b, grid: Grid) -> complex:
    """``<a|b>_eta = sum_i a^dagger(x_i) sigma_3 b(x_i) dx``.

    ``a`` and ``b`` may also be ``(2N, k)`` blocks, giving the ``k x k``
    overlap matrix.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[0] != 2 * grid.N or b.shape[0] != 2 * grid.N:
        raise ValueError(
            f"state length {a.shape[0]}/{b.shape[0]} does not match grid of {grid.N} points")
    eta = metric_diagonal(grid.N)
    eta_b = eta * b if b.ndim == 1 else eta[:, None] * b
    out = (a.conj().T @ eta_b) * grid.dx
    return complex(out) if np.ndim(out) == 0 else out


# Binary dump: little-endian int64 rows, int64 cols, then row-major
# (real, imag) float64 pairs.
_HEADER = struct.Struct("<qq")


def dump_matrix(H, path) -> None:
    M = np.ascontiguousarray(H.matrix if isinstance(H, FVHamiltonian) else H, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*M.shape))
        fh.write(M.tobytes(order="C"))


def load_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    rows, cols = _HEADER.unpack_from(raw)
    data = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    if data.size != rows * cols:
        raise ValueError(f"{path}: truncated matrix dump")
    return data.reshape(rows, cols).copy()
