"""Sampling grids of the reduced reciprocal cell and fiber eigenproblems.

For a quasi-momentum q the fiber Hamiltonian in the plane-wave basis is

    H(q)[G, G'] = |G + q|^2 / 2 * delta_{GG'} + V_{G - G'},

a dense Hermitian matrix whose lowest eigenpairs carry the occupied
states.  A k-grid of order L samples the reduced cell at the L^3 points
with fractional coordinates m/L, m in L consecutive integers centered so
the fractions fall in [-1/2, 1/2).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import MetallicError, NumericalError
from .lattice import ReciprocalLattice
from .pwbasis import PeriodicFunction, PlaneWaveBasis

_RESIDUAL_TOL = 1e-8
_GRAM_TOL = 1e-10

DEFAULT_GAP_TOLERANCE = 1e-6  # Hartree


class KGrid:
    """Uniform L^3 sampling of the reduced reciprocal cell.

    Attributes:
        L: grid order.
        midx: (L^3, 3) integer grid coordinates, lexicographically ordered.
        points: (L^3, 3) Cartesian sampling points (Bohr^-1).
    """

    def __init__(self, rlat: ReciprocalLattice, L: int, midx: np.ndarray):
        self.rlat = rlat
        self.L = L
        self.midx = midx
        self.midx.setflags(write=False)
        self.points = (midx / float(L)) @ rlat.matrix.T
        self.points.setflags(write=False)

    def __len__(self):
        return len(self.points)

    def __repr__(self):
        return f"KGrid(L={self.L})"


def kgrid(rlat: ReciprocalLattice, L: int) -> KGrid:
    """Build the order-L sampling grid of the reduced cell.

    Integer coordinates run over {-L/2, ..., L/2 - 1} for even L and
    {-(L-1)/2, ..., (L-1)/2} for odd L, so every fractional coordinate
    m/L lies in [-1/2, 1/2) and there are exactly L^3 distinct points.
    """
    if not isinstance(L, (int, np.integer)) or L < 1:
        raise ValueError(f"grid order must be a positive integer, got {L!r}")
    rng = np.arange(L, dtype=int) - (L // 2)
    m1, m2, m3 = np.meshgrid(rng, rng, rng, indexing="ij")
    midx = np.column_stack([m1.ravel(), m2.ravel(), m3.ravel()])
    return KGrid(rlat, int(L), midx)


@dataclass
class FiberSolution:
    """Lowest eigenpairs of one fiber Hamiltonian.

    ``eigenvectors`` holds orthonormal coefficient columns on the
    plane-wave basis; ``eigenvalues`` are ascending (Hartree).
    """

    q: np.ndarray | None
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None
    basis: PlaneWaveBasis | None = field(default=None, repr=False)


def _diff_gather(basis: PlaneWaveBasis):
    """Gather indices mapping coefficient boxes to |X| x |X| matrices.

    Cached on the basis: the (i, j) matrix entry reads the box at integer
    coordinates midx_i - midx_j.
    """
    if basis._diff_cache is None:
        m = basis.midx
        d1 = m[:, 0:1] - m[:, 0:1].T
        d2 = m[:, 1:2] - m[:, 1:2].T
        d3 = m[:, 2:3] - m[:, 2:3].T
        dmin = (d1.min(), d2.min(), d3.min())
        shape = (d1.max() - dmin[0] + 1,
                 d2.max() - dmin[1] + 1,
                 d3.max() - dmin[2] + 1)
        flat = ((d1 - dmin[0]) * (shape[1] * shape[2])
                + (d2 - dmin[1]) * shape[2]
                + (d3 - dmin[2]))
        basis._diff_cache = (dmin, shape, flat)
    return basis._diff_cache


def potential_matrix(V: PeriodicFunction, basis: PlaneWaveBasis) -> np.ndarray:
    """Matrix of multiplication by V in the plane-wave basis.

    Entry (G, G') is the Fourier coefficient V_{G-G'}.  The result is
    Hermitized so downstream eigensolves see an exactly Hermitian matrix
    even when V's stored coefficients satisfy conjugate symmetry only to
    rounding.
    """
    if not V.real_valued:
        raise ValueError("potential must be flagged real-valued")
    dmin, shape, flat = _diff_gather(basis)
    box = np.zeros(shape, dtype=complex)
    for (m1, m2, m3), val in V.coeffs.items():
        i1 = m1 - dmin[0]
        i2 = m2 - dmin[1]
        i3 = m3 - dmin[2]
        if 0 <= i1 < shape[0] and 0 <= i2 < shape[1] and 0 <= i3 < shape[2]:
            box[i1, i2, i3] = val
    vmat = box.ravel()[flat]
    return 0.5 * (vmat + vmat.conj().T)


def assemble(q, V: PeriodicFunction, basis: PlaneWaveBasis,
             vmat: np.ndarray | None = None) -> np.ndarray:
    """Dense fiber Hamiltonian |G+q|^2/2 * delta + V_{G-G'} at quasi-momentum q.

    ``vmat`` may carry a precomputed potential matrix for the same (V,
    basis) pair; grid drivers use this to amortize the gather across
    fibers.
    """
    q = np.asarray(q, dtype=float)
    out = (potential_matrix(V, basis) if vmat is None else vmat).copy()
    kin = basis.kinetic + basis.gvecs @ q + 0.5 * float(q @ q)
    out[np.diag_indices_from(out)] += kin
    return out


def eigensolve_lowest(H: np.ndarray, n: int, q=None,
                      basis: PlaneWaveBasis | None = None) -> FiberSolution:
    """Lowest n eigenpairs of a Hermitian matrix, plus one buffer band.

    Returns n+1 pairs whenever the dimension allows, so a gap above band
    n can be measured.  Residual and orthonormality checks guard against
    silent eigensolver failure.

    Raises:
        NumericalError: if LAPACK fails or the checks do not pass.
    """
    dim = H.shape[0]
    if not 1 <= n <= dim:
        raise ValueError(f"need 1 <= n <= dim, got n={n}, dim={dim}")
    nband = min(n + 1, dim)
    try:
        w, v = scipy.linalg.eigh(H, subset_by_index=(0, nband - 1),
                                 check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"fiber eigensolve failed: {exc}") from exc
    resid = H @ v - v * w
    rnorm = np.linalg.norm(resid, axis=0)
    allowed = _RESIDUAL_TOL * (1.0 + np.abs(w))
    if np.any(rnorm > allowed):
        worst = int(np.argmax(rnorm - allowed))
        raise NumericalError(
            f"eigenpair residual {rnorm[worst]:.3e} exceeds tolerance "
            f"{allowed[worst]:.3e} (band {worst}, dim {dim})")
    gram = v.conj().T @ v
    gerr = np.max(np.abs(gram - np.eye(nband)))
    if gerr > _GRAM_TOL:
        raise NumericalError(f"eigenvector Gram deviates from identity by {gerr:.3e}")
    qarr = None if q is None else np.asarray(q, dtype=float)
    return FiberSolution(qarr, w, v, basis)


def solve_grid(basis: PlaneWaveBasis, V: PeriodicFunction, grid: KGrid,
               nocc: int, threads: int = 1) -> list[FiberSolution]:
    """Solve every fiber of the grid for nocc+1 bands.

    Fibers are independent and may be solved concurrently; results are
    returned in grid order regardless of thread count.
    """
    vmat = potential_matrix(V, basis)

    def one(i: int) -> FiberSolution:
        q = grid.points[i]
        return eigensolve_lowest(assemble(q, V, basis, vmat=vmat), nocc,
                                 q=q, basis=basis)

    indices = range(len(grid))
    if threads <= 1:
        return [one(i) for i in indices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, indices))


def fermi_and_gap(solutions, nocc: int,
                  gap_tolerance: float = DEFAULT_GAP_TOLERANCE):
    """Mid-gap Fermi level and spectral gap of a filled grid.

    The highest occupied level is the grid maximum of band nocc, the
    lowest unoccupied the grid minimum of band nocc+1.  A gap above
    ``gap_tolerance`` also certifies that global lowest-first occupation
    coincides with filling nocc bands at every grid point.

    Raises:
        MetallicError: if the gap is at or below tolerance.
    """
    if not solutions:
        raise ValueError("no fiber solutions given")
    for sol in solutions:
        if len(sol.eigenvalues) < nocc + 1:
            raise ValueError("each fiber needs at least nocc+1 eigenvalues")
    homo = max(float(sol.eigenvalues[nocc - 1]) for sol in solutions)
    lumo = min(float(sol.eigenvalues[nocc]) for sol in solutions)
    gap = lumo - homo
    if gap <= gap_tolerance:
        raise MetallicError(
            f"spectral gap {gap:.3e} Ha at or below tolerance "
            f"{gap_tolerance:.3e}; occupied bands are not separated")
    return 0.5 * (homo + lumo), gap
