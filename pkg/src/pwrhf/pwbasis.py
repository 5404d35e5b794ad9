"""Plane-wave basis under an energy cutoff and sparse Fourier-space fields.

A ``PlaneWaveBasis`` is the finite set of reciprocal-lattice vectors G
with kinetic energy |G|^2/2 strictly below the cutoff.  A
``PeriodicFunction`` is a lattice-periodic scalar field stored as a map
from integer reciprocal coordinates (m1, m2, m3) to complex Fourier
coefficients, i.e. f(x) = sum_k c_k exp(i k.x) with k = m1 b1 + m2 b2 + m3 b3.
"""

import numpy as np
import scipy.fft

from .errors import ResourceError
from .lattice import TWO_PI, ReciprocalLattice

# Conjugate-symmetry slack used when validating the real-valued flag.
_REAL_TOL = 1e-12


class PlaneWaveBasis:
    """Finite plane-wave basis {e_G : |G|^2/2 < ecutoff}.

    Attributes:
        rlat: the underlying reciprocal lattice.
        ecutoff: kinetic-energy cutoff (Hartree).
        gvecs: (N, 3) Cartesian reciprocal vectors (Bohr^-1), in
            lexicographic order of their integer coordinates.
        midx: (N, 3) integer coordinates of the basis vectors.
        index: map from integer coordinate triple to row in ``gvecs``.
    """

    def __init__(self, rlat: ReciprocalLattice, ecutoff: float,
                 gvecs: np.ndarray, midx: np.ndarray):
        self.rlat = rlat
        self.ecutoff = float(ecutoff)
        self.gvecs = gvecs
        self.midx = midx
        self.gvecs.setflags(write=False)
        self.midx.setflags(write=False)
        self.index = {tuple(m): i for i, m in enumerate(midx.tolist())}
        self.kinetic = 0.5 * np.einsum("ij,ij->i", gvecs, gvecs)
        self.kinetic.setflags(write=False)
        # Lazily built gather indices for potential matrices; see bloch.
        self._diff_cache = None

    @property
    def size(self) -> int:
        return len(self.gvecs)

    def __len__(self):
        return len(self.gvecs)

    def __repr__(self):
        return f"PlaneWaveBasis(size={self.size}, ecutoff={self.ecutoff})"


def build_basis(rlat: ReciprocalLattice, ecutoff: float,
                max_size: int = 2_000_000) -> PlaneWaveBasis:
    """Enumerate every reciprocal-lattice vector with |G|^2/2 < ecutoff.

    The scan covers integer coordinates |m_i| <= ceil(sqrt(2*ecutoff)/sigma_min)
    where sigma_min is the smallest singular value of the reciprocal basis
    matrix; since |m1 b1 + m2 b2 + m3 b3| >= sigma_min*|m|_2 this is
    exhaustive.  The cutoff comparison is strict, so boundary ties are
    excluded.

    Args:
        rlat: reciprocal lattice.
        ecutoff: cutoff in Hartree, must be positive.
        max_size: hard cap on the basis size.

    Raises:
        ResourceError: if the basis would exceed ``max_size``.
    """
    if ecutoff <= 0.0:
        raise ValueError(f"ecutoff must be positive, got {ecutoff}")
    bmat = rlat.matrix
    sigma_min = np.linalg.svd(bmat, compute_uv=False)[-1]
    radius = np.sqrt(2.0 * ecutoff)
    # Cheap volume estimate before committing to the scan.
    est = (4.0 / 3.0) * np.pi * radius**3 / rlat.cell_volume
    if est > 4.0 * max_size + 64:
        raise ResourceError(
            f"estimated basis size {est:.3g} exceeds cap {max_size}"
        )
    mmax = int(np.ceil(radius / sigma_min))
    rng = np.arange(-mmax, mmax + 1)
    m2, m3 = np.meshgrid(rng, rng, indexing="ij")
    m2 = m2.ravel()
    m3 = m3.ravel()
    rows_midx = []
    for m1 in rng:  # slab-wise to bound scan memory on skewed lattices
        slab = np.column_stack([np.full_like(m2, m1), m2, m3])
        g = slab @ bmat.T
        keep = 0.5 * np.einsum("ij,ij->i", g, g) < ecutoff
        if np.any(keep):
            rows_midx.append(slab[keep])
    midx = (np.concatenate(rows_midx) if rows_midx
            else np.zeros((0, 3), dtype=int))
    if len(midx) > max_size:
        raise ResourceError(f"basis size {len(midx)} exceeds cap {max_size}")
    gvecs = midx @ bmat.T
    return PlaneWaveBasis(rlat, ecutoff, gvecs, midx)


class PeriodicFunction:
    """Lattice-periodic scalar field as finitely many Fourier coefficients.

    Coefficients are keyed by integer reciprocal coordinates.  When
    ``real_valued`` is set, conjugate symmetry c_{-k} = conj(c_k) is
    required (and validated on construction).
    """

    def __init__(self, rlat: ReciprocalLattice, coeffs=None,
                 real_valued: bool = False):
        self.rlat = rlat
        self.coeffs = {}
        if coeffs:
            for key, val in coeffs.items():
                self.coeffs[(int(key[0]), int(key[1]), int(key[2]))] = complex(val)
        self.real_valued = bool(real_valued)
        if self.real_valued:
            self._check_conjugate_symmetry()

    def _check_conjugate_symmetry(self):
        for key, val in self.coeffs.items():
            mirror = self.coeffs.get((-key[0], -key[1], -key[2]), 0.0)
            if abs(mirror - np.conj(val)) > _REAL_TOL * (1.0 + abs(val)):
                raise ValueError(
                    f"real-valued flag set but c_{key} breaks conjugate symmetry"
                )

    # -- basic queries -------------------------------------------------

    @property
    def c0(self) -> complex:
        """Mean value of the field (the k = 0 Fourier coefficient)."""
        return self.coeffs.get((0, 0, 0), 0.0 + 0.0j)

    def get(self, key) -> complex:
        return self.coeffs.get(tuple(key), 0.0 + 0.0j)

    @property
    def cell_volume(self) -> float:
        """Real-space unit cell volume (Bohr^3)."""
        return TWO_PI**3 / self.rlat.cell_volume

    def integral(self) -> complex:
        """Integral of the field over one unit cell."""
        return self.c0 * self.cell_volume

    def max_index(self):
        """Per-axis maximum |m_i| over the support (0 for the zero field)."""
        if not self.coeffs:
            return (0, 0, 0)
        arr = np.array(list(self.coeffs.keys()), dtype=int)
        return tuple(int(v) for v in np.abs(arr).max(axis=0))

    # -- arithmetic ----------------------------------------------------

    def _same_rlat(self, other):
        if self.rlat is other.rlat:
            return True
        return np.allclose(self.rlat.matrix, other.rlat.matrix,
                           rtol=1e-12, atol=0.0)

    def __add__(self, other):
        if not isinstance(other, PeriodicFunction):
            return NotImplemented
        if not self._same_rlat(other):
            raise ValueError("cannot combine fields on different lattices")
        out = dict(self.coeffs)
        for key, val in other.coeffs.items():
            out[key] = out.get(key, 0.0) + val
        return PeriodicFunction(self.rlat, out,
                                real_valued=self.real_valued and other.real_valued)

    def __sub__(self, other):
        return self.__add__(-other)

    def __neg__(self):
        return PeriodicFunction(
            self.rlat, {k: -v for k, v in self.coeffs.items()},
            real_valued=self.real_valued)

    def __mul__(self, scalar):
        s = complex(scalar)
        real = self.real_valued and s.imag == 0.0
        return PeriodicFunction(
            self.rlat, {k: v * s for k, v in self.coeffs.items()},
            real_valued=real)

    __rmul__ = __mul__

    def neutralized(self):
        """Copy with the mean removed (k = 0 coefficient dropped)."""
        out = {k: v for k, v in self.coeffs.items() if k != (0, 0, 0)}
        return PeriodicFunction(self.rlat, out, real_valued=self.real_valued)

    # -- dense box conversion -------------------------------------------

    def to_box(self, shape):
        """Scatter coefficients into a dense (n1, n2, n3) box, modulo n_i.

        Aliased accumulation keeps grid evaluation exact for any shape.
        """
        box = np.zeros(shape, dtype=complex)
        for (m1, m2, m3), val in self.coeffs.items():
            box[m1 % shape[0], m2 % shape[1], m3 % shape[2]] += val
        return box

    def __repr__(self):
        return (f"PeriodicFunction(support={len(self.coeffs)}, "
                f"real_valued={self.real_valued})")


def coefficients_from_box(box, rlat: ReciprocalLattice, bound,
                          real_valued: bool = False) -> PeriodicFunction:
    """Collect box entries with |m_i| <= bound_i into a PeriodicFunction.

    The box is indexed modulo its shape; each shape must be at least
    2*bound_i + 1 so the extraction is alias-free.
    """
    n1, n2, n3 = box.shape
    b1, b2, b3 = bound
    if n1 < 2 * b1 + 1 or n2 < 2 * b2 + 1 or n3 < 2 * b3 + 1:
        raise ValueError("box too small for requested support bound")
    coeffs = {}
    for m1 in range(-b1, b1 + 1):
        for m2 in range(-b2, b2 + 1):
            row = box[m1 % n1, m2 % n2]
            for m3 in range(-b3, b3 + 1):
                val = row[m3 % n3]
                if val != 0.0:
                    coeffs[(m1, m2, m3)] = complex(val)
    return PeriodicFunction(rlat, coeffs, real_valued=real_valued)


def eval_on_grid(f: PeriodicFunction, n: int) -> np.ndarray:
    """Evaluate f on the uniform n^3 cell grid x = (j1/n) a1 + (j2/n) a2 + (j3/n) a3.

    Returns the (n, n, n) complex array of values f(x_j), exactly equal to
    the direct summation of the Fourier series at those points.
    """
    if n < 1:
        raise ValueError("grid resolution must be >= 1")
    return _eval_box(f, (n, n, n))


def _eval_box(f: PeriodicFunction, shape) -> np.ndarray:
    box = f.to_box(shape)
    ntot = shape[0] * shape[1] * shape[2]
    return scipy.fft.ifftn(box) * ntot


def sup_norm(f: PeriodicFunction, n: int | None = None) -> float:
    """Maximum of |f| over a uniform cell grid.

    With explicit ``n`` the max is taken over that n^3 grid.  With
    ``n=None`` the resolution starts at 2*(max support index)+1 per axis
    and doubles until two successive refinements agree within 0.1%.
    """
    if n is not None:
        return float(np.max(np.abs(_eval_box(f, (n, n, n)))))
    if not f.coeffs:
        return 0.0
    shape = tuple(2 * m + 1 for m in f.max_index())
    prev = float(np.max(np.abs(_eval_box(f, shape))))
    for _ in range(8):
        shape = tuple(2 * s for s in shape)
        cur = float(np.max(np.abs(_eval_box(f, shape))))
        if abs(cur - prev) <= 1e-3 * cur or cur == 0.0:
            return cur
        prev = cur
    return prev


def autocorrelate(c: np.ndarray, basis: PlaneWaveBasis) -> PeriodicFunction:
    """Fourier coefficients of |u|^2/|cell| for u with plane-wave coefficients c.

    Returns g with g_k = (1/|cell|) * sum_G conj(c_G) c_{G+k}; in
    particular g_0 = |c|^2/|cell|.  The result is flagged real-valued.
    """
    c = np.asarray(c, dtype=complex)
    if c.shape != (basis.size,):
        raise ValueError(f"coefficient vector must have length {basis.size}")
    bound = tuple(2 * m for m in _basis_extent(basis))
    shape = tuple(scipy.fft.next_fast_len(2 * b + 1) for b in bound)
    vals = orbital_values(c[np.newaxis, :], basis, shape)[0]
    volume = TWO_PI**3 / basis.rlat.cell_volume
    dens = (vals.real**2 + vals.imag**2) / volume
    box = scipy.fft.fftn(dens) / (shape[0] * shape[1] * shape[2])
    return coefficients_from_box(box, basis.rlat, bound, real_valued=True)


def _basis_extent(basis: PlaneWaveBasis):
    if basis.size == 0:
        return (0, 0, 0)
    return tuple(int(v) for v in np.abs(basis.midx).max(axis=0))


def orbital_values(cmat: np.ndarray, basis: PlaneWaveBasis, shape) -> np.ndarray:
    """Values of sum_G c_G exp(i G.x) on the cell grid for a batch of orbitals.

    Args:
        cmat: (nb, N) coefficient rows.
        basis: the plane-wave basis indexing the columns.
        shape: target (n1, n2, n3) grid, each n_i >= 1.

    Returns:
        (nb, n1, n2, n3) complex array of grid values.
    """
    cmat = np.asarray(cmat, dtype=complex)
    n1, n2, n3 = shape
    box = np.zeros((cmat.shape[0], n1, n2, n3), dtype=complex)
    i1 = basis.midx[:, 0] % n1
    i2 = basis.midx[:, 1] % n2
    i3 = basis.midx[:, 2] % n3
    box[:, i1, i2, i3] = cmat
    return scipy.fft.ifftn(box, axes=(1, 2, 3)) * (n1 * n2 * n3)


# -- serialization -----------------------------------------------------

def save_periodic_function(f: PeriodicFunction, path):
    """Write a density/potential checkpoint as a plain text table.

    Format: a header line ``# rlat b1x b1y b1z b2x b2y b2z b3x b3y b3z``
    followed by one ``m1 m2 m3 re im`` line per stored coefficient.
    """
    mat = f.rlat.matrix
    nine = " ".join(f"{mat[r, c]:.17g}" for c in range(3) for r in range(3))
    lines = [f"# rlat {nine}"]
    for key in sorted(f.coeffs):
        val = f.coeffs[key]
        lines.append(f"{key[0]} {key[1]} {key[2]} {val.real:.17g} {val.imag:.17g}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_periodic_function(path) -> PeriodicFunction:
    """Read a checkpoint written by :func:`save_periodic_function`.

    The real-valued flag is re-derived from conjugate symmetry of the
    stored coefficients.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("# rlat "):
        raise ValueError(f"{path}: missing '# rlat' header")
    nine = [float(tok) for tok in lines[0][len("# rlat "):].split()]
    if len(nine) != 9:
        raise ValueError(f"{path}: header must carry 9 floats")
    b1, b2, b3 = nine[0:3], nine[3:6], nine[6:9]
    rlat = ReciprocalLattice(b1, b2, b3)
    coeffs = {}
    for ln in lines[1:]:
        if ln.startswith("#"):
            continue
        tok = ln.split()
        if len(tok) != 5:
            raise ValueError(f"{path}: malformed row {ln!r}")
        key = (int(tok[0]), int(tok[1]), int(tok[2]))
        coeffs[key] = complex(float(tok[3]), float(tok[4]))
    real = _is_conjugate_symmetric(coeffs)
    return PeriodicFunction(rlat, coeffs, real_valued=real)


def _is_conjugate_symmetric(coeffs) -> bool:
    for key, val in coeffs.items():
        mirror = coeffs.get((-key[0], -key[1], -key[2]), 0.0)
        if abs(mirror - np.conj(val)) > _REAL_TOL * (1.0 + abs(val)):
            return False
    return True
