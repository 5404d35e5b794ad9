"""Real-space and reciprocal lattice construction and geometric queries.

Conventions: lattice vectors are given in Bohr, reciprocal vectors in
Bohr^-1, and the duality relation is b_i . a_j = 2*pi*delta_ij.  The
reduced reciprocal cell is the parallelepiped spanned by the b_i with
fractional coordinates in [-1/2, 1/2).
"""

from itertools import product

import numpy as np

from .errors import DegenerateLatticeError

TWO_PI = 2.0 * np.pi

# Determinants below this (in Bohr^3) are treated as singular.
_SINGULAR_VOLUME = 1e-12


class Lattice:
    """A periodic lattice of R^3 spanned by three basis vectors.

    Attributes:
        a1, a2, a3: lattice vectors (Bohr), read-only arrays.
        volume: unit cell volume |det[a1 a2 a3]| (Bohr^3).
    """

    def __init__(self, a1, a2, a3):
        mat = np.column_stack([np.asarray(v, dtype=float) for v in (a1, a2, a3)])
        if mat.shape != (3, 3):
            raise ValueError("lattice vectors must be 3-vectors")
        det = np.linalg.det(mat)
        if not np.isfinite(det) or abs(det) < _SINGULAR_VOLUME:
            raise DegenerateLatticeError(
                f"lattice basis is singular (|det| = {abs(det):.3e} Bohr^3)"
            )
        self._mat = mat
        self._mat.setflags(write=False)
        self.volume = abs(det)

    @property
    def a1(self):
        return self._mat[:, 0]

    @property
    def a2(self):
        return self._mat[:, 1]

    @property
    def a3(self):
        return self._mat[:, 2]

    @property
    def matrix(self):
        """(3, 3) matrix with the lattice vectors as columns."""
        return self._mat

    def __repr__(self):
        rows = ", ".join(str(list(self._mat[:, i])) for i in range(3))
        return f"Lattice([{rows}])"


class ReciprocalLattice:
    """Dual lattice satisfying b_i . a_j = 2*pi*delta_ij.

    Attributes:
        b1, b2, b3: reciprocal vectors (Bohr^-1), read-only arrays.
        bz_radius: sup of |q| over the reduced cell, i.e. the largest
            norm among the 8 corners (+-b1 +-b2 +-b3)/2 (Bohr^-1).
        cell_volume: volume of the reduced reciprocal cell, equal to
            (2*pi)^3 / (real-space cell volume).
    """

    def __init__(self, b1, b2, b3):
        mat = np.column_stack([np.asarray(v, dtype=float) for v in (b1, b2, b3)])
        if mat.shape != (3, 3):
            raise ValueError("reciprocal vectors must be 3-vectors")
        det = np.linalg.det(mat)
        if not np.isfinite(det) or abs(det) < _SINGULAR_VOLUME:
            raise DegenerateLatticeError("reciprocal basis is singular")
        self._mat = mat
        self._mat.setflags(write=False)
        self._inv = np.linalg.inv(mat)
        self._inv.setflags(write=False)
        self.cell_volume = abs(det)
        corners = [
            0.5 * (s1 * mat[:, 0] + s2 * mat[:, 1] + s3 * mat[:, 2])
            for s1, s2, s3 in product((-1.0, 1.0), repeat=3)
        ]
        self.bz_radius = max(float(np.linalg.norm(c)) for c in corners)

    @property
    def b1(self):
        return self._mat[:, 0]

    @property
    def b2(self):
        return self._mat[:, 1]

    @property
    def b3(self):
        return self._mat[:, 2]

    @property
    def matrix(self):
        """(3, 3) matrix with the reciprocal vectors as columns."""
        return self._mat

    def cartesian(self, midx):
        """Map integer coordinates (..., 3) to Cartesian vectors (..., 3)."""
        return np.asarray(midx, dtype=float) @ self._mat.T

    def __repr__(self):
        rows = ", ".join(str(list(self._mat[:, i])) for i in range(3))
        return f"ReciprocalLattice([{rows}])"


def reciprocal(lattice: Lattice) -> ReciprocalLattice:
    """Construct the reciprocal lattice of ``lattice``.

    The columns of the returned basis matrix are B = 2*pi*(A^T)^-1 where
    A holds the real-space vectors as columns.

    Raises:
        DegenerateLatticeError: if the lattice basis is singular.
    """
    bmat = TWO_PI * np.linalg.inv(lattice.matrix.T)
    return ReciprocalLattice(bmat[:, 0], bmat[:, 1], bmat[:, 2])


def frac_coords(rlat: ReciprocalLattice, q) -> np.ndarray:
    """Fractional coordinates (alpha1, alpha2, alpha3) of q = sum alpha_i b_i.

    Membership of the reduced cell is equivalent to all alpha_i lying in
    [-1/2, 1/2).
    """
    return rlat._inv @ np.asarray(q, dtype=float)
