"""Empirical pseudopotentials for the silicon test system.

The linear potential is the classic three-shell form-factor model for
diamond-structure silicon; the derived self-consistent variant subtracts
the Coulomb field of a reference density so that this reference density
becomes a fixed point of the self-consistent loop.
"""

import numpy as np

from .errors import ConfigError
from .lattice import Lattice, ReciprocalLattice, reciprocal
from .pwbasis import PeriodicFunction, build_basis
from . import rhf

# Form factors in Hartree, keyed by |k|^2 in units of (2*pi/a)^2.
SILICON_FORM_FACTORS = {3: -0.105, 8: 0.02, 11: 0.04}

SILICON_LATTICE_CONSTANT = 10.245  # Bohr


class FormFactorTable:
    """Pseudopotential form factors S[|k|^2] on reciprocal shells.

    Attributes:
        entries: map from |k|^2 (in (2*pi/a)^2 units) to S (Hartree);
            shells absent from the map carry a zero form factor.
    """

    def __init__(self, entries=None):
        self.entries = dict(SILICON_FORM_FACTORS if entries is None else entries)

    def factor(self, shell: int) -> float:
        return self.entries.get(shell, 0.0)

    @property
    def max_shell(self) -> int:
        return max(self.entries)


def silicon_lattice(a: float = SILICON_LATTICE_CONSTANT) -> Lattice:
    """Face-centered cubic silicon lattice with constant ``a`` (Bohr)."""
    half = 0.5 * a
    return Lattice((0.0, half, half), (half, 0.0, half), (half, half, 0.0))


def cohen_bergstresser(lat: Lattice, a: float, kmax2: int = 11,
                       table: FormFactorTable | None = None) -> PeriodicFunction:
    """Three-shell empirical pseudopotential on the fcc lattice.

    The coefficient at reciprocal vector k = (k1, k2, k3) is
    S[|k|^2] * cos(a*(k1 + k2 + k3)/8), with S given by ``table`` on shells
    of |k|^2 measured in (2*pi/a)^2 units.

    Args:
        lat: the fcc lattice with constant ``a``.
        a: lattice constant (Bohr).
        kmax2: largest shell scanned, must cover every tabulated shell.
        table: form factors; defaults to the silicon values.

    Returns:
        The potential as a real-valued PeriodicFunction (Hartree).
    """
    table = table or FormFactorTable()
    if kmax2 < table.max_shell:
        raise ConfigError(
            f"kmax2={kmax2} misses tabulated shell {table.max_shell}")
    rlat = reciprocal(lat)
    unit = (2.0 * np.pi / a) ** 2
    # Strict-< cutoff at (kmax2 + 1/2) shells keeps every shell <= kmax2.
    basis = build_basis(rlat, 0.5 * unit * (kmax2 + 0.5))
    coeffs = {}
    for m, g in zip(basis.midx.tolist(), basis.gvecs):
        shell_f = float(g @ g) / unit
        shell = int(round(shell_f))
        if abs(shell_f - shell) > 1e-6:
            continue  # off-shell vectors cannot occur on the fcc dual lattice
        s = table.factor(shell)
        if s != 0.0:
            coeffs[tuple(m)] = s * np.cos(a * (g[0] + g[1] + g[2]) / 8.0)
    return PeriodicFunction(rlat, coeffs, real_valued=True)


def rhf_pseudopotential(vlin: PeriodicFunction,
                        rho_ref: PeriodicFunction) -> PeriodicFunction:
    """External potential whose self-consistent fixed point is ``rho_ref``.

    Subtracts the periodic Coulomb field of the (neutralized) reference
    density from the linear potential; the k = 0 coefficient is vlin's
    because the Coulomb kernel carries no mean component.
    """
    return vlin - rhf.hartree(rho_ref.neutralized())
