"""Density accumulation, periodic Coulomb energy, and the SCF loop.

The mean-field Hamiltonian iterated here is H = -Laplacian/2 + vext +
(rho - rho_bar) * G, where G is the zero-mean periodic Coulomb kernel
with Fourier coefficients 4*pi/(|cell| |k|^2) and rho_bar the uniform
background that neutralizes the electron density.  The k = 0 Coulomb
mode is always excluded.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .bloch import (DEFAULT_GAP_TOLERANCE, FiberSolution, KGrid, fermi_and_gap,
                    solve_grid)
from .errors import ConvergenceError, NeutralityError, NumericalError
from .lattice import Lattice
from .pwbasis import (PeriodicFunction, PlaneWaveBasis, _basis_extent,
                      coefficients_from_box, orbital_values, sup_norm)

DEFAULT_NEUTRALITY_TOL = 1e-10

FOUR_PI = 4.0 * np.pi


@dataclass
class SCFConfig:
    """Knobs of the self-consistent loop.

    ``nocc`` counts doubly-degenerate electron pairs per unit cell; the
    stopping rule compares consecutive densities in the sup norm.
    """

    nocc: int
    mixing: float = 0.5
    tol_density: float = 1e-7
    max_iter: int = 100
    gap_tolerance: float = DEFAULT_GAP_TOLERANCE

    def __post_init__(self):
        if self.nocc < 1:
            raise ValueError("nocc must be >= 1")
        if not 0.0 < self.mixing <= 1.0:
            raise ValueError("mixing must lie in (0, 1]")
        if self.tol_density <= 0.0:
            raise ValueError("tol_density must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class SCFResult:
    """Converged state of one grid calculation."""

    density: PeriodicFunction
    energy_per_cell: float
    fermi: float
    gap: float
    iterations: int
    converged: bool
    fiber_solutions: list[FiberSolution] | None
    residual_linf: float
    log: list[tuple[int, float, float, float]] = field(default_factory=list)
    wall_time: float = 0.0


def uniform_density(basis: PlaneWaveBasis, nocc: int) -> PeriodicFunction:
    """Constant density integrating to nocc over the unit cell."""
    volume = PeriodicFunction(basis.rlat, {}).cell_volume
    return PeriodicFunction(basis.rlat, {(0, 0, 0): nocc / volume},
                            real_valued=True)


def density_from_grid(solutions, nocc: int) -> PeriodicFunction:
    """Electron density of the filled grid, averaged per unit cell.

    Sums |u|^2 of the nocc lowest orbitals of every fiber on a real-space
    box fine enough to resolve the density's full Fourier support, then
    transforms back once.

    The number of solutions must be a perfect cube L^3.
    """
    solutions = list(solutions)
    L = round(len(solutions) ** (1.0 / 3.0))
    if L**3 != len(solutions):
        raise ValueError("solutions must cover a full L^3 grid")
    basis = solutions[0].basis
    extent = _basis_extent(basis)
    bound = tuple(2 * m for m in extent)
    shape = tuple(scipy.fft.next_fast_len(2 * b + 1) for b in bound)
    acc = np.zeros(shape)
    for sol in solutions:
        occ = sol.eigenvectors[:, :nocc].T
        vals = orbital_values(occ, basis, shape)
        acc += np.einsum("nijk,nijk->ijk", vals.real, vals.real)
        acc += np.einsum("nijk,nijk->ijk", vals.imag, vals.imag)
    volume = PeriodicFunction(basis.rlat, {}).cell_volume
    acc /= float(L**3) * volume
    box = scipy.fft.fftn(acc) / (shape[0] * shape[1] * shape[2])
    rho = coefficients_from_box(box, basis.rlat, bound, real_valued=True)
    charge = rho.c0.real * volume
    if abs(charge - nocc) > 1e-10 * max(1.0, nocc):
        raise NumericalError(
            f"density integrates to {charge!r} instead of {nocc}")
    return rho


def hartree(f: PeriodicFunction,
            neutrality_tolerance: float = DEFAULT_NEUTRALITY_TOL) -> PeriodicFunction:
    """Periodic Coulomb field of a neutral charge distribution.

    Output coefficients are 4*pi*c_k(f)/|k|^2 for k != 0 and zero at
    k = 0 (zero-mean kernel convention).

    Raises:
        NeutralityError: if |c_0(f)| exceeds the tolerance.
    """
    if not f.real_valued:
        raise ValueError("hartree expects a real-valued charge distribution")
    if abs(f.c0) > neutrality_tolerance:
        raise NeutralityError(
            f"charge distribution mean {abs(f.c0):.3e} exceeds neutrality "
            f"tolerance {neutrality_tolerance:.3e}")
    bmat = f.rlat.matrix
    out = {}
    for key, val in f.coeffs.items():
        if key == (0, 0, 0):
            continue
        k = bmat @ np.asarray(key, dtype=float)
        out[key] = FOUR_PI * val / float(k @ k)
    return PeriodicFunction(f.rlat, out, real_valued=True)


def coulomb_energy(f: PeriodicFunction, g: PeriodicFunction,
                   neutrality_tolerance: float = DEFAULT_NEUTRALITY_TOL) -> float:
    """Periodic Coulomb pairing 4*pi*|cell| * sum_{k!=0} conj(c_k(g)) c_k(f) / |k|^2.

    Symmetric in its arguments and nonnegative on the diagonal; both
    fields must be real-valued and neutral within tolerance.
    """
    for name, h in (("f", f), ("g", g)):
        if not h.real_valued:
            raise ValueError(f"coulomb_energy expects real-valued {name}")
        if abs(h.c0) > neutrality_tolerance:
            raise NeutralityError(
                f"{name} has mean {abs(h.c0):.3e} beyond neutrality tolerance")
    if not f._same_rlat(g):
        raise ValueError("fields live on different lattices")
    keys = set(f.coeffs) & set(g.coeffs)
    keys.discard((0, 0, 0))
    if not keys:
        return 0.0
    bmat = f.rlat.matrix
    total = 0.0
    for key in keys:
        k = bmat @ np.asarray(key, dtype=float)
        total += (np.conj(g.coeffs[key]) * f.coeffs[key]).real / float(k @ k)
    return FOUR_PI * f.cell_volume * total


def overlap_integral(f: PeriodicFunction, g: PeriodicFunction) -> float:
    """Integral of f*g over one unit cell, for real-valued g."""
    keys = set(f.coeffs) & set(g.coeffs)
    total = sum((f.coeffs[k] * np.conj(g.coeffs[k])).real for k in keys)
    return f.cell_volume * total


def kinetic_energy_per_cell(solutions, nocc: int) -> float:
    """Grid-averaged sum of |G+Q|^2 |c|^2 over the occupied orbitals.

    The conventional 1/2 factor is applied by the caller in the total
    energy.
    """
    solutions = list(solutions)
    total = 0.0
    for sol in solutions:
        gq = sol.basis.gvecs + sol.q
        weights = np.einsum("ij,ij->i", gq, gq)
        occ = sol.eigenvectors[:, :nocc]
        total += float(np.einsum("g,gn->", weights, occ.real**2 + occ.imag**2))
    return total / len(solutions)


def total_energy(solutions, density: PeriodicFunction, vext: PeriodicFunction,
                 nocc: int, include_coulomb: bool = True) -> float:
    """Energy per unit cell: kinetic/2 + external + Coulomb terms.

    E = kinetic/2 + int(vext * rho) + D(rho - rho_bar, rho - rho_bar)/2,
    with rho_bar the uniform neutralizing background.  In the linear band
    model the Coulomb term is dropped (``include_coulomb=False``), which
    reduces E to the band sum.
    """
    e = 0.5 * kinetic_energy_per_cell(solutions, nocc)
    e += overlap_integral(vext, density)
    if include_coulomb:
        neutral = density.neutralized()
        e += 0.5 * coulomb_energy(neutral, neutral)
    return e


def scf(lat: Lattice, basis: PlaneWaveBasis, grid: KGrid,
        vext: PeriodicFunction, cfg: SCFConfig,
        rho_init: PeriodicFunction | None = None,
        self_consistent: bool = True, threads: int = 1,
        keep_fiber_solutions: bool = True) -> SCFResult:
    """Run the self-consistent loop on one k-grid.

    Each iteration maps the density to the mean-field potential, solves
    every fiber, refills, and linearly mixes; the loop stops when
    consecutive densities agree below ``cfg.tol_density`` in the sup
    norm.  With ``self_consistent=False`` the potential is held at
    ``vext`` and a single pass returns the band-model ground state.

    Args:
        lat: real-space lattice (provides the cell volume).
        basis: plane-wave basis shared by all fibers.
        grid: k-grid to sample.
        vext: external potential (real-valued).
        cfg: loop parameters.
        rho_init: starting density; defaults to the uniform density.
        self_consistent: include the Coulomb feedback term.
        threads: worker threads for the independent fiber solves.
        keep_fiber_solutions: retain per-fiber eigenvectors in the result
            (drop for large reference grids to bound memory).

    Raises:
        MetallicError: the gap closes at some iterate.
        ConvergenceError: max_iter reached before the stopping rule.
    """
    t0 = time.perf_counter()
    rho = uniform_density(basis, cfg.nocc) if rho_init is None else rho_init
    charge = rho.c0.real * lat.volume
    if abs(charge - cfg.nocc) > 1e-10 * max(1.0, cfg.nocc):
        raise ValueError(
            f"rho_init integrates to {charge!r}, expected {cfg.nocc}")
    log: list[tuple[int, float, float, float]] = []
    for it in range(1, cfg.max_iter + 1):
        v_eff = vext + hartree(rho.neutralized()) if self_consistent else vext
        sols = solve_grid(basis, v_eff, grid, cfg.nocc, threads=threads)
        fermi, gap = fermi_and_gap(sols, cfg.nocc, cfg.gap_tolerance)
        rho_out = density_from_grid(sols, cfg.nocc)
        energy = total_energy(sols, rho_out, vext, cfg.nocc,
                              include_coulomb=self_consistent)
        if not self_consistent:
            residual = sup_norm(rho_out - rho)
            log.append((it, residual, energy, gap))
            return SCFResult(rho_out, energy, fermi, gap, it, True,
                             sols if keep_fiber_solutions else None,
                             residual, log, time.perf_counter() - t0)
        rho_next = (1.0 - cfg.mixing) * rho + cfg.mixing * rho_out
        residual = sup_norm(rho_next - rho)
        log.append((it, residual, energy, gap))
        rho = rho_next
        if residual < cfg.tol_density:
            return SCFResult(rho_out, energy, fermi, gap, it, True,
                             sols if keep_fiber_solutions else None,
                             residual, log, time.perf_counter() - t0)
    raise ConvergenceError(
        f"no convergence after {cfg.max_iter} iterations "
        f"(last residual {residual:.3e})", residual=residual)
