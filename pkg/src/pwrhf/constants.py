"""Physical constants and unit conversions.

Everything internal is in Hartree atomic units (lengths in Bohr, energies
in Hartree).  Electron-volts appear only at the CLI/CSV boundary.
"""

HARTREE_TO_EV = 27.211386

EV_TO_HARTREE = 1.0 / HARTREE_TO_EV
