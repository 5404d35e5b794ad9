"""Run configuration: flat ``key = value`` files with bracketed sections.

Grammar: full-line comments start with ``#``; every other non-blank line
is either ``[section]`` or ``key = value``.  Unknown sections or keys are
rejected.  Energies accept an optional unit suffix (``736 eV`` or
``27.05 Ha``); bare numbers are Hartree.  Vectors and grid lists are
whitespace-separated; q-point lists separate triples with ``;``.

Sections and keys (defaults in parentheses):

    [lattice]  preset (si-fcc) | a (10.245) | vectors (9 floats, explicit)
    [basis]    ecutoff | max_size (2000000)
    [model]    kind (linear) | nocc (4) | potential (si-epm) |
               rhf_reference (self)
    [scf]      grid (8) | mixing (0.5) | tol_density (1e-7) |
               max_iter (100) | gap_tolerance (1e-6)
    [study]    grids | reference | plot_script (false)
    [bands]    qpoints (0 0 0) | nbands (8)
    [riemann]  kappa (1.0) | beta (0.5) | lmax (10) |
               fit_lmin (8) | fit_lmax (16)
    [rate]     gap_grid (8)
    [run]      threads (1) | out ()
"""

import configparser
from dataclasses import dataclass, field

import numpy as np

from .constants import EV_TO_HARTREE
from .errors import ConfigError
from .lattice import Lattice
from .pseudopotential import SILICON_LATTICE_CONSTANT, silicon_lattice

_SCHEMA = {
    "lattice": {"preset", "a", "vectors"},
    "basis": {"ecutoff", "max_size"},
    "model": {"kind", "nocc", "potential", "rhf_reference"},
    "scf": {"grid", "mixing", "tol_density", "max_iter", "gap_tolerance"},
    "study": {"grids", "reference", "plot_script"},
    "bands": {"qpoints", "nbands"},
    "riemann": {"kappa", "beta", "lmax", "fit_lmin", "fit_lmax"},
    "rate": {"gap_grid"},
    "run": {"threads", "out"},
}

# Named parameter bundles selectable with --preset.  The desk preset is
# sized so a full study finishes in minutes; the paper preset reproduces
# the published experiment sizes and is an overnight run.
PRESETS = {
    "si-fcc-desk": {
        ("basis", "ecutoff"): "180 eV",
        ("study", "grids"): "4 6 8 10 12",
        ("study", "reference"): "24",
    },
    "si-fcc-paper": {
        ("basis", "ecutoff"): "736 eV",
        ("study", "grids"): "4 8 12 16 20 24 28",
        ("study", "reference"): "60",
    },
}


@dataclass
class RunConfig:
    """Fully resolved configuration for one CLI invocation."""

    lattice: Lattice
    a: float
    ecutoff: float
    basis_max_size: int
    model: str
    nocc: int
    potential: str
    rhf_reference: str
    scf_grid: int
    mixing: float
    tol_density: float
    max_iter: int
    gap_tolerance: float
    study_grids: list[int]
    study_reference: int
    plot_script: bool
    qpoints: list[np.ndarray] = field(default_factory=list)
    nbands: int = 8
    riemann_kappa: float = 1.0
    riemann_beta: float = 0.5
    riemann_lmax: int = 10
    riemann_fit_lmin: int = 8
    riemann_fit_lmax: int = 16
    rate_gap_grid: int = 8
    threads: int = 1
    out: str = ""


def _parse_energy(text: str) -> float:
    tok = text.split()
    try:
        if len(tok) == 1:
            return float(tok[0])
        if len(tok) == 2:
            value = float(tok[0])
            unit = tok[1].lower()
            if unit == "ev":
                return value * EV_TO_HARTREE
            if unit in ("ha", "hartree"):
                return value
    except ValueError:
        pass
    raise ConfigError(f"cannot parse energy {text!r} (use '<x>', '<x> Ha' "
                      f"or '<x> eV')")


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"cannot parse boolean {text!r}")


def _parse_int_list(text: str) -> list[int]:
    try:
        out = [int(tok) for tok in text.split()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse integer list {text!r}") from exc
    if not out:
        raise ConfigError("empty integer list")
    return out


def _parse_qpoints(text: str) -> list[np.ndarray]:
    points = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        tok = chunk.split()
        if len(tok) != 3:
            raise ConfigError(f"q-point {chunk!r} must have 3 coordinates")
        points.append(np.array([float(t) for t in tok]))
    if not points:
        raise ConfigError("empty q-point list")
    return points


def load_config(path: str | None = None, preset: str | None = None,
                overrides: dict | None = None) -> RunConfig:
    """Resolve a RunConfig from defaults, a preset, a file, and overrides.

    Precedence (lowest first): built-in defaults, ``--preset`` values,
    the config file, then explicit overrides such as CLI flags.

    Raises:
        ConfigError: unknown keys/sections, malformed values, or
            inconsistent combinations.
    """
    values: dict[tuple, str] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from "
                              f"{sorted(PRESETS)}")
        values.update(PRESETS[preset])
    if path is not None:
        parser = configparser.ConfigParser(
            delimiters=("=",), comment_prefixes=("#",),
            inline_comment_prefixes=None, strict=True,
            empty_lines_in_values=False, interpolation=None)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path!r}: {exc}") from exc
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            for key, val in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                values[(section, key)] = val
    for pair, val in (overrides or {}).items():
        values[pair] = val

    def get(section, key, default=None):
        return values.get((section, key), default)

    a = float(get("lattice", "a", str(SILICON_LATTICE_CONSTANT)))
    vectors = get("lattice", "vectors")
    preset_name = get("lattice", "preset", "si-fcc")
    if vectors is not None:
        nine = [float(t) for t in vectors.split()]
        if len(nine) != 9:
            raise ConfigError("lattice vectors need exactly 9 floats")
        lattice = Lattice(nine[0:3], nine[3:6], nine[6:9])
    elif preset_name == "si-fcc":
        lattice = silicon_lattice(a)
    else:
        raise ConfigError(f"unknown lattice preset {preset_name!r}")

    model = get("model", "kind", "linear")
    if model not in ("linear", "rhf"):
        raise ConfigError(f"model kind must be linear or rhf, got {model!r}")
    potential = get("model", "potential", "si-epm")
    if potential not in ("si-epm", "zero"):
        raise ConfigError(f"potential must be si-epm or zero, got {potential!r}")

    grids = _parse_int_list(get("study", "grids", "4 6 8 10 12"))
    reference = int(get("study", "reference", "24"))

    try:
        cfg = RunConfig(
            lattice=lattice,
            a=a,
            ecutoff=_parse_energy(get("basis", "ecutoff", "180 eV")),
            basis_max_size=int(get("basis", "max_size", "2000000")),
            model=model,
            nocc=int(get("model", "nocc", "4")),
            potential=potential,
            rhf_reference=get("model", "rhf_reference", "self"),
            scf_grid=int(get("scf", "grid", "8")),
            mixing=float(get("scf", "mixing", "0.5")),
            tol_density=float(get("scf", "tol_density", "1e-7")),
            max_iter=int(get("scf", "max_iter", "100")),
            gap_tolerance=float(get("scf", "gap_tolerance", "1e-6")),
            study_grids=grids,
            study_reference=reference,
            plot_script=_parse_bool(get("study", "plot_script", "false")),
            qpoints=_parse_qpoints(get("bands", "qpoints", "0 0 0")),
            nbands=int(get("bands", "nbands", "8")),
            riemann_kappa=float(get("riemann", "kappa", "1.0")),
            riemann_beta=float(get("riemann", "beta", "0.5")),
            riemann_lmax=int(get("riemann", "lmax", "10")),
            riemann_fit_lmin=int(get("riemann", "fit_lmin", "8")),
            riemann_fit_lmax=int(get("riemann", "fit_lmax", "16")),
            rate_gap_grid=int(get("rate", "gap_grid", "8")),
            threads=int(get("run", "threads", "1")),
            out=get("run", "out", ""),
        )
    except ValueError as exc:
        raise ConfigError(f"malformed config value: {exc}") from exc
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if cfg.ecutoff <= 0.0:
        raise ConfigError("ecutoff must be positive")
    if cfg.nocc < 1:
        raise ConfigError("nocc must be >= 1")
    if not 0.0 < cfg.mixing <= 1.0:
        raise ConfigError("mixing must lie in (0, 1]")
    if cfg.tol_density <= 0.0:
        raise ConfigError("tol_density must be positive")
    if cfg.max_iter < 1:
        raise ConfigError("max_iter must be >= 1")
    if cfg.scf_grid < 1:
        raise ConfigError("scf grid must be >= 1")
    if min(cfg.study_grids) < 1:
        raise ConfigError("study grids must be >= 1")
    if cfg.study_reference < max(cfg.study_grids):
        raise ConfigError("study reference grid must be >= every study grid")
    if cfg.riemann_lmax < 1 or cfg.riemann_fit_lmin < 1:
        raise ConfigError("riemann grid orders must be >= 1")
    if cfg.riemann_fit_lmax < cfg.riemann_fit_lmin + 2:
        raise ConfigError("riemann fit window needs at least 3 orders")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    if cfg.nbands < 1:
        raise ConfigError("nbands must be >= 1")
