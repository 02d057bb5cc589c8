"""Pauli-string Hamiltonians for 1D spin chains.

Spin-1/2 chains are described in the computational basis with local indices
s_i in {0, 1}.  Convention: index 0 has sigma^z eigenvalue +1 and index 1 has
eigenvalue -1, so the magnetization of a configuration is (n0 - n1) / n.

Two built-in families:

    transverse-field Ising (open chain):
        H = -J sum_i Z_i Z_{i+1} - h sum_i X_i

    anisotropic Heisenberg in a longitudinal field (open chain):
        H = J sum_i [(1+g) X_i X_{i+1} + (1-g) Y_i Y_{i+1} + D Z_i Z_{i+1}]
            + h sum_i Z_i

Matrix elements are exact products of the real term coefficients with unit
factors +/-1 and +/-i; no floating-point Pauli algebra beyond coefficient
multiplication.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    ConfigError,
    DegenerateSampleError,
    InvalidSizeError,
    ShapeError,
)

AXES = ("X", "Y", "Z")

# Probabilities are floored at this value before taking logs; amplitudes at or
# below sqrt(PROB_FLOOR) are treated as degenerate in local-energy ratios.
PROB_FLOOR = 1e-30
LOG_PROB_FLOOR = math.log(PROB_FLOOR)


def as_config(values, n: int | None = None) -> np.ndarray:
    """Validate and normalize a spin configuration to a 1D int8 array."""
    s = np.asarray(values, dtype=np.int8)
    if s.ndim != 1 or s.size < 1:
        raise ShapeError(f"configuration must be a nonempty 1D sequence, got shape {s.shape}")
    if n is not None and s.size != n:
        raise ShapeError(f"configuration length {s.size} does not match system size {n}")
    if np.any(s < 0) or np.any(s > 1):
        raise ShapeError("local basis indices must be 0 or 1 for spin-1/2")
    return s


def config_bits(s: np.ndarray) -> str:
    """Render a configuration as a bitstring, s_1 leftmost."""
    return "".join(str(int(v)) for v in s)


@dataclass(frozen=True)
class PauliTerm:
    """One weighted Pauli string, e.g. -1.0 * Z_0 Z_1.

    ``factors`` lists (site, axis) pairs sorted by site with distinct sites.
    """

    coefficient: complex
    factors: tuple[tuple[int, str], ...]

    def __post_init__(self):
        if not self.factors:
            raise ValueError("a Pauli term needs at least one factor")
        sites = [site for site, _ in self.factors]
        if sorted(set(sites)) != sites:
            raise ValueError(f"factor sites must be distinct and sorted, got {sites}")
        for _, axis in self.factors:
            if axis not in AXES:
                raise ValueError(f"unknown Pauli axis {axis!r}")

    @property
    def max_site(self) -> int:
        return self.factors[-1][0]


@dataclass(frozen=True)
class PauliHamiltonian:
    """Sum of weighted Pauli strings on an n-site chain.

    Hermiticity is enforced by requiring real coefficients: every Pauli
    string is itself Hermitian.
    """

    n: int
    terms: tuple[PauliTerm, ...]

    def __post_init__(self):
        if self.n < 1:
            raise InvalidSizeError(f"system size must be >= 1, got {self.n}")
        for term in self.terms:
            if term.max_site >= self.n:
                raise ShapeError(f"term touches site {term.max_site} beyond n={self.n}")
            if abs(complex(term.coefficient).imag) != 0.0:
                raise ValueError("coefficients must be real for a Hermitian Hamiltonian")


@dataclass(frozen=True)
class CouplingVector:
    """Named physical parameters plus the system size they apply to."""

    n: int
    params: tuple[tuple[str, float], ...]

    def __post_init__(self):
        if self.n < 1:
            raise InvalidSizeError(f"system size must be >= 1, got {self.n}")

    @classmethod
    def make(cls, n: int, **params: float) -> "CouplingVector":
        return cls(n=n, params=tuple((k, float(v)) for k, v in params.items()))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.params)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.params], dtype=np.float64)

    def get(self, name: str) -> float:
        for key, value in self.params:
            if key == name:
                return value
        raise KeyError(name)

    def as_dict(self) -> dict[str, float]:
        return dict(self.params)

    def outside_prior(self, family: "HamiltonianFamily") -> tuple[str, ...]:
        """Names of parameters lying outside the family's prior intervals."""
        out = []
        for name, value in self.params:
            lo, hi = family.prior[name]
            if not (lo <= value <= hi):
                out.append(name)
        return tuple(out)


@dataclass(frozen=True)
class HamiltonianFamily:
    """A parameterized set of Hamiltonians with priors over couplings and sizes.

    ``prior`` maps each varying parameter to a closed uniform interval; the
    system size is drawn uniformly from ``sizes``.  ``fixed`` holds constants
    that enter the builder but are not model inputs.
    """

    name: str
    prior: dict[str, tuple[float, float]]
    sizes: tuple[int, ...]
    fixed: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.sizes:
            raise ConfigError("family size set must be nonempty")
        for pname, (lo, hi) in self.prior.items():
            if hi < lo:
                raise ConfigError(f"prior for {pname!r} has hi < lo")

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(self.prior)

    def _resolve(self, J: CouplingVector, name: str) -> float:
        values = J.as_dict()
        if name in values:
            return values[name]
        return self.fixed[name]

    def build(self, J: CouplingVector) -> PauliHamiltonian:
        """Deterministically build H(J); same couplings give an identical term list."""
        if self.name == "tfi":
            return build_tfi(J.n, self._resolve(J, "J"), self._resolve(J, "h"))
        if self.name == "xyz":
            return build_xyz(
                J.n,
                self._resolve(J, "J"),
                self._resolve(J, "gamma"),
                self._resolve(J, "delta"),
                self._resolve(J, "h"),
            )
        raise ConfigError(f"unknown Hamiltonian family {self.name!r}")

    def coupling(self, n: int, **params: float) -> CouplingVector:
        """Build a CouplingVector in this family's declared parameter order."""
        missing = [p for p in self.param_names if p not in params]
        if missing:
            raise ConfigError(f"missing parameter(s) {missing} for family {self.name!r}")
        unknown = [p for p in params if p not in self.param_names]
        if unknown:
            raise ConfigError(f"unknown parameter(s) {unknown} for family {self.name!r}")
        return CouplingVector(n=n, params=tuple((p, float(params[p])) for p in self.param_names))

    def describe(self) -> dict:
        """JSON-ready description used in checkpoints and run configs."""
        return {
            "name": self.name,
            "prior": {k: [float(a), float(b)] for k, (a, b) in self.prior.items()},
            "sizes": [int(s) for s in self.sizes],
            "fixed": {k: float(v) for k, v in self.fixed.items()},
        }

    @classmethod
    def from_description(cls, desc: dict) -> "HamiltonianFamily":
        return cls(
            name=desc["name"],
            prior={k: (float(a), float(b)) for k, (a, b) in desc["prior"].items()},
            sizes=tuple(int(s) for s in desc["sizes"]),
            fixed={k: float(v) for k, v in desc.get("fixed", {}).items()},
        )


def tfi_family(h_range=(0.5, 1.5), sizes=(10,), J=1.0) -> HamiltonianFamily:
    return HamiltonianFamily(
        name="tfi", prior={"h": tuple(h_range)}, sizes=tuple(sizes), fixed={"J": float(J)}
    )


def xyz_family(h_range=(0.0, 1.0), delta_range=(-1.0, 1.0), sizes=(10,), J=1.0, gamma=0.2) -> HamiltonianFamily:
    return HamiltonianFamily(
        name="xyz",
        prior={"delta": tuple(delta_range), "h": tuple(h_range)},
        sizes=tuple(sizes),
        fixed={"J": float(J), "gamma": float(gamma)},
    )


def build_tfi(n: int, J: float, h: float) -> PauliHamiltonian:
    """Open-boundary transverse-field Ising chain: -J ZZ bonds, -h X sites.

    Zero-coefficient terms are dropped at build time.
    """
    if n < 2:
        raise InvalidSizeError(f"TFI chain needs n >= 2, got {n}")
    terms: list[PauliTerm] = []
    if J != 0.0:
        for i in range(n - 1):
            terms.append(PauliTerm(-float(J), ((i, "Z"), (i + 1, "Z"))))
    if h != 0.0:
        for i in range(n):
            terms.append(PauliTerm(-float(h), ((i, "X"),)))
    return PauliHamiltonian(n=n, terms=tuple(terms))


def build_xyz(n: int, J: float, gamma: float, delta: float, h: float) -> PauliHamiltonian:
    """Open-boundary anisotropic Heisenberg chain in a longitudinal field.

    Per bond: J(1+gamma) XX + J(1-gamma) YY + J*delta ZZ.  Per site: h Z.
    """
    if n < 2:
        raise InvalidSizeError(f"XYZ chain needs n >= 2, got {n}")
    cxx = float(J) * (1.0 + float(gamma))
    cyy = float(J) * (1.0 - float(gamma))
    czz = float(J) * float(delta)
    terms: list[PauliTerm] = []
    for i in range(n - 1):
        if cxx != 0.0:
            terms.append(PauliTerm(cxx, ((i, "X"), (i + 1, "X"))))
        if cyy != 0.0:
            terms.append(PauliTerm(cyy, ((i, "Y"), (i + 1, "Y"))))
        if czz != 0.0:
            terms.append(PauliTerm(czz, ((i, "Z"), (i + 1, "Z"))))
    if h != 0.0:
        for i in range(n):
            terms.append(PauliTerm(float(h), ((i, "Z"),)))
    return PauliHamiltonian(n=n, terms=tuple(terms))


@dataclass(frozen=True)
class _FlipGroup:
    """All terms sharing one set of flipped sites (X or Y factors)."""

    flip_sites: tuple[int, ...]
    # each member: (coefficient, z_sites, y_sites)
    members: tuple[tuple[float, tuple[int, ...], tuple[int, ...]], ...]


@functools.lru_cache(maxsize=64)
def _flip_groups(H: PauliHamiltonian) -> tuple[_FlipGroup, ...]:
    grouped: dict[tuple[int, ...], list] = {}
    order: list[tuple[int, ...]] = []
    for term in H.terms:
        flips = tuple(site for site, axis in term.factors if axis in ("X", "Y"))
        z_sites = tuple(site for site, axis in term.factors if axis == "Z")
        y_sites = tuple(site for site, axis in term.factors if axis == "Y")
        if flips not in grouped:
            grouped[flips] = []
            order.append(flips)
        grouped[flips].append((float(complex(term.coefficient).real), z_sites, y_sites))
    # diagonal group first when present, then first-seen order
    pos = {f: i for i, f in enumerate(order)}
    order.sort(key=lambda f: (len(f) > 0, pos[f]))
    return tuple(_FlipGroup(f, tuple(grouped[f])) for f in order)


def _group_elements(group: _FlipGroup, configs: np.ndarray) -> np.ndarray:
    """Matrix elements <s|group|s'> for a batch of row configurations s.

    s' is s with ``group.flip_sites`` flipped.  Z factors contribute the
    eigenvalue of the row configuration; each Y factor contributes
    i*(2 s_i - 1) on top of the flip.
    """
    B = configs.shape[0]
    elems = np.zeros(B, dtype=np.complex128)
    z = 1.0 - 2.0 * configs.astype(np.float64)
    for coeff, z_sites, y_sites in group.members:
        part = np.full(B, coeff, dtype=np.complex128)
        for site in z_sites:
            part *= z[:, site]
        for site in y_sites:
            part *= 1j * (2.0 * configs[:, site].astype(np.float64) - 1.0)
        elems += part
    return elems


def connected_configs(H: PauliHamiltonian, s) -> list[tuple[np.ndarray, complex]]:
    """All s' with <s|H|s'> != 0, each exactly once, with its matrix element.

    The diagonal element comes first when nonzero.  X flips a spin with unit
    factor, Y flips with factor +/-i, Z contributes a diagonal +/-1.
    """
    s = as_config(s, H.n)
    out: list[tuple[np.ndarray, complex]] = []
    row = s[np.newaxis, :]
    for group in _flip_groups(H):
        elem = complex(_group_elements(group, row)[0])
        if elem == 0:
            continue
        sp = s.copy()
        for site in group.flip_sites:
            sp[site] = 1 - sp[site]
        out.append((sp, elem))
    return out


def local_energy(H: PauliHamiltonian, s, psi) -> complex:
    """Local energy sum_{s'} <s|H|s'> psi(s') / psi(s).

    ``psi`` maps a configuration to (log_amplitude, phase); ratios are formed
    as exp(log A' - log A) * exp(i (phi' - phi)).  Raises
    DegenerateSampleError when the amplitude at s is at the underflow floor.
    """
    s = as_config(s, H.n)
    log_a, phase = psi(s)
    if log_a <= 0.5 * LOG_PROB_FLOOR:
        raise DegenerateSampleError(
            f"amplitude underflow at configuration {config_bits(s)} (log amplitude {log_a:.3f})"
        )
    total = 0.0 + 0.0j
    for sp, elem in connected_configs(H, s):
        if np.array_equal(sp, s):
            total += elem
            continue
        log_ap, phase_p = psi(sp)
        total += elem * np.exp(log_ap - log_a) * np.exp(1j * (phase_p - phase))
    return complex(total)


_EVAL_CHUNK = 4096  # rows per wave-function call, bounds activation memory


def local_energies(
    H: PauliHamiltonian, configs: np.ndarray, log_psi_batch
) -> tuple[np.ndarray, np.ndarray]:
    """Batched local energies with one deduplicated wave-function evaluation.

    ``log_psi_batch(configs)`` must return (log_amplitudes, phases) as 1D
    arrays.  Returns (energies, valid) where invalid entries had amplitude
    underflow at the sampled configuration and must be skipped by the caller.
    """
    configs = np.asarray(configs, dtype=np.int8)
    if configs.ndim != 2 or configs.shape[1] != H.n:
        raise ShapeError(f"expected configurations of shape (B, {H.n}), got {configs.shape}")
    B = configs.shape[0]
    groups = _flip_groups(H)

    diag = np.zeros(B, dtype=np.complex128)
    offdiag: list[tuple[np.ndarray, np.ndarray]] = []  # (flipped configs, elements)
    for group in groups:
        elems = _group_elements(group, configs)
        if not group.flip_sites:
            diag += elems
            continue
        flipped = configs.copy()
        flipped[:, list(group.flip_sites)] = 1 - flipped[:, list(group.flip_sites)]
        offdiag.append((flipped, elems))

    rows = np.concatenate([configs] + [f for f, _ in offdiag], axis=0)
    uniq, inverse = _unique_rows(rows)
    log_a_u = np.empty(len(uniq))
    phase_u = np.empty(len(uniq))
    for start in range(0, len(uniq), _EVAL_CHUNK):
        la, ph = log_psi_batch(uniq[start : start + _EVAL_CHUNK])
        log_a_u[start : start + _EVAL_CHUNK] = np.asarray(la)
        phase_u[start : start + _EVAL_CHUNK] = np.asarray(ph)
    log_a = log_a_u[inverse].reshape(len(offdiag) + 1, B)
    phase = phase_u[inverse].reshape(len(offdiag) + 1, B)

    valid = log_a[0] > 0.5 * LOG_PROB_FLOOR
    energies = diag.copy()
    for k, (_, elems) in enumerate(offdiag):
        ratio = np.exp(log_a[k + 1] - log_a[0]) * np.exp(1j * (phase[k + 1] - phase[0]))
        energies += elems * ratio
    energies[~valid] = np.nan
    return energies, valid


def pack_rows(configs: np.ndarray) -> np.ndarray:
    """Pack (B, n) binary rows into fixed-width byte keys, s_1 most significant."""
    packed = np.packbits(np.ascontiguousarray(configs, dtype=np.uint8), axis=1)
    width = packed.shape[1]
    return np.ascontiguousarray(packed).view(f"S{width}").reshape(-1)


def _unique_rows(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    keys = pack_rows(rows)
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    return rows[first], inverse


def sample_couplings(family: HamiltonianFamily, rng: np.random.Generator) -> CouplingVector:
    """Draw (n, J) from the family prior: n uniform over the size set, each
    parameter independently uniform over its interval.

    Draw order is fixed (size first, then parameters in declared order) so a
    seeded generator yields a reproducible sequence.
    """
    if not family.sizes:
        raise ConfigError("family size set is empty")
    n = int(family.sizes[int(rng.integers(len(family.sizes)))])
    params = []
    for name in family.param_names:
        lo, hi = family.prior[name]
        params.append((name, float(lo) if lo == hi else float(rng.uniform(lo, hi))))
    return CouplingVector(n=n, params=tuple(params))


def dense_matrix(H: PauliHamiltonian) -> np.ndarray:
    """Assemble the full 2^n x 2^n matrix row by row from connected_configs.

    Index convention: configuration s maps to the integer with s_1 as the most
    significant bit.  Intended for n <= 12.
    """
    if H.n > 12:
        raise InvalidSizeError("dense assembly is limited to n <= 12")
    dim = 2**H.n
    M = np.zeros((dim, dim), dtype=np.complex128)
    for idx in range(dim):
        s = index_to_config(idx, H.n)
        for sp, elem in connected_configs(H, s):
            M[idx, config_to_index(sp)] = elem
    return M


def config_to_index(s: np.ndarray) -> int:
    """Binary value of the configuration with s_1 most significant."""
    idx = 0
    for v in s:
        idx = (idx << 1) | int(v)
    return idx


def index_to_config(idx: int, n: int) -> np.ndarray:
    return np.array([(idx >> (n - 1 - i)) & 1 for i in range(n)], dtype=np.int8)


def all_configs(n: int) -> np.ndarray:
    """All 2^n configurations in index order, shape (2^n, n)."""
    idx = np.arange(2**n, dtype=np.int64)
    return ((idx[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1).astype(np.int8)
