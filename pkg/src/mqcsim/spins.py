"""Spin-1/2 systems, basis encoding, and matrix-free collective operators.

Basis convention (shared by every module): a basis state is an integer
``b`` in ``[0, 2**n_spins)``; bit ``i`` set means spin ``i`` points up
(``m_i = +1/2``), so spin 0 lives in the least significant bit. The
magnetization of a state is ``popcount(b) - n_spins/2`` and the coherence
order of a density-matrix element ``(r, c)`` is ``m(r) - m(c)``.

Couplings are angular frequencies (rad/s), times are seconds; every phase
accumulated downstream is the dimensionless product ``d * t``.

The two Hamiltonians built here are the secular dipolar interaction

    Hzz = sum_{i<j} d_ij (2 Iz_i Iz_j - Ix_i Ix_j - Iy_i Iy_j)

(equivalently ``3 Iz Iz - I.I``) and the double-quantum interaction

    Hdq = -1/2 sum_{i<j} d_ij (I+_i I+_j + I-_i I-_j)

which flips pairs of equally oriented spins and changes the coherence
order by +-2. Both are applied matrix-free through bit arithmetic; no
2**N x 2**N operator is materialized by :func:`apply_operator`.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

import numpy as np

from .errors import CapExceeded, DimensionMismatch, InvalidGeometry

DEFAULT_MAX_SPINS = 14


class OperatorKind(str, Enum):
    """Collective operators available to :func:`apply_operator`.

    ``HDQ_PHASE`` is the phase-rotated double-quantum Hamiltonian
    ``exp(-i*phi*Iz) Hdq exp(+i*phi*Iz)``; the angle is passed separately
    as the ``phi`` argument of the operator routines.
    """

    IZ_TOTAL = "iz"
    IX_TOTAL = "ix"
    IY_TOTAL = "iy"
    HZZ = "zz"
    HDQ = "dq"
    HDQ_PHASE = "dq_phase"


@dataclass(frozen=True)
class AllToAll:
    """Uniform coupling d0 between every pair."""

    d0: float


@dataclass(frozen=True)
class Chain:
    """1D chain with power-law couplings d0 / |i-j|**exponent."""

    d0: float
    exponent: float = 3.0


@dataclass(frozen=True)
class Lattice3D:
    """Simple cubic lattice with dipolar couplings d0 / r**3.

    ``r`` is the integer lattice (L1) distance between sites and pairs
    beyond ``cutoff`` are dropped. Sites fill ``shape`` in lexicographic
    order; ``n_spins`` may not exceed the number of sites. True FCC
    geometries go through :class:`ExplicitCouplings`.
    """

    d0: float
    cutoff: float
    shape: tuple[int, int, int] = (2, 2, 2)


@dataclass(frozen=True)
class ExplicitCouplings:
    """Caller-supplied symmetric coupling matrix (rad/s)."""

    couplings: np.ndarray


Geometry = Union[AllToAll, Chain, Lattice3D, ExplicitCouplings]


def magnetization_values(n_spins: int) -> np.ndarray:
    """Total magnetization m(b) = popcount(b) - N/2 for every basis state."""
    idx = np.arange(1 << n_spins, dtype=np.uint64)
    return np.bitwise_count(idx).astype(np.float64) - n_spins / 2.0


def coherence_order(r: int, c: int) -> int:
    """Coherence order m(r) - m(c) of the density-matrix element (r, c)."""
    return int(r).bit_count() - int(c).bit_count()


@dataclass
class SpinSystem:
    """N coupled spins 1/2; read-only after construction.

    ``couplings`` must be symmetric with an exactly zero diagonal. Derived
    lookup tables (magnetization per state, pair list, Hzz diagonal) are
    prepared once here and shared by all operator applications, which are
    pure reads and safe for concurrent use.
    """

    n_spins: int
    couplings: np.ndarray
    geometry: Geometry | None = None

    # derived, filled in __post_init__
    _pair_i: np.ndarray = field(init=False, repr=False)
    _pair_j: np.ndarray = field(init=False, repr=False)
    _pair_d: np.ndarray = field(init=False, repr=False)
    _mz: np.ndarray = field(init=False, repr=False)
    _diag_zz: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.couplings = np.asarray(self.couplings, dtype=np.float64)
        n = self.n_spins
        if self.couplings.shape != (n, n):
            raise DimensionMismatch(
                f"coupling matrix shape {self.couplings.shape} != ({n}, {n})"
            )
        if not np.allclose(self.couplings, self.couplings.T, atol=0.0):
            raise InvalidGeometry("coupling matrix must be symmetric")
        if np.any(np.diag(self.couplings) != 0.0):
            raise InvalidGeometry("coupling matrix diagonal must be exactly zero")
        iu, ju = np.triu_indices(n, k=1)
        keep = self.couplings[iu, ju] != 0.0
        self._pair_i = iu[keep]
        self._pair_j = ju[keep]
        self._pair_d = self.couplings[iu, ju][keep]
        self._mz = magnetization_values(n)
        # diagonal of Hzz: (1/2) sum_{i<j} d_ij s_i s_j with s = +-1
        idx = np.arange(self.dim)
        bits = ((idx[:, None] >> np.arange(n)) & 1).astype(np.int8)
        s = 2.0 * bits - 1.0
        self._diag_zz = 0.5 * np.einsum("ai,ij,aj->a", s, self.couplings, s) / 2.0

    @property
    def dim(self) -> int:
        return 1 << self.n_spins

    @property
    def magnetization(self) -> np.ndarray:
        """m per basis state, shape (2**N,)."""
        return self._mz

    def iz_norm(self) -> float:
        """Tr{Iz^2} = N * 2**(N-2), the deviation-density normalization."""
        return self.n_spins * (1 << (self.n_spins - 2))


def _lattice_sites(shape: tuple[int, int, int]) -> list[tuple[int, int, int]]:
    return list(itertools.product(*(range(s) for s in shape)))


def build_system(
    geometry: Geometry, n_spins: int, *, max_spins: int = DEFAULT_MAX_SPINS
) -> SpinSystem:
    """Construct a :class:`SpinSystem` with a populated coupling matrix.

    Raises :class:`CapExceeded` when ``n_spins`` exceeds ``max_spins``
    (2**N state vectors would blow the memory budget) and
    :class:`InvalidGeometry` for non-positive geometry parameters.
    """
    if n_spins > max_spins:
        raise CapExceeded(
            f"n_spins={n_spins} exceeds cap {max_spins} "
            f"(2**{n_spins} amplitudes per state vector)"
        )
    if n_spins < 2:
        raise InvalidGeometry("need at least 2 spins")

    d = np.zeros((n_spins, n_spins))
    if isinstance(geometry, AllToAll):
        if geometry.d0 <= 0:
            raise InvalidGeometry("d0 must be positive")
        d[:] = geometry.d0
        np.fill_diagonal(d, 0.0)
    elif isinstance(geometry, Chain):
        if geometry.d0 <= 0:
            raise InvalidGeometry("d0 must be positive")
        for i in range(n_spins):
            for j in range(i + 1, n_spins):
                d[i, j] = d[j, i] = geometry.d0 / abs(i - j) ** geometry.exponent
    elif isinstance(geometry, Lattice3D):
        if geometry.d0 <= 0 or geometry.cutoff <= 0:
            raise InvalidGeometry("d0 and cutoff must be positive")
        sites = _lattice_sites(geometry.shape)
        if n_spins > len(sites):
            raise InvalidGeometry(
                f"n_spins={n_spins} exceeds {len(sites)} sites of shape {geometry.shape}"
            )
        for a in range(n_spins):
            for b in range(a + 1, n_spins):
                r = sum(abs(x - y) for x, y in zip(sites[a], sites[b]))
                if r <= geometry.cutoff:
                    d[a, b] = d[b, a] = geometry.d0 / r**3
    elif isinstance(geometry, ExplicitCouplings):
        mat = np.asarray(geometry.couplings, dtype=np.float64)
        if mat.shape != (n_spins, n_spins):
            raise InvalidGeometry(
                f"explicit coupling matrix shape {mat.shape} != ({n_spins}, {n_spins})"
            )
        d = mat.copy()
    else:
        raise InvalidGeometry(f"unknown geometry {geometry!r}")

    return SpinSystem(n_spins=n_spins, couplings=d, geometry=geometry)


def _check_state(system: SpinSystem, state: np.ndarray) -> np.ndarray:
    state = np.asarray(state)
    if state.shape[0] != system.dim:
        raise DimensionMismatch(
            f"state length {state.shape[0]} != 2**{system.n_spins}"
        )
    return state.astype(np.complex128, copy=False)


def apply_operator(
    kind: OperatorKind,
    system: SpinSystem,
    state: np.ndarray,
    phi: float = 0.0,
) -> np.ndarray:
    """Apply a collective operator to one state vector or a stack of columns.

    ``state`` has shape ``(2**N,)`` or ``(2**N, k)``; the result has the
    same shape. Everything is done with bit masks and gathers, cost
    O(pairs * 2**N) per call. ``phi`` is only used for ``HDQ_PHASE``.
    """
    state = _check_state(system, state)
    n = system.n_spins
    dim = system.dim
    idx = np.arange(dim)
    mz = system._mz
    col = (slice(None),) + (None,) * (state.ndim - 1)

    if kind == OperatorKind.IZ_TOTAL:
        return mz[col] * state

    if kind in (OperatorKind.IX_TOTAL, OperatorKind.IY_TOTAL):
        out = np.zeros_like(state)
        for i in range(n):
            flipped = idx ^ (1 << i)
            if kind == OperatorKind.IX_TOTAL:
                out += 0.5 * state[flipped]
            else:
                # <x|Iy|x^e_i> = -i/2 when bit i of x is set (raising), +i/2 otherwise
                bit = (idx >> i) & 1
                coeff = np.where(bit == 1, -0.5j, 0.5j)
                out += coeff[col] * state[flipped]
        return out

    if kind == OperatorKind.HZZ:
        out = system._diag_zz[col] * state
        for i, j, d in zip(system._pair_i, system._pair_j, system._pair_d):
            mask = (1 << int(i)) | (1 << int(j))
            anti = ((idx >> int(i)) & 1) != ((idx >> int(j)) & 1)
            sel = idx[anti]
            out[sel] += (-0.5 * d) * state[sel ^ mask]
        return out

    if kind == OperatorKind.HDQ:
        out = np.zeros_like(state)
        for i, j, d in zip(system._pair_i, system._pair_j, system._pair_d):
            mask = (1 << int(i)) | (1 << int(j))
            aligned = ((idx >> int(i)) & 1) == ((idx >> int(j)) & 1)
            sel = idx[aligned]
            out[sel] += (-0.5 * d) * state[sel ^ mask]
        return out

    if kind == OperatorKind.HDQ_PHASE:
        # exp(-i*phi*Iz) Hdq exp(+i*phi*Iz): phase in, apply, phase out
        ph = np.exp(1j * phi * mz)
        tmp = apply_operator(OperatorKind.HDQ, system, ph[col] * state)
        return np.conj(ph)[col] * tmp

    raise ValueError(f"unknown operator kind {kind!r}")


# --- JSON serialization -------------------------------------------------

_GEOMETRY_KINDS = {
    "all_to_all": AllToAll,
    "chain": Chain,
    "lattice3d": Lattice3D,
    "explicit": ExplicitCouplings,
}


def geometry_to_dict(geometry: Geometry) -> dict:
    if isinstance(geometry, AllToAll):
        return {"kind": "all_to_all", "d0": geometry.d0}
    if isinstance(geometry, Chain):
        return {"kind": "chain", "d0": geometry.d0, "exponent": geometry.exponent}
    if isinstance(geometry, Lattice3D):
        return {
            "kind": "lattice3d",
            "d0": geometry.d0,
            "cutoff": geometry.cutoff,
            "shape": list(geometry.shape),
        }
    if isinstance(geometry, ExplicitCouplings):
        return {"kind": "explicit"}
    raise InvalidGeometry(f"unknown geometry {geometry!r}")


def geometry_from_dict(doc: dict) -> Geometry:
    kind = doc.get("kind")
    if kind == "all_to_all":
        return AllToAll(d0=float(doc["d0"]))
    if kind == "chain":
        return Chain(d0=float(doc["d0"]), exponent=float(doc.get("exponent", 3.0)))
    if kind == "lattice3d":
        return Lattice3D(
            d0=float(doc["d0"]),
            cutoff=float(doc["cutoff"]),
            shape=tuple(doc.get("shape", (2, 2, 2))),
        )
    if kind == "explicit":
        return ExplicitCouplings(couplings=np.asarray(doc["couplings"], dtype=float))
    raise InvalidGeometry(f"unknown geometry kind {kind!r}")


def system_to_json(system: SpinSystem) -> str:
    """Serialize to the documented {n_spins, geometry, couplings?} document."""
    doc: dict = {"n_spins": system.n_spins}
    if system.geometry is not None and not isinstance(
        system.geometry, ExplicitCouplings
    ):
        doc["geometry"] = geometry_to_dict(system.geometry)
    else:
        doc["geometry"] = {"kind": "explicit"}
        doc["couplings"] = system.couplings.tolist()
    return json.dumps(doc, indent=2, sort_keys=True)


def system_from_json(text: str, *, max_spins: int = DEFAULT_MAX_SPINS) -> SpinSystem:
    doc = json.loads(text)
    n_spins = int(doc["n_spins"])
    geo = dict(doc.get("geometry", {}))
    if "couplings" in doc:
        geo["couplings"] = doc["couplings"]
    return build_system(geometry_from_dict(geo), n_spins, max_spins=max_spins)
