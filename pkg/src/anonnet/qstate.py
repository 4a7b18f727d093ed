"""Sparse complex-amplitude quantum state over named 4-dimensional registers.

Registers hold one of four basis symbols encoded on two qubits:
``|0'> = |00>``, ``|1'> = |01>``, ``|e> = |10>`` (empty), ``|x> = |11>``
(cross).  The state is kept as a product of independent factors, each a
sparse map from basis tuples to complex amplitudes; registers of different
factors never interacted.  All public operations preserve the norm within
1e-9 and prune amplitudes with magnitude <= 1e-12.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass
from typing import Any, NamedTuple, Sequence

import numpy as np

from .errors import CapacityError, PreconditionError, ValidationError

# Basis symbols, fixed to the two-bit encoding above (int value = 2*b1 + b0).
ZERO, ONE, EMPTY, CROSS = 0, 1, 2, 3
SYMBOLS = (ZERO, ONE, EMPTY, CROSS)
SYMBOL_CHARS = "01ex"

# Extra classical sentinel used by protocols for "no outcome"; it is a
# three-bit value and never appears inside a quantum register.
SENTINEL = 4

NORM_ATOL = 1e-9
PRUNE_EPS = 1e-12

_SQ2 = 1.0 / math.sqrt(2.0)

COMPUTATIONAL_BASIS = np.eye(4, dtype=complex)

# {|+'>, |-'>, |e>, |x>} with |+-'> = (|0'> +- |1'>)/sqrt(2).
HADAMARD_PM_BASIS = np.array(
    [
        [_SQ2, _SQ2, 0, 0],
        [_SQ2, -_SQ2, 0, 0],
        [0, 0, 1, 0],
        [0, 0, 0, 1],
    ],
    dtype=complex,
)
PLUS, MINUS = 0, 1  # outcome indices in HADAMARD_PM_BASIS


class RegisterId(NamedTuple):
    """Identity of one 4-dimensional register.

    ``owner`` is the index of the creating party (bookkeeping only; current
    ownership is tracked by the runtime), ``tag`` a role label, ``epoch`` the
    round/step of creation and ``slot`` a port or sequence index.
    """

    owner: int
    tag: str
    epoch: int
    slot: int

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"R({self.owner}:{self.tag}@{self.epoch}#{self.slot})"


# keyed by id of the passed object, which is pinned alongside the validated
# array so the id can never be recycled
_CHECKED: dict[int, tuple[Any, np.ndarray]] = {}


def check_unitary(U: np.ndarray) -> np.ndarray:
    cached = _CHECKED.get(id(U))
    if cached is not None:
        return cached[1]
    M = np.asarray(U, dtype=complex)
    if M.shape != (4, 4):
        raise ValidationError(f"expected a 4x4 matrix, got shape {M.shape}")
    if not np.allclose(M @ M.conj().T, np.eye(4), atol=NORM_ATOL):
        raise ValidationError("matrix is not unitary within 1e-9")
    _CHECKED[id(U)] = (U, M)
    return M


def check_basis(basis: np.ndarray) -> np.ndarray:
    cached = _CHECKED.get(id(basis))
    if cached is not None:
        return cached[1]
    B = np.asarray(basis, dtype=complex)
    if B.shape != (4, 4):
        raise ValidationError(f"basis must be 4 vectors of dimension 4, got {B.shape}")
    if not np.allclose(B @ B.conj().T, np.eye(4), atol=NORM_ATOL):
        raise ValidationError("basis vectors are not orthonormal within 1e-9")
    _CHECKED[id(basis)] = (basis, B)
    return B


def _quant(v: float) -> int:
    """Quantize to 1e-9 steps for hash keys (cheaper than round())."""
    return int(v * 1e9)


def _phase_normalize(amps: dict[tuple[int, ...], complex]) -> None:
    """Divide out the global phase so the lexicographically first term is
    positive real (in place)."""
    if not amps:
        return
    lead = amps[min(amps)]
    mag = abs(lead)
    if mag <= PRUNE_EPS:
        return
    phase = lead / mag
    if abs(phase - 1.0) < 1e-15:
        return
    for k in list(amps):
        amps[k] = amps[k] / phase


class _Factor:
    """One independent tensor factor: an ordered register tuple plus a sparse
    amplitude map over basis tuples.

    Factors are treated as immutable by the state: every operation builds a
    replacement object, so states can share factors after a shallow copy."""

    __slots__ = ("regs", "pos", "amps")

    def __init__(self, regs: tuple[RegisterId, ...], amps: dict[tuple[int, ...], complex]):
        self.regs = regs
        self.pos = {r: i for i, r in enumerate(regs)}
        self.amps = amps

    def copy(self) -> "_Factor":
        return _Factor(self.regs, dict(self.amps))

    def norm2(self) -> float:
        return sum((a.real * a.real + a.imag * a.imag) for a in self.amps.values())

    def prune(self) -> None:
        dead = [k for k, a in self.amps.items() if abs(a) <= PRUNE_EPS]
        for k in dead:
            del self.amps[k]

    def tensor(self, other: "_Factor") -> "_Factor":
        regs = self.regs + other.regs
        amps: dict[tuple[int, ...], complex] = {}
        for k1, a1 in self.amps.items():
            for k2, a2 in other.amps.items():
                amps[k1 + k2] = a1 * a2
        return _Factor(regs, amps)

    def canonical(self) -> tuple:
        """Order- and phase-insensitive snapshot for config merging."""
        order = sorted(range(len(self.regs)), key=lambda i: self.regs[i])
        regs = tuple(self.regs[i] for i in order)
        items = sorted(
            (tuple(k[i] for i in order), a) for k, a in self.amps.items()
        )
        if items:
            lead = items[0][1]
            mag = abs(lead)
            phase = lead / mag if mag > PRUNE_EPS else 1.0
        else:
            phase = 1.0
        return (
            regs,
            tuple(
                (k, _quant((a / phase).real), _quant((a / phase).imag))
                for k, a in items
            ),
        )


@dataclass
class BranchOutcome:
    """One leaf of a measurement-outcome tree with its exact probability."""

    outcomes: tuple[tuple[RegisterId, int], ...]
    probability: float
    state: "SparseQuantumState"


class SparseQuantumState:
    """Product-factored sparse state over named 4-dimensional registers."""

    def __init__(self) -> None:
        self._factors: dict[int, _Factor] = {}
        self._loc: dict[RegisterId, int] = {}
        self._next_fid = 0
        self._reg_order: dict[RegisterId, None] = {}

    # -- bookkeeping ------------------------------------------------------

    @property
    def registers(self) -> tuple[RegisterId, ...]:
        return tuple(self._reg_order)

    def __contains__(self, reg: RegisterId) -> bool:
        return reg in self._loc

    def copy(self) -> "SparseQuantumState":
        s = SparseQuantumState()
        s._factors = dict(self._factors)  # factors are shared immutably
        s._loc = dict(self._loc)
        s._next_fid = self._next_fid
        s._reg_order = dict(self._reg_order)
        return s

    def support_size(self) -> int:
        n = 1
        for f in self._factors.values():
            n *= len(f.amps)
        return n

    def norm2(self) -> float:
        n = 1.0
        for f in self._factors.values():
            n *= f.norm2()
        return n

    def _check_norm(self) -> None:
        if abs(self.norm2() - 1.0) > NORM_ATOL:
            raise ValidationError(f"state norm drifted: |psi|^2 = {self.norm2()!r}")

    def _factor_of(self, regs: Sequence[RegisterId]) -> _Factor:
        """Return the single factor containing all of ``regs``, merging
        factors if the operation spans several."""
        fids: list[int] = []
        for r in regs:
            if r not in self._loc:
                raise ValidationError(f"unknown register {r}")
            fid = self._loc[r]
            if fid not in fids:
                fids.append(fid)
        fids.sort()
        base = self._factors[fids[0]]
        for fid in fids[1:]:
            other = self._factors.pop(fid)
            base = base.tensor(other)
            self._factors[fids[0]] = base
            for r in other.regs:
                self._loc[r] = fids[0]
        return self._factors[fids[0]]

    # -- public operations -------------------------------------------------

    def init_register(self, rid: RegisterId, symbol: int = EMPTY) -> RegisterId:
        """Extend the state by a fresh register in a basis state."""
        if rid in self._loc:
            raise ValidationError(f"register {rid} already exists")
        if symbol not in SYMBOLS:
            raise ValidationError(f"bad basis symbol {symbol}")
        fid = self._next_fid
        self._next_fid += 1
        self._factors[fid] = _Factor((rid,), {(symbol,): 1.0 + 0.0j})
        self._loc[rid] = fid
        self._reg_order[rid] = None
        return rid

    def apply_local_unitary(self, reg: RegisterId, U: np.ndarray) -> None:
        U = check_unitary(U)
        f = self._factor_of([reg])
        i = f.pos[reg]
        cols: list[list[tuple[int, complex]]] = [
            [(t, complex(U[t, s])) for t in SYMBOLS if abs(U[t, s]) > PRUNE_EPS]
            for s in SYMBOLS
        ]
        amps: dict[tuple[int, ...], complex] = {}
        for key in sorted(f.amps):
            a = f.amps[key]
            for t, u in cols[key[i]]:
                nk = key[:i] + (t,) + key[i + 1 :]
                amps[nk] = amps.get(nk, 0.0) + a * u
        f2 = _Factor(f.regs, amps)
        f2.prune()
        self._factors[self._loc[reg]] = f2
        self._check_norm()

    def apply_reversible_map(
        self,
        regs: Sequence[RegisterId],
        mapping: dict[tuple[int, ...], tuple[int, ...]],
    ) -> None:
        """Permute basis tuples of ``regs`` by a declared bijection."""
        k = len(regs)
        if id(mapping) not in _CHECKED:
            if len(mapping) != 4**k or len(set(mapping.values())) != 4**k:
                raise ValidationError("map is not a bijection on the product basis")
            _CHECKED[id(mapping)] = (mapping, None)
        f = self._factor_of(regs)
        idx = [f.pos[r] for r in regs]
        before = len(f.amps)
        amps: dict[tuple[int, ...], complex] = {}
        for key, a in f.amps.items():
            img = mapping[tuple(key[i] for i in idx)]
            nk = list(key)
            for i, v in zip(idx, img):
                nk[i] = v
            amps[tuple(nk)] = a
        assert len(amps) == before, "permutation changed support size"
        self._factors[self._loc[regs[0]]] = _Factor(f.regs, amps)

    def branch_probs(
        self, reg: RegisterId, basis: np.ndarray
    ) -> list[tuple[int, float]]:
        """Born probabilities of the four outcomes; entries <= 1e-12 omitted."""
        B = check_basis(basis)
        f = self._factors[self._loc[reg]]
        i = f.pos[reg]
        probs = []
        for k in SYMBOLS:
            bra = B[k].conj()
            acc: dict[tuple[int, ...], complex] = {}
            for key, a in f.amps.items():
                c = bra[key[i]]
                if c == 0:
                    continue
                rest = key[:i] + key[i + 1 :]
                acc[rest] = acc.get(rest, 0.0) + a * c
            p = sum((v.real * v.real + v.imag * v.imag) for v in acc.values())
            if p > PRUNE_EPS:
                probs.append((k, p))
        return probs

    def collapse(self, reg: RegisterId, basis: np.ndarray, outcome: int) -> None:
        """Project ``reg`` onto basis vector ``outcome`` and renormalize with a
        nonnegative-real leading amplitude."""
        B = check_basis(basis)
        f = self._factor_of([reg])
        i = f.pos[reg]
        bra = B[outcome].conj()
        acc: dict[tuple[int, ...], complex] = {}
        for key in sorted(f.amps):
            a = f.amps[key]
            c = bra[key[i]]
            if c == 0:
                continue
            rest = key[:i] + key[i + 1 :]
            acc[rest] = acc.get(rest, 0.0) + a * c
        p = sum(abs(v) ** 2 for v in acc.values())
        if p <= PRUNE_EPS:
            raise ValidationError("collapse onto a zero-probability outcome")
        scale = 1.0 / math.sqrt(p)
        ket = B[outcome]
        amps: dict[tuple[int, ...], complex] = {}
        for rest, v in acc.items():
            if abs(v) <= PRUNE_EPS:
                continue
            for s in SYMBOLS:
                if abs(ket[s]) <= PRUNE_EPS:
                    continue
                nk = rest[:i] + (s,) + rest[i:]
                amps[nk] = v * ket[s] * scale
        _phase_normalize(amps)
        f2 = _Factor(f.regs, amps)
        f2.prune()
        self._factors[self._loc[reg]] = f2

    def measure(self, reg: RegisterId, basis: np.ndarray, rng) -> int:
        """Sample one outcome with Born probability; collapse in place."""
        probs = self.branch_probs(reg, basis)
        if not probs:
            raise ValidationError("state has no support on the measured register")
        u = rng.random() * sum(p for _, p in probs)
        acc = 0.0
        outcome = probs[-1][0]
        for k, p in probs:
            acc += p
            if u < acc:
                outcome = k
                break
        self.collapse(reg, basis, outcome)
        return outcome

    def measure_branches(
        self,
        regs: Sequence[RegisterId],
        bases: Sequence[np.ndarray],
        cap: int = 65536,
    ) -> list[BranchOutcome]:
        """All outcome combinations with probability > 1e-12, each with its
        exact collapsed state."""
        if len(regs) != len(bases):
            raise ValidationError("need one basis per measured register")
        branches = [BranchOutcome((), 1.0, self.copy())]
        for reg, basis in zip(regs, bases):
            nxt: list[BranchOutcome] = []
            for br in branches:
                for k, p in br.state.branch_probs(reg, basis):
                    s = br.state.copy()
                    s.collapse(reg, basis, k)
                    nxt.append(
                        BranchOutcome(br.outcomes + ((reg, k),), br.probability * p, s)
                    )
                if len(nxt) > cap:
                    raise CapacityError(f"branch count exceeded cap {cap}")
            branches = nxt
        return branches

    def discard(self, reg: RegisterId) -> None:
        """Remove a register that is in product form with the rest of its
        factor (e.g. just measured)."""
        fid = self._loc[reg]
        f = self._factors[fid]
        if len(f.regs) == 1:
            n = f.norm2()
            if abs(n - 1.0) > NORM_ATOL:
                raise ValidationError("discarding register of non-normalized factor")
            del self._factors[fid]
            del self._loc[reg]
            del self._reg_order[reg]
            return
        i = f.pos[reg]
        comp: dict[tuple[int, ...], dict[int, complex]] = {}
        for key, a in f.amps.items():
            rest = key[:i] + key[i + 1 :]
            comp.setdefault(rest, {})[key[i]] = a
        best = max(comp, key=lambda r: sum(abs(v) ** 2 for v in comp[r].values()))
        wnorm = math.sqrt(sum(abs(v) ** 2 for v in comp[best].values()))
        v = {s: comp[best].get(s, 0.0) / wnorm for s in SYMBOLS}
        amps: dict[tuple[int, ...], complex] = {}
        for rest, row in comp.items():
            coef = sum(row.get(s, 0.0) * v[s].conjugate() for s in SYMBOLS)
            for s in SYMBOLS:
                if abs(row.get(s, 0.0) - coef * v[s]) > 1e-7:
                    raise PreconditionError(
                        f"register {reg} is entangled with its factor; cannot discard"
                    )
            if abs(coef) > PRUNE_EPS:
                amps[rest] = coef
        _phase_normalize(amps)
        regs = f.regs[:i] + f.regs[i + 1 :]
        self._factors[fid] = _Factor(regs, amps)
        for r in regs:
            self._loc[r] = fid
        del self._loc[reg]
        del self._reg_order[reg]

    def vector_over(self, regs: Sequence[RegisterId]) -> dict[tuple[int, ...], complex]:
        """Pure-state amplitudes over ``regs`` (in the given order), requiring
        everything else to be in product form with them."""
        regs = list(regs)
        fids = sorted({self._loc[r] for r in regs})
        combined: _Factor | None = None
        for fid in fids:
            f = self._factors[fid]
            combined = f.copy() if combined is None else combined.tensor(f.copy())
        assert combined is not None
        inside = [combined.pos[r] for r in regs]
        outside = [j for j in range(len(combined.regs)) if j not in inside]
        comp: dict[tuple[int, ...], dict[tuple[int, ...], complex]] = {}
        for key, a in combined.amps.items():
            okey = tuple(key[j] for j in outside)
            ikey = tuple(key[j] for j in inside)
            comp.setdefault(okey, {})[ikey] = a
        best = max(comp, key=lambda o: sum(abs(v) ** 2 for v in comp[o].values()))
        wnorm = math.sqrt(sum(abs(v) ** 2 for v in comp[best].values()))
        vec = {k: v / wnorm for k, v in comp[best].items()}
        for okey, row in comp.items():
            coef = sum(row[k] * vec[k].conjugate() for k in row if k in vec)
            for k in set(row) | set(vec):
                if abs(row.get(k, 0.0) - coef * vec.get(k, 0.0)) > 1e-7:
                    raise PreconditionError(
                        "entangled residual across the requested bipartition"
                    )
        # normalize the global phase for reproducibility
        lead = vec[min(vec)]
        phase = lead / abs(lead) if abs(lead) > PRUNE_EPS else 1.0
        return {k: v / phase for k, v in vec.items() if abs(v) > PRUNE_EPS}

    def fidelity(
        self,
        reference: "SparseQuantumState | dict[tuple[int, ...], complex]",
        regs: Sequence[RegisterId],
    ) -> float:
        """Squared overlap magnitude with ``reference`` on ``regs``."""
        mine = self.vector_over(regs)
        if isinstance(reference, SparseQuantumState):
            ref = reference.vector_over(regs)
        else:
            ref = reference
        nrm = math.sqrt(sum(abs(v) ** 2 for v in ref.values()))
        if abs(nrm - 1.0) > NORM_ATOL:
            raise ValidationError("reference state is not normalized")
        ov = sum(ref[k].conjugate() * mine.get(k, 0.0) for k in ref)
        return abs(ov) ** 2

    # -- sweeps and snapshots ----------------------------------------------

    def sweep_measure(
        self,
        regs: Sequence[RegisterId],
        basis: np.ndarray,
        count_symbol: int,
    ) -> list[tuple[int, float, "SparseQuantumState"]]:
        """Measure ``regs`` one by one in ``basis``, discarding each register
        after its measurement, and fold the outcomes into a parity: the number
        of ``count_symbol`` outcomes mod 2.

        Outcome paths whose parity and post-measurement state coincide are
        merged (their probabilities add), so the result stays small even when
        the raw outcome tree is exponential.  Measure-and-discard is fused
        into one projection per register, acting only on the affected factor.
        """
        B = check_basis(basis)
        if not regs:
            return [(0, 1.0, self.copy())]
        base = self.copy()
        factor = base._factor_of(regs)
        fid = base._loc[regs[0]]
        order = factor.regs
        amps = dict(factor.amps)
        # Bulk-drop swept positions whose symbol is shared by every term and
        # maps to a single outcome with unit coefficient: their measurement
        # neither forks nor scales amplitudes.
        certain_outcome = [-1] * 4
        for s in SYMBOLS:
            hits = [k for k in SYMBOLS if abs(B[k, s]) > PRUNE_EPS]
            if len(hits) == 1 and abs(B[hits[0], s] - 1.0) <= PRUNE_EPS:
                certain_outcome[s] = hits[0]
        swept = set(regs)
        terms = list(amps)
        drop: list[int] = []
        parity0 = 0
        for i, r in enumerate(order):
            if r not in swept:
                continue
            s0 = terms[0][i]
            if certain_outcome[s0] >= 0 and all(t[i] == s0 for t in terms):
                drop.append(i)
                parity0 ^= 1 if certain_outcome[s0] == count_symbol else 0
        if drop:
            dropset = set(drop)
            keep = [i for i in range(len(order)) if i not in dropset]
            order = tuple(order[i] for i in keep)
            amps = {tuple(t[i] for i in keep): a for t, a in amps.items()}
            regs = [r for r in regs if r in set(order)]
        # (parity, prob, ordered remaining regs, amplitude map)
        work: list[tuple[int, float, tuple[RegisterId, ...], dict]] = [
            (parity0, 1.0, order, amps)
        ]
        bras = [B[k].conj() for k in SYMBOLS]
        for reg in regs:
            nxt: dict[tuple, list] = {}
            for parity, prob, order, amps in work:
                i = order.index(reg)
                rest_order = order[:i] + order[i + 1 :]
                for k in SYMBOLS:
                    bra = bras[k]
                    acc: dict[tuple[int, ...], complex] = {}
                    for key, a in amps.items():
                        c = bra[key[i]]
                        if c == 0:
                            continue
                        rest = key[:i] + key[i + 1 :]
                        acc[rest] = acc.get(rest, 0.0) + a * c
                    p = sum(
                        (v.real * v.real + v.imag * v.imag) for v in acc.values()
                    )
                    if p <= PRUNE_EPS:
                        continue
                    scale = 1.0 / math.sqrt(p)
                    acc = {
                        kk: v * scale for kk, v in acc.items() if abs(v) > PRUNE_EPS
                    }
                    _phase_normalize(acc)
                    par2 = parity ^ (1 if k == count_symbol else 0)
                    snap = (
                        par2,
                        tuple(
                            sorted(
                                (kk, _quant(v.real), _quant(v.imag))
                                for kk, v in acc.items()
                            )
                        ),
                    )
                    hit = nxt.get(snap)
                    if hit is not None:
                        hit[1] += prob * p
                    else:
                        nxt[snap] = [par2, prob * p, rest_order, acc]
            work = [tuple(nxt[k]) for k in sorted(nxt)]
        out: list[tuple[int, float, SparseQuantumState]] = []
        for parity, prob, order, amps in work:
            st = base.copy()
            st._factors[fid] = _Factor(order, dict(amps))
            for r in order:
                st._loc[r] = fid
            for r in regs:
                del st._loc[r]
                del st._reg_order[r]
            if not order:
                del st._factors[fid]
            out.append((parity, prob, st))
        return out

    def canonical_key(self) -> tuple:
        return tuple(sorted(f.canonical() for f in self._factors.values()))

    def dump_json(self) -> str:
        """Debug dump: JSON list of (basis string, re, im), sorted
        lexicographically, over all registers in creation order."""
        combined: _Factor | None = None
        for fid in sorted(self._factors):
            f = self._factors[fid]
            combined = f.copy() if combined is None else combined.tensor(f.copy())
        rows = []
        if combined is not None:
            order = [combined.pos[r] for r in self._reg_order]
            for key, a in combined.amps.items():
                s = "".join(SYMBOL_CHARS[key[i]] for i in order)
                rows.append((s, round(a.real, 12), round(a.imag, 12)))
        rows.sort()
        return json.dumps(rows)


def ghz_vector(k: int) -> dict[tuple[int, ...], complex]:
    """Amplitudes of (|0'...0'> + |1'...1'>)/sqrt(2) over k registers."""
    return {(ZERO,) * k: complex(_SQ2), (ONE,) * k: complex(_SQ2)}


def plus_vector() -> dict[tuple[int, ...], complex]:
    return {(ZERO,): complex(_SQ2), (ONE,): complex(_SQ2)}
