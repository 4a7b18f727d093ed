"""Quantum round programs: the reversible consistency flood, GHZ scale-down,
the symmetry-breaking unitaries W_h, the guided verifier lane Q_{h,m}, the
solitude verifier QSV and its derivatives (QSV', ZQLE, QSYM).

Encoding conventions (fixed throughout): register symbols 0',1',e,x are the
two-qubit states |00>,|01>,|10>,|11>; the consistent/inconsistent flag is the
symbol 0'/1' of a flag register; a party with no measurement outcome reports
the three-bit sentinel value 4.
"""

from __future__ import annotations

import cmath
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Mapping

import numpy as np

from .errors import ConstructionError, PreconditionError, ValidationError
from .qstate import (
    COMPUTATIONAL_BASIS,
    CROSS,
    EMPTY,
    HADAMARD_PM_BASIS,
    MINUS,
    ONE,
    SENTINEL,
    SYMBOLS,
    ZERO,
    RegisterId,
    check_unitary,
)
from .runtime import Message, PartyContext, RoundProgram, Step
from .viewtree import attach, hamming_guess, leaf


def round_budget(upper: int) -> int:
    """Fixed padded round count R(N) of one Q_{h,m} lane: N+1 rounds of the
    reversible flood, then view exchanges up to depth 2N-1, then two N-round
    agreement checks, with local work folded into the boundary rounds."""
    return 5 * upper + 1


# -- reversible set-union plumbing --------------------------------------------

_MASK = {ZERO: 0b01, ONE: 0b10, EMPTY: 0b00, CROSS: 0b11}
_SYM = {v: k for k, v in _MASK.items()}


def union_symbols(syms: Iterable[int]) -> int:
    m = 0
    for s in syms:
        m |= _MASK[s]
    return _SYM[m]


def union_write_map(sources: int) -> dict[tuple[int, ...], tuple[int, ...]]:
    """Permutation on (sources..., target): the target swaps e with the union
    of the source symbols.  Applied to a fresh e target this writes the union;
    per source tuple it is a transposition or the identity, hence bijective."""
    mapping: dict[tuple[int, ...], tuple[int, ...]] = {}
    for key in itertools.product(SYMBOLS, repeat=sources + 1):
        srcs, t = key[:-1], key[-1]
        u = union_symbols(srcs)
        if t == EMPTY:
            t2 = u
        elif t == u:
            t2 = EMPTY
        else:
            t2 = t
        mapping[key] = srcs + (t2,)
    return mapping


def predicate_write_map() -> dict[tuple[int, ...], tuple[int, ...]]:
    """Permutation on (master, flag): the flag swaps e with the consistency
    verdict of the master's union value (1' iff the master is x)."""
    mapping: dict[tuple[int, ...], tuple[int, ...]] = {}
    for m in SYMBOLS:
        verdict = ONE if m == CROSS else ZERO
        for t in SYMBOLS:
            if t == EMPTY:
                t2 = verdict
            elif t == verdict:
                t2 = EMPTY
            else:
                t2 = t
            mapping[(m, t)] = (m, t2)
    return mapping


_UW1 = union_write_map(1)
_PRED = predicate_write_map()
_UW_CACHE: dict[int, dict] = {1: _UW1}


def _union_write(sources: int) -> dict:
    if sources not in _UW_CACHE:
        _UW_CACHE[sources] = union_write_map(sources)
    return _UW_CACHE[sources]


# Hadamard on the low qubit: 0' -> (0' + 1')/sqrt(2).
_H2 = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2.0)
HADAMARD_LOW = np.kron(np.eye(2, dtype=complex), _H2)


def rotation(h: int) -> np.ndarray:
    """Phase e^{i pi/h} on |1'>, identity on the other levels."""
    return np.diag([1.0, cmath.exp(1j * math.pi / h), 1.0, 1.0]).astype(complex)


# -- the symmetry-breaking unitary W_h ----------------------------------------

_CNOT_2TO1 = np.zeros((4, 4), dtype=complex)
for _s, _t in ((0, 0), (1, 3), (2, 2), (3, 1)):  # (b1,b0) -> (b1^b0, b0)
    _CNOT_2TO1[_t, _s] = 1.0


@dataclass(frozen=True)
class WUnitary:
    """Per-party unitary wiping the all-equal outcomes off an h-party GHZ
    state: all four constant-symbol strings end up with vanishing amplitude."""

    h: int
    matrix: np.ndarray

    def constant_string_amplitudes(self) -> list[complex]:
        """Amplitude of |c>^h in W^(tensor h) applied to the h-party GHZ
        state, for each symbol c."""
        W = self.matrix
        return [
            (W[c, ZERO] ** self.h + W[c, ONE] ** self.h) / math.sqrt(2.0)
            for c in SYMBOLS
        ]


def _build_v(h: int) -> np.ndarray:
    """Odd-h construction: three h-th roots of -1 spanning more than a
    half-plane, with positive weights balancing them to zero; square-rooted
    weights fill the 0' column and phase-twisted ones the x column, the
    remaining two columns are completed orthonormally."""
    w_raw = [1.0, 2.0 * math.cos(math.pi / h), 1.0]
    total = sum(w_raw)
    weights = [w / total for w in w_raw]
    omegas = [cmath.exp(1j * math.pi / h), -1.0 + 0.0j, cmath.exp(-1j * math.pi / h)]
    if abs(sum(w * o for w, o in zip(weights, omegas))) > 1e-12:
        raise ConstructionError("phase triple does not balance")
    V = np.zeros((4, 4), dtype=complex)
    rows = (ZERO, ONE, EMPTY)
    for r, w, o in zip(rows, weights, omegas):
        V[r, ZERO] = math.sqrt(w)
        V[r, CROSS] = o * math.sqrt(w)
    fixed = [V[:, ZERO].copy(), V[:, CROSS].copy()]
    for col in (ONE, EMPTY):
        for i in range(4):
            v = np.eye(4, dtype=complex)[:, i]
            for f in fixed:
                v = v - f * (f.conj() @ v)
            nrm = np.linalg.norm(v)
            if nrm > 1e-6:
                v = v / nrm
                V[:, col] = v
                fixed.append(v)
                break
        else:  # pragma: no cover - the fixed set has rank 2
            raise ConstructionError("orthonormal completion failed")
    return V


def build_w(h: int) -> WUnitary:
    """W_h: identity for h in {0,1}; I_2 (x) U_h for even h >= 2 with
    U_h = (1/sqrt2) [[1, e^{i pi/h}], [1, -e^{i pi/h}]]; V_h . CNOT_{2->1} for
    odd h >= 3.  Construction is verified: unitarity plus the vanishing of all
    four constant-string amplitudes on the h-party GHZ state."""
    if h < 0:
        raise ValidationError("h must be >= 0")
    if h <= 1:
        W = np.eye(4, dtype=complex)
    elif h % 2 == 0:
        phase = cmath.exp(1j * math.pi / h)
        U = np.array([[1.0, phase], [1.0, -phase]], dtype=complex) / math.sqrt(2.0)
        W = np.kron(np.eye(2, dtype=complex), U)
    else:
        W = _build_v(h) @ _CNOT_2TO1
    try:
        check_unitary(W)
    except ValidationError as exc:
        raise ConstructionError(f"W_{h} failed the unitarity check: {exc}") from exc
    wu = WUnitary(h, W)
    if h >= 2:
        worst = max(abs(a) for a in wu.constant_string_amplitudes())
        if worst > 1e-9:
            raise ConstructionError(
                f"W_{h} leaves constant-string amplitude {worst:.2e} on the GHZ state"
            )
    return wu


# -- shared flood helpers -------------------------------------------------------


def _flood_prepare(ctx: PartyContext) -> None:
    """STEP 1 plus the first flood round: coin register, first master copy."""
    active = ctx.input == 1
    r = ctx.q.new("R", 0, 0, ZERO if active else EMPTY)
    if active:
        ctx.q.unitary(r, HADAMARD_LOW)
    ctx.store["R"] = r
    ctx.store["garbage"] = []
    master = ctx.q.new("m", 1, 0, EMPTY)
    ctx.q.permute((r, master), _UW1)
    ctx.store["master"] = master


def _flood_send(ctx: PartyContext, rnd: int) -> dict[int, Message]:
    out: dict[int, Message] = {}
    master = ctx.store["master"]
    for p in range(1, ctx.d_out + 1):
        copy = ctx.q.new("c", rnd, p, EMPTY)
        ctx.q.permute((master, copy), _UW1)
        out[p] = Message(regs=(copy,))
    return out


def _flood_absorb(ctx: PartyContext, inbox: dict[int, Message], rnd: int) -> None:
    st = ctx.store
    received = [inbox[p].regs[0] for p in sorted(inbox)]
    new_master = ctx.q.new("m", rnd, 0, EMPTY)
    sources = (st["master"],) + tuple(received)
    ctx.q.permute(sources + (new_master,), _union_write(len(sources)))
    st["garbage"].append(st.pop("master"))
    st["garbage"].extend(received)
    st["master"] = new_master


def _flood_flag(ctx: PartyContext, rnd: int) -> RegisterId:
    """Write the consistency verdict of the final master into a fresh flag."""
    st = ctx.store
    flag = ctx.q.new("Y", rnd, 0, EMPTY)
    ctx.q.permute((st["master"], flag), _PRED)
    st["garbage"].append(st.pop("master"))
    return flag


def _view_out(ctx: PartyContext, v) -> dict[int, Message]:
    return {p: Message(payload=(p, v)) for p in range(1, ctx.d_out + 1)}


def _view_in(label, inbox: dict[int, Message]):
    children = []
    for in_port, msg in sorted(inbox.items()):
        out_port, child = msg.payload
        children.append(((out_port, in_port), child))
    return attach(label, children)


def _set_out(ctx: PartyContext, U: frozenset) -> dict[int, Message]:
    return {p: Message(payload=U) for p in range(1, ctx.d_out + 1)}


def _set_in(U: frozenset, inbox: dict[int, Message]) -> frozenset:
    for msg in inbox.values():
        U = U | msg.payload
    return U


# -- Q_{h,m}: one guided verifier lane ------------------------------------------


class QhmProgram(RoundProgram):
    """One lane of the solitude verifier, guided by the guesses h (at the
    active count) and m (at the party count); pads itself to the budget R(N).

    Per branch, every party outputs the same verdict; the verdict equals
    "at most one active party" with certainty when (h, m) = (|x|, n), and is
    always true when at most one party is active.

    With ``prime=True`` the output becomes (verdict, r) where r is this
    party's own measurement outcome: the extra computational measurement of R
    on the inconsistent branch, or the regular one before the final agreement
    check; parties without an outcome report the sentinel.
    """

    def __init__(self, h: int, m: int, upper: int, prime: bool = False):
        if not 2 <= m <= upper:
            raise ValidationError(f"need 2 <= m <= N, got m={m}, N={upper}")
        if not 0 <= h <= m:
            raise ValidationError(f"need 0 <= h <= m, got h={h}")
        self.h = h
        self.m = m
        self.N = upper
        self.prime = prime
        self.w = build_w(h)
        self.budget = round_budget(upper)

    def _view_end(self) -> int:
        return self.N + 1 + 2 * self.m - 1

    def step(self, ctx: PartyContext, inbox: dict[int, Message]) -> Step:
        st = ctx.store
        rnd = ctx.round
        N = self.N
        active = ctx.input == 1

        if rnd == 1:
            _flood_prepare(ctx)
            return Step(outbox=_flood_send(ctx, rnd))

        if rnd <= N:
            _flood_absorb(ctx, inbox, rnd)
            return Step(outbox=_flood_send(ctx, rnd))

        if rnd == N + 1:
            _flood_absorb(ctx, inbox, rnd)
            flag = _flood_flag(ctx, rnd)
            y = ctx.q.measure(flag, COMPUTATIONAL_BASIS)
            ctx.q.discard(flag)
            if y == ONE:  # STEP 3: inconsistent, so at least two actives
                st["verdict"] = False
                if self.prime:
                    r_out = ctx.q.measure(st["R"], COMPUTATIONAL_BASIS)
                    st["r"] = r_out if active else SENTINEL
                    ctx.q.discard(st.pop("R"))
                else:
                    st["r"] = SENTINEL
                return Step()
            # scale-down (i)+(ii): Hadamard-basis sweep of the local garbage
            s_par = ctx.q.sweep_parity(
                tuple(st.pop("garbage")), HADAMARD_PM_BASIS, MINUS
            )
            st["s"] = s_par
            st["garbage"] = []
            return Step(outbox=_view_out(ctx, leaf(s_par)))

        if "verdict" in st:
            return self._idle_or_finish(ctx)

        if rnd <= self._view_end():
            # scale-down (iii): views of depth 2m-1 over the parity bits
            v = _view_in(st["s"], inbox)
            if rnd == self._view_end():
                self._chi_from(v, st)
                return Step()
            return Step(outbox=_view_out(ctx, v))

        if rnd <= 3 * N:
            return Step()  # lanes with m < N wait for the common boundary

        if rnd == 3 * N + 1:
            st["U"] = frozenset([st["chi"]])
            return Step(outbox=_set_out(ctx, st["U"]))

        if rnd <= 4 * N:
            st["U"] = _set_in(st["U"], inbox)
            return Step(outbox=_set_out(ctx, st["U"]))

        if rnd == 4 * N + 1:
            U = _set_in(st.pop("U"), inbox)
            chi: Fraction = st.pop("chi")
            if len(U) != 1 or chi.denominator != 1 or chi < 0:
                # scale-down (iv): the guess at m betrayed itself
                st["verdict"] = True
                st["r"] = SENTINEL
                return Step()
            # scale-down (v), then STEP 5 and STEP 6
            if active:
                r_reg = st["R"]
                if chi % 2 == 1 and self.h >= 1:
                    ctx.q.unitary(r_reg, rotation(self.h))
                if self.h >= 2:
                    ctx.q.unitary(r_reg, self.w.matrix)
                r_out = ctx.q.measure(r_reg, COMPUTATIONAL_BASIS)
                ctx.q.discard(st.pop("R"))
                st["r"] = r_out
            else:
                st["r"] = SENTINEL
            # STEP 7: agreement check over the active parties' outcomes
            st["U7"] = frozenset([st["r"]]) if active else frozenset()
            return Step(outbox=_set_out(ctx, st["U7"]))

        if rnd <= 5 * N:
            st["U7"] = _set_in(st["U7"], inbox)
            return Step(outbox=_set_out(ctx, st["U7"]))

        U7 = _set_in(st.pop("U7"), inbox)
        st["verdict"] = len(U7) <= 1
        return self._idle_or_finish(ctx)

    def _chi_from(self, view, st: dict) -> None:
        st["chi"] = hamming_guess(view, self.m)
        st.pop("s", None)

    def _idle_or_finish(self, ctx: PartyContext) -> Step:
        if ctx.round < self.budget:
            return Step()
        st = ctx.store
        for reg in list(st.get("garbage", ())) + ([st["R"]] if "R" in st else []):
            try:
                ctx.q.discard(reg)
            except PreconditionError:
                pass  # halted-true lanes may leave a shared entangled pair
        verdict = st["verdict"]
        out = (verdict, st.get("r", SENTINEL)) if self.prime else verdict
        ctx.store.clear()
        return Step(halt=True, output=out)


class QConsistencyProgram(RoundProgram):
    """STEPs 1-2 alone: prepare the coins, flood unions for delta rounds and
    write the per-party verdict flag; halts exposing (R, Y, garbage) register
    ids with the state kept for inspection."""

    def __init__(self, delta: int):
        if delta < 1:
            raise ValidationError("delta must be >= 1")
        self.delta = delta

    def step(self, ctx: PartyContext, inbox: dict[int, Message]) -> Step:
        rnd = ctx.round
        if rnd == 1:
            _flood_prepare(ctx)
            return Step(outbox=_flood_send(ctx, rnd))
        _flood_absorb(ctx, inbox, rnd)
        if rnd <= self.delta:
            return Step(outbox=_flood_send(ctx, rnd))
        flag = _flood_flag(ctx, rnd)
        return Step(
            halt=True,
            output=(ctx.store["R"], flag, tuple(ctx.store["garbage"])),
        )


class GhzScaledownProgram(RoundProgram):
    """STEPs 1-4 only: stop right after the scale-down phase correction so the
    surviving state over the active parties' R registers can be inspected.

    Output: "inconsistent" if STEP 3 already rejected, "halted-true" when the
    guess check aborts, otherwise the party's R register id (None at inactive
    parties).  Run with keep_states=True to read the states."""

    def __init__(self, h: int, m: int, upper: int):
        self.lane = QhmProgram(h, m, upper)

    def step(self, ctx: PartyContext, inbox: dict[int, Message]) -> Step:
        lane = self.lane
        st = ctx.store
        rnd = ctx.round
        if rnd < 4 * lane.N + 1:
            step = lane.step(ctx, inbox)
            if st.get("verdict") is False:
                return Step(halt=True, output="inconsistent")
            return step
        U = _set_in(st.pop("U"), inbox)
        chi: Fraction = st.pop("chi")
        if len(U) != 1 or chi.denominator != 1 or chi < 0:
            return Step(halt=True, output="halted-true")
        if ctx.input == 1:
            if chi % 2 == 1 and lane.h >= 1:
                ctx.q.unitary(st["R"], rotation(lane.h))
            return Step(halt=True, output=st["R"])
        return Step(halt=True, output=None)


# -- parallel lane composition ---------------------------------------------------


class _LaneFacade:
    """Quantum port wrapper that namespaces register tags per lane."""

    __slots__ = ("_q", "_prefix")

    def __init__(self, q, prefix: str):
        self._q = q
        self._prefix = prefix

    def new(self, tag, epoch, slot, symbol):
        return self._q.new(self._prefix + tag, epoch, slot, symbol)

    def __getattr__(self, name):
        return getattr(self._q, name)


def _lane_prefix(key) -> str:
    return ",".join(str(k) for k in key) + "|"


def _unbundle(inbox: dict[int, Message], keys) -> dict[Any, dict[int, Message]]:
    per_lane: dict[Any, dict[int, Message]] = {k: {} for k in keys}
    for port, msg in inbox.items():
        regs = msg.regs
        at = 0
        for key in sorted(msg.payload):
            payload, nregs = msg.payload[key]
            if key in per_lane:
                per_lane[key][port] = Message(
                    payload=payload, regs=regs[at : at + nregs]
                )
            at += nregs
    return per_lane


class _Bundler:
    def __init__(self) -> None:
        self.parts: dict[int, dict[Any, tuple[Any, int]]] = {}
        self.regs: dict[int, list] = {}

    def add(self, key, outbox: dict[int, Message]) -> None:
        for port, msg in outbox.items():
            self.parts.setdefault(port, {})[key] = (msg.payload, len(msg.regs))
            self.regs.setdefault(port, []).extend(msg.regs)

    def outbox(self) -> dict[int, Message]:
        return {
            port: Message(payload=parts, regs=tuple(self.regs.get(port, ())))
            for port, parts in self.parts.items()
        }


class ParallelLanes(RoundProgram):
    """Run a fixed dictionary of sub-programs in lock-step over tagged
    sub-messages and halt at a fixed budget with the per-lane outputs.

    Subclasses provide lanes(), lane_input() and combine()."""

    def __init__(self, budget: int):
        self.budget = budget

    def lanes(self) -> dict[tuple, RoundProgram]:
        raise NotImplementedError

    def lane_input(self, ctx: PartyContext, key: tuple) -> Any:
        return ctx.input

    def combine(self, ctx: PartyContext, outputs: dict[tuple, Any]) -> Step:
        raise NotImplementedError

    def on_begin(self, ctx: PartyContext) -> None:
        pass

    def step(self, ctx: PartyContext, inbox: dict[int, Message]) -> Step:
        st = ctx.store
        programs = self.lanes()
        keys = sorted(programs)
        if ctx.round == 1:
            self.on_begin(ctx)
            st["lane_store"] = {key: {} for key in keys}
            st["lane_out"] = {}
        per_lane_in = _unbundle(inbox, keys)
        bundler = _Bundler()
        for key in keys:
            if key in st["lane_out"]:
                continue
            sub_ctx = PartyContext(
                d_in=ctx.d_in,
                d_out=ctx.d_out,
                input=self.lane_input(ctx, key),
                info=ctx.info,
                store=st["lane_store"][key],
                round=ctx.round,
                q=_LaneFacade(ctx.q, _lane_prefix(key)),
                harness_party_index=ctx.harness_party_index,
            )
            sub = programs[key].step(sub_ctx, per_lane_in[key])
            if sub.halt:
                st["lane_out"][key] = sub.output
                st["lane_store"][key] = None
            bundler.add(key, sub.outbox)
        if ctx.round >= self.budget:
            assert len(st["lane_out"]) == len(keys), "a lane missed its budget"
            assert not bundler.parts, "messages emitted at the combine round"
            return self.combine(ctx, st["lane_out"])
        return Step(outbox=bundler.outbox())


class _PaddedProgram(RoundProgram):
    """Hold a sub-program's output until a fixed round budget."""

    def __init__(self, inner: RoundProgram, budget: int):
        self.inner = inner
        self.budget = budget

    def step(self, ctx: PartyContext, inbox: dict[int, Message]) -> Step:
        st = ctx.store
        if "out" not in st:
            sub = self.inner.step(ctx, inbox)
            if not sub.halt:
                return sub
            st.clear()
            st["out"] = sub.output
        if ctx.round >= self.budget:
            return Step(halt=True, output=st["out"])
        return Step()


def lane_pairs(upper: int) -> list[tuple[int, int]]:
    """All guess pairs (h, m) with m in 2..N and h in 0..m, in (h, m) order."""
    return sorted((h, m) for m in range(2, upper + 1) for h in range(0, m + 1))


class QsvProgram(ParallelLanes):
    """Exact solitude verification: every Q_{h,m} lane plus the all-zero test
    in parallel; verdict = "someone is active and no lane said false".

    With ``prime=True`` the output is "solo" instead of a true verdict, and on
    non-solitary inputs it is the party's own outcome r at the first false
    lane in (h, m) order (the sentinel when nobody is active)."""

    def __init__(self, upper: int, prime: bool = False):
        super().__init__(round_budget(upper))
        if upper < 2:
            raise ValidationError("the upper bound N must be >= 2")
        self.N = upper
        self.prime = prime
        from .classical import ComputeT0

        self._lanes: dict[tuple, RoundProgram] = {
            ("q", h, m): QhmProgram(h, m, upper, prime=prime)
            for h, m in lane_pairs(upper)
        }
        self._lanes[("t0",)] = _PaddedProgram(ComputeT0(upper), self.budget)

    def lanes(self) -> dict[tuple, RoundProgram]:
        return self._lanes

    def combine(self, ctx: PartyContext, outputs: dict[tuple, Any]) -> Step:
        t0 = outputs[("t0",)]
        qkeys = [k for k in outputs if k[0] == "q"]
        if not self.prime:
            y1 = all(outputs[k] for k in qkeys)
            return Step(halt=True, output=(not t0) and y1)
        false_pairs = sorted((k[1], k[2]) for k in qkeys if not outputs[k][0])
        if false_pairs:
            h, m = false_pairs[0]
            return Step(halt=True, output=outputs[("q", h, m)][1])
        if t0:
            return Step(halt=True, output=SENTINEL)
        return Step(halt=True, output="solo")


class ZqleProgram(ParallelLanes):
    """Zero-error leader election: per lane s the party draws a coin that is 1
    with probability exactly 1/s, solitude-verifies the coin vector for every
    s in parallel, and adopts its coin from the largest verified lane; if no
    lane verifies, every party gives up."""

    def __init__(self, upper: int):
        super().__init__(round_budget(upper))
        if upper < 2:
            raise ValidationError("the upper bound N must be >= 2")
        self.N = upper
        self._lanes: dict[tuple, RoundProgram] = {
            ("s", s): QsvProgram(upper) for s in range(2, upper + 1)
        }

    def lanes(self) -> dict[tuple, RoundProgram]:
        return self._lanes

    def on_begin(self, ctx: PartyContext) -> None:
        ctx.store["coins"] = {
            s: ctx.coin(Fraction(1, s)) for s in range(2, self.N + 1)
        }

    def lane_input(self, ctx: PartyContext, key: tuple) -> Any:
        return ctx.store["coins"][key[1]]

    def combine(self, ctx: PartyContext, outputs: dict[tuple, Any]) -> Step:
        winners = [s for (_, s) in outputs if outputs[("s", s)]]
        if not winners:
            return Step(halt=True, output="give-up")
        return Step(halt=True, output=ctx.store["coins"][max(winners)])


class QsymProgram(RoundProgram):
    """Exact evaluation of a symmetric function that is constant above weight
    k: recursively partition the active parties by verifier outcomes until a
    singleton class certifies a leader, who anchors an exact weight count; if
    no singleton shows up after all refinement levels the weight exceeds k.

    ``table`` maps each weight 0..k to the function value plus the constant
    'tail' value for all larger weights.
    """

    def __init__(self, k: int, table: Mapping[Any, Any], upper: int):
        if k < 0:
            raise ValidationError("k must be >= 0")
        missing = [w for w in range(k + 1) if w not in table]
        if missing or "tail" not in table:
            raise ValidationError(
                f"table must cover weights 0..{k} and 'tail'; missing {missing}"
            )
        self.k = k
        self.table = {w: table[w] for w in range(k + 1)}
        self.table["tail"] = table["tail"]
        self.N = upper
        self.levels = math.ceil(math.log2(max(k, 2)))
        self.sweep_len = round_budget(upper)
        from .classical import ComputeT0, LeaderWeight

        self._t0 = ComputeT0(upper)
        self._lw = LeaderWeight(upper)
        self._verifier = QsvProgram(upper, prime=True)

    def value(self, weight: int) -> Any:
        return self.table[weight] if weight <= self.k else self.table["tail"]

    def _sweep_bounds(self, s: int) -> tuple[int, int]:
        start = (self.N + 1) + s * self.sweep_len
        return start + 1, start + self.sweep_len

    def step(self, ctx: PartyContext, inbox: dict[int, Message]) -> Step:
        st = ctx.store
        rnd = ctx.round

        if rnd == 1:
            st["t0"] = {}
            st["x"] = {(): 1 if ctx.input == 1 else 0}
            st["sweep"] = 0
        if "t0" in st:
            sub = _child(ctx, st["t0"], ctx.input, rnd)
            step = self._t0.step(sub, inbox)
            if not step.halt:
                return step
            st.pop("t0")
            if step.output:  # nobody active: answer directly
                st.clear()
                return Step(halt=True, output=self.value(0))
            return Step()

        if "lw" in st:
            rel = rnd - st["lw_start"] + 1
            sub = _child(ctx, st["lw"], (ctx.input, st["role"]), rel)
            step = self._lw.step(sub, inbox)
            if not step.halt:
                return step
            weight = step.output
            st.clear()
            return Step(halt=True, output=self.value(weight))

        s = st["sweep"]
        first, last = self._sweep_bounds(s)
        if rnd < first:
            return Step()
        if rnd == first:
            st["classes"] = {label: {} for label in sorted(st["x"])}
            st["class_out"] = {}
        outs: dict[tuple, Any] = st["class_out"]
        labels = sorted(st["classes"])
        per_lane_in = _unbundle(inbox, labels)
        bundler = _Bundler()
        for label in labels:
            if label in outs:
                continue
            sub = PartyContext(
                d_in=ctx.d_in,
                d_out=ctx.d_out,
                input=st["x"][label],
                info=ctx.info,
                store=st["classes"][label],
                round=rnd - first + 1,
                q=_LaneFacade(ctx.q, f"t{s}:" + _lane_prefix(label)),
                harness_party_index=ctx.harness_party_index,
            )
            step = self._verifier.step(sub, per_lane_in[label])
            if step.halt:
                outs[label] = step.output
                st["classes"][label] = None
            bundler.add(label, step.outbox)
        if rnd < last:
            return Step(outbox=bundler.outbox())
        # sweep boundary: elect, refine or conclude
        st.pop("classes")
        outs = st.pop("class_out")
        solo_labels = sorted(label for label, v in outs.items() if v == "solo")
        if solo_labels:
            label = solo_labels[0]
            st["role"] = "leader" if st["x"][label] == 1 else "follower"
            st["lw"] = {}
            st["lw_start"] = rnd + 1
            st.pop("x")
            st.pop("sweep")
            return Step()
        if s >= self.levels:
            st.clear()
            return Step(halt=True, output=self.table["tail"])
        new_x = {}
        for label, bit in st["x"].items():
            r = outs[label]
            for z in range(4):
                new_x[label + (z,)] = 1 if (bit == 1 and r == z) else 0
        st["x"] = new_x
        st["sweep"] = s + 1
        return Step()


def _child(ctx: PartyContext, store: dict, inp: Any, rnd: int | None = None) -> PartyContext:
    return PartyContext(
        d_in=ctx.d_in,
        d_out=ctx.d_out,
        input=inp,
        info=ctx.info,
        store=store,
        round=ctx.round if rnd is None else rnd,
        q=ctx.q,
        harness_party_index=ctx.harness_party_index,
    )
