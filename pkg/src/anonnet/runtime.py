"""Synchronous round scheduler for anonymous parties on a port digraph.

Parties all run the same program against a context that exposes only their
port counts, their own input, shared global information and a private store;
party indices exist solely for harness bookkeeping.  Messages sent in round t
are delivered at round t+1; a message may carry a classical payload and/or
quantum registers whose ownership moves at the round boundary.

Two execution modes:

* sampling -- one trajectory; measurements and coins are drawn from per-party
  streams seeded by (global seed, party index).
* branch enumeration -- the entire run forks at every measurement and coin,
  in party order within a round; configurations that become identical
  (state, stores, in-flight messages, halting data) are merged with their
  probabilities added, which keeps the tree small without changing any
  downstream-observable distribution.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import CapacityError, NonTerminationError, ValidationError
from .graphs import PortDigraph, is_port_automorphism
from .qstate import RegisterId, SparseQuantumState
from .viewtree import ViewNode

PROB_EPS = 1e-12
DETERMINISTIC = 1.0 - 1e-12


@dataclass(frozen=True)
class Message:
    payload: Any = None
    regs: tuple[RegisterId, ...] = ()


@dataclass
class Step:
    """Result of one party round: messages per out-port, optional halt."""

    outbox: dict[int, Message] = field(default_factory=dict)
    halt: bool = False
    output: Any = None


class RoundProgram:
    """Identical code run by every party; all per-party state lives in
    ``ctx.store``.  Implementations must be deterministic given the context,
    the inbox and the party's randomness stream."""

    def step(self, ctx: "PartyContext", inbox: dict[int, Message]) -> Step:
        raise NotImplementedError


# -- payload accounting -------------------------------------------------------


def payload_bits(obj: Any) -> int:
    if obj is None:
        return 0
    if isinstance(obj, bool):
        return 1
    if isinstance(obj, int):
        return max(1, obj.bit_length())
    if isinstance(obj, Fraction):
        return payload_bits(obj.numerator) + payload_bits(obj.denominator)
    if isinstance(obj, str):
        return 8 * len(obj)
    if isinstance(obj, ViewNode):
        return obj.uncompressed_bits()
    if isinstance(obj, (tuple, list, set, frozenset)):
        return sum(payload_bits(v) for v in obj) + 2
    if isinstance(obj, dict):
        return sum(payload_bits(k) + payload_bits(v) for k, v in obj.items()) + 2
    raise ValidationError(f"unsized message payload of type {type(obj)!r}")


def _freeze(obj: Any) -> Any:
    if obj is None or isinstance(obj, (bool, int, float, str, Fraction, RegisterId, ViewNode)):
        return obj
    if isinstance(obj, tuple):
        return tuple(_freeze(v) for v in obj)
    if isinstance(obj, list):
        return ("#l",) + tuple(_freeze(v) for v in obj)
    if isinstance(obj, (set, frozenset)):
        return ("#s",) + tuple(sorted((_freeze(v) for v in obj), key=repr))
    if isinstance(obj, dict):
        return ("#d",) + tuple(
            sorted(((_freeze(k), _freeze(v)) for k, v in obj.items()), key=repr)
        )
    if isinstance(obj, Message):
        return ("#m", _freeze(obj.payload), obj.regs)
    raise ValidationError(f"store value of type {type(obj)!r} is not freezable")


def _copy_data(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _copy_data(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_copy_data(v) for v in obj]
    if isinstance(obj, set):
        return set(obj)
    return obj


# -- contexts and facades -----------------------------------------------------


class _NeedFork(Exception):
    def __init__(self, options: list[Any]):
        self.options = options


class QuantumFacade:
    """Party-scoped access to the shared quantum state.

    In branch mode, measurement/coin choices are replayed from a script; when
    the script runs out the facade raises to let the scheduler fork the run.
    """

    def __init__(self, config: "_Config", party: int, mode: str, script, rng, inplace: bool = False):
        self._config = config
        self._party = party
        self._mode = mode
        self._script = script
        self._cursor = 0
        self._rng = rng
        self._inplace = inplace
        self.state: SparseQuantumState | None = None  # lazy copy
        self.prob = 1.0
        self.created: list[RegisterId] = []
        self._created_set: set[RegisterId] = set()

    # state access ---------------------------------------------------------

    def _st(self) -> SparseQuantumState:
        if self.state is None:
            if self._inplace:
                self.state = self._config.state
            else:
                self.state = self._config.state.copy()
        return self.state

    def _peek(self) -> SparseQuantumState:
        return self.state if self.state is not None else self._config.state

    def _own(self, reg: RegisterId) -> None:
        owner = self._config.owner.get(reg)
        if owner != self._party and reg not in self._created_set:
            raise ValidationError(
                f"party does not own register {reg} (owner: {owner})"
            )

    def _choose(self, options: list[tuple[Any, float]]) -> Any:
        """Pick one option key; fork in branch mode, sample otherwise."""
        if len(options) == 1:
            self.prob *= options[0][1]
            return options[0][0]
        if self._mode == "sample":
            u = self._rng.random() * sum(p for _, p in options)
            acc = 0.0
            for key, p in options:
                acc += p
                if u < acc:
                    return key
            return options[-1][0]
        if self._cursor < len(self._script):
            key = self._script[self._cursor]
            self._cursor += 1
            for k, p in options:
                if k == key:
                    self.prob *= p
                    return key
            raise AssertionError("scripted choice vanished on replay")
        raise _NeedFork([k for k, p in options if p > PROB_EPS])

    # operations -----------------------------------------------------------

    def new(self, tag: str, epoch: int, slot: int, symbol: int) -> RegisterId:
        rid = RegisterId(self._party, tag, epoch, slot)
        self._st().init_register(rid, symbol)
        self.created.append(rid)
        self._created_set.add(rid)
        return rid

    def unitary(self, reg: RegisterId, U: np.ndarray) -> None:
        self._own(reg)
        self._st().apply_local_unitary(reg, U)

    def permute(self, regs: Sequence[RegisterId], mapping) -> None:
        for r in regs:
            self._own(r)
        self._st().apply_reversible_map(regs, mapping)

    def measure(self, reg: RegisterId, basis: np.ndarray) -> int:
        self._own(reg)
        probs = self._peek().branch_probs(reg, basis)
        if probs and max(p for _, p in probs) >= DETERMINISTIC:
            outcome = max(probs, key=lambda t: t[1])[0]
        else:
            outcome = self._choose(probs)
        self._st().collapse(reg, basis, outcome)
        return outcome

    def sweep_parity(
        self, regs: Sequence[RegisterId], basis: np.ndarray, count_symbol: int
    ) -> int:
        """Measure each register in ``basis`` (discarding it afterwards) and
        return the parity of ``count_symbol`` outcomes."""
        for r in regs:
            self._own(r)
        branches = self._peek().sweep_measure(regs, basis, count_symbol)
        if len(branches) == 1:
            idx = 0
            self.prob *= branches[0][1]
        else:
            idx = self._choose([(i, b[1]) for i, b in enumerate(branches)])
        parity, _, new_state = branches[idx]
        self.state = new_state
        return parity

    def discard(self, reg: RegisterId) -> None:
        self._own(reg)
        self._st().discard(reg)

    def coin(self, p: Fraction) -> int:
        """Bernoulli draw: 1 with probability exactly p."""
        if p < 0 or p > 1:
            raise ValidationError(f"coin probability {p} outside [0,1]")
        if p == 0:
            return 0
        if p == 1:
            return 1
        return self._choose([(1, float(p)), (0, 1.0 - float(p))])


@dataclass
class PartyContext:
    d_in: int
    d_out: int
    input: Any
    info: Mapping[str, Any]
    store: dict
    round: int
    q: QuantumFacade
    # Harness bookkeeping only; programs honouring the anonymity contract
    # must never read this.
    harness_party_index: int = -1

    def coin(self, p: Fraction) -> int:
        return self.q.coin(p)


# -- configurations -----------------------------------------------------------


class _Config:
    __slots__ = (
        "state",
        "stores",
        "halted",
        "outputs",
        "halt_round",
        "inbox",
        "owner",
        "prob",
        "cbits",
        "qubits",
    )

    def __init__(self, n: int):
        self.state = SparseQuantumState()
        self.stores: list[dict] = [dict() for _ in range(n + 1)]
        self.halted = [False] * (n + 1)
        self.outputs: list[Any] = [None] * (n + 1)
        self.halt_round = 0
        self.inbox: list[dict[int, Message]] = [dict() for _ in range(n + 1)]
        self.owner: dict[RegisterId, int] = {}
        self.prob = 1.0
        self.cbits = 0
        self.qubits = 0

    def clone_shallow(self) -> "_Config":
        c = _Config.__new__(_Config)
        c.state = self.state
        c.stores = list(self.stores)
        c.halted = list(self.halted)
        c.outputs = list(self.outputs)
        c.halt_round = self.halt_round
        c.inbox = self.inbox
        c.owner = self.owner
        c.prob = self.prob
        c.cbits = self.cbits
        c.qubits = self.qubits
        return c

    def merge_key(self, cache: dict | None = None) -> tuple:
        if cache is None:
            cache = {}

        def cached(kind: str, obj, fn):
            ck = (kind, id(obj))
            hit = cache.get(ck)
            if hit is None:
                hit = (obj, fn(obj))  # pin obj so its id cannot be recycled
                cache[ck] = hit
            return hit[1]

        return (
            cached("q", self.state, lambda s: s.canonical_key()),
            tuple(cached("s", s, _freeze) for s in self.stores),
            tuple(self.halted),
            _freeze(list(self.outputs)),
            tuple(
                cached(
                    "b",
                    box,
                    lambda b: tuple(sorted((p, _freeze(m)) for p, m in b.items())),
                )
                for box in self.inbox
            ),
            cached("o", self.owner, lambda o: tuple(sorted(o.items()))),
            self.cbits,
            self.qubits,
        )


@dataclass
class RunTranscript:
    """Resource and output record of one run (or one enumerated branch)."""

    rounds: int
    cbits: int
    qubits: int
    outputs: tuple
    probability: float = 1.0
    branch_index: int = 0
    state: SparseQuantumState | None = None

    def as_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "cbits": self.cbits,
            "qubits": self.qubits,
            "outputs": list(self.outputs),
            "probability": self.probability,
        }


# -- the scheduler ------------------------------------------------------------


class Scheduler:
    def __init__(
        self,
        graph: PortDigraph,
        program: RoundProgram,
        inputs: Sequence[Any],
        info: Mapping[str, Any] | None = None,
        max_rounds: int | None = None,
        config_cap: int = 250_000,
    ):
        if len(inputs) != graph.n:
            raise ValidationError("need one input per party")
        self.g = graph
        self.program = program
        self.inputs = list(inputs)
        self.info = dict(info or {})
        upper = self.info.get("N", graph.n)
        self.max_rounds = max_rounds if max_rounds is not None else 20 * upper + 50
        self.config_cap = config_cap
        self.delivery = graph.delivery_map()
        self.d_in = [0] + [graph.d_in(v) for v in range(1, graph.n + 1)]
        self.d_out = [0] + [graph.d_out(v) for v in range(1, graph.n + 1)]

    # -- single-party step exploration --------------------------------------

    def _explore(
        self, cfg: _Config, party: int, rnd: int, mode: str, rng
    ) -> list[tuple[_Config, dict[int, Message]]]:
        """Run one party's step on one configuration; return all outcome
        variants as (new config, outbox) pairs."""
        results: list[tuple[_Config, dict[int, Message]]] = []

        def attempt(script: list) -> None:
            store = _copy_data(cfg.stores[party])
            facade = QuantumFacade(cfg, party, mode, script, rng)
            ctx = PartyContext(
                d_in=self.d_in[party],
                d_out=self.d_out[party],
                input=self.inputs[party - 1],
                info=self.info,
                store=store,
                round=rnd,
                q=facade,
                harness_party_index=party,
            )
            try:
                step = self.program.step(ctx, cfg.inbox[party])
            except _NeedFork as fork:
                for choice in fork.options:
                    attempt(script + [choice])
                return
            var = cfg.clone_shallow()
            if facade.state is not None:
                var.state = facade.state
            var.stores[party] = store
            var.prob = cfg.prob * facade.prob
            if facade.created:
                var.owner = dict(var.owner)
                for rid in facade.created:
                    var.owner[rid] = party
            if step.halt:
                var.halted[party] = True
                var.outputs[party] = step.output
                var.halt_round = max(var.halt_round, rnd)
            for port, msg in step.outbox.items():
                if (party, port) not in self.delivery:
                    raise ValidationError(f"no out-port {port} at this party")
                if not isinstance(msg, Message):
                    raise ValidationError("outbox values must be Message instances")
                for reg in msg.regs:
                    if var.owner.get(reg) != party:
                        raise ValidationError(f"sending unowned register {reg}")
            results.append((var, dict(step.outbox)))

        attempt([])
        return results

    def _deliver(
        self, cfg: _Config, sends: list[tuple[int, int, Message]]
    ) -> None:
        inbox: list[dict[int, Message]] = [dict() for _ in range(self.g.n + 1)]
        owner = None
        for src, port, msg in sends:
            dst, ip = self.delivery[(src, port)]
            if cfg.halted[dst]:
                raise ValidationError("message delivered to a halted party")
            inbox[dst][ip] = msg
            cfg.cbits += payload_bits(msg.payload)
            cfg.qubits += 2 * len(msg.regs)
            if msg.regs:
                if owner is None:
                    owner = dict(cfg.owner)
                for reg in msg.regs:
                    owner[reg] = dst
        cfg.inbox = inbox
        if owner is not None:
            cfg.owner = owner

    # -- drivers -------------------------------------------------------------

    def run_sampled(self, seed: int = 0, keep_state: bool = False) -> RunTranscript:
        cfg = _Config(self.g.n)
        rngs = [None] + [
            random.Random((seed, party, "anonnet")) for party in range(1, self.g.n + 1)
        ]
        for rnd in range(1, self.max_rounds + 1):
            pending: list[tuple[int, int, Message]] = []
            for party in range(1, self.g.n + 1):
                if cfg.halted[party]:
                    continue
                facade = QuantumFacade(cfg, party, "sample", None, rngs[party], inplace=True)
                ctx = PartyContext(
                    d_in=self.d_in[party],
                    d_out=self.d_out[party],
                    input=self.inputs[party - 1],
                    info=self.info,
                    store=cfg.stores[party],
                    round=rnd,
                    q=facade,
                    harness_party_index=party,
                )
                step = self.program.step(ctx, cfg.inbox[party])
                if facade.state is not None:
                    cfg.state = facade.state  # sweeps rebuild the state object
                for rid in facade.created:
                    cfg.owner[rid] = party
                if step.halt:
                    cfg.halted[party] = True
                    cfg.outputs[party] = step.output
                    cfg.halt_round = max(cfg.halt_round, rnd)
                for port, msg in step.outbox.items():
                    if (party, port) not in self.delivery:
                        raise ValidationError(f"no out-port {port} at this party")
                    pending.append((party, port, msg))
            self._deliver(cfg, pending)
            if all(cfg.halted[1:]):
                return RunTranscript(
                    rounds=cfg.halt_round,
                    cbits=cfg.cbits,
                    qubits=cfg.qubits,
                    outputs=tuple(cfg.outputs[1:]),
                    state=cfg.state if keep_state else None,
                )
        raise NonTerminationError(
            f"parties still running after {self.max_rounds} rounds"
        )

    def run_branches(self, keep_states: bool = False) -> list[RunTranscript]:
        live: list[tuple[_Config, list[tuple[int, int, Message]]]] = [
            (_Config(self.g.n), [])
        ]
        done: list[_Config] = []
        for rnd in range(1, self.max_rounds + 1):
            if not live:
                break
            for party in range(1, self.g.n + 1):
                nxt: list[tuple[_Config, list[tuple[int, int, Message]]]] = []
                forked = False
                for cfg, pending in live:
                    if cfg.halted[party]:
                        nxt.append((cfg, pending))
                        continue
                    variants = self._explore(cfg, party, rnd, "branch", None)
                    if len(variants) > 1:
                        forked = True
                    for var, outbox in variants:
                        var_pending = pending + [
                            (party, port, msg) for port, msg in outbox.items()
                        ]
                        nxt.append((var, var_pending))
                live = nxt
                if forked:
                    live = self._merge(live)
                if len(live) > self.config_cap:
                    raise CapacityError(
                        f"branch-mode configuration count exceeded {self.config_cap}"
                    )
            still = []
            for cfg, pending in live:
                self._deliver(cfg, pending)
                if all(cfg.halted[1:]):
                    done.append(cfg)
                else:
                    still.append((cfg, []))
            live = self._merge(still)
        if live:
            raise NonTerminationError(
                f"parties still running after {self.max_rounds} rounds"
            )
        out: list[RunTranscript] = []
        merged: dict[tuple, _Config] = {}
        cache: dict = {}
        for cfg in done:
            key = cfg.merge_key(cache)
            if key in merged:
                merged[key].prob += cfg.prob
            else:
                merged[key] = cfg
        branches = sorted(merged.values(), key=lambda c: _freeze(list(c.outputs)).__repr__())
        for i, cfg in enumerate(branches):
            out.append(
                RunTranscript(
                    rounds=cfg.halt_round,
                    cbits=cfg.cbits,
                    qubits=cfg.qubits,
                    outputs=tuple(cfg.outputs[1:]),
                    probability=cfg.prob,
                    branch_index=i,
                    state=cfg.state if keep_states else None,
                )
            )
        total = sum(b.probability for b in out)
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"branch probabilities sum to {total!r}, not 1")
        return out

    @staticmethod
    def _merge(
        live: list[tuple[_Config, list[tuple[int, int, Message]]]]
    ) -> list[tuple[_Config, list[tuple[int, int, Message]]]]:
        if len(live) <= 1:
            return live
        cache: dict = {}
        seen: dict[tuple, int] = {}
        out: list[tuple[_Config, list[tuple[int, int, Message]]]] = []
        for cfg, pending in live:
            key = (
                cfg.merge_key(cache),
                tuple((s, p, _freeze(m)) for s, p, m in pending),
            )
            if key in seen:
                out[seen[key]][0].prob += cfg.prob
            else:
                seen[key] = len(out)
                out.append((cfg, pending))
        return out


def run(
    graph: PortDigraph,
    program: RoundProgram,
    inputs: Sequence[Any],
    info: Mapping[str, Any] | None = None,
    mode: str = "sample",
    seed: int = 0,
    max_rounds: int | None = None,
    keep_states: bool = False,
    config_cap: int = 250_000,
):
    """Execute a program on a graph.

    mode='sample' returns one RunTranscript; mode='branch' returns the list of
    all branch transcripts with probabilities summing to 1 (within 1e-9).
    """
    sched = Scheduler(graph, program, inputs, info, max_rounds, config_cap)
    if mode == "sample":
        return sched.run_sampled(seed=seed, keep_state=keep_states)
    if mode == "branch":
        return sched.run_branches(keep_states=keep_states)
    raise ValidationError(f"unknown mode {mode!r}")


def output_distribution(
    branches: Iterable[RunTranscript],
) -> dict[tuple, float]:
    dist: dict[tuple, float] = {}
    for b in branches:
        key = _freeze(list(b.outputs))
        dist[key] = dist.get(key, 0.0) + b.probability
    return dist


def assert_anonymity(
    program: RoundProgram,
    graph: PortDigraph,
    inputs: Sequence[Any],
    automorphism: dict[int, int],
    info: Mapping[str, Any] | None = None,
    max_rounds: int | None = None,
) -> bool:
    """Check that relabelling parties by a port-preserving automorphism leaves
    the branch-outcome distribution unchanged."""
    if not is_port_automorphism(graph, automorphism):
        raise ValidationError("node permutation is not a port-preserving automorphism")
    base = run(graph, program, inputs, info, mode="branch", max_rounds=max_rounds)
    permuted_inputs = list(inputs)
    for i in range(1, graph.n + 1):
        permuted_inputs[automorphism[i] - 1] = inputs[i - 1]
    other = run(graph, program, permuted_inputs, info, mode="branch", max_rounds=max_rounds)
    inv = {v: k for k, v in automorphism.items()}
    dist1 = output_distribution(base)
    dist2: dict[tuple, float] = {}
    for b in other:
        outs = tuple(b.outputs[automorphism[i] - 1] for i in range(1, graph.n + 1))
        key = _freeze(list(outs))
        dist2[key] = dist2.get(key, 0.0) + b.probability
    if set(dist1) != set(dist2):
        return False
    return all(abs(dist1[k] - dist2[k]) <= 1e-9 for k in dist1)
