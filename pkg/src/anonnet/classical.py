"""Classical round programs: color counting/consistency, all-zero detection,
view construction, view-based symmetric-function evaluation and leader-driven
Hamming-weight computation.

All of these follow the same flooding pattern: a value is seeded locally and
set-unions travel along every edge for a fixed number of rounds, after which
every party holds the same aggregate (the round budget is an upper bound on
the diameter, supplied by the caller).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Hashable

from .errors import ValidationError
from .runtime import Message, PartyContext, RoundProgram, Step
from .viewtree import ViewNode, attach, hamming_guess, leaf


@dataclass(frozen=True)
class ColorReport:
    """Union of active parties' colors plus the three-way case decision:
    case 0 = no active parties, 1 = one color, 2 = at least two colors."""

    colors: frozenset
    case: int


def _broadcast(ctx: PartyContext, value) -> dict[int, Message]:
    return {p: Message(payload=value) for p in range(1, ctx.d_out + 1)}


def _union_inbox(current: frozenset, inbox: dict[int, Message]) -> frozenset:
    out = current
    for msg in inbox.values():
        out = out | msg.payload
    return out


class ColorCount(RoundProgram):
    """Proposition-style color counting: after delta exchange rounds every
    party knows the set of colors held by active parties and the case split.

    Input per party: (active flag, color).
    """

    def __init__(self, delta: int):
        if delta < 1:
            raise ValidationError("delta must be >= 1")
        self.delta = delta

    def step(self, ctx: PartyContext, inbox: dict[int, Message]) -> Step:
        if ctx.round == 1:
            active, color = ctx.input
            ctx.store["U"] = frozenset([color]) if active else frozenset()
            return Step(outbox=_broadcast(ctx, ctx.store["U"]))
        U = _union_inbox(ctx.store["U"], inbox)
        ctx.store["U"] = U
        if ctx.round <= self.delta:
            return Step(outbox=_broadcast(ctx, U))
        case = 0 if not U else (1 if len(U) == 1 else 2)
        return Step(halt=True, output=ColorReport(U, case))


class Consistency(RoundProgram):
    """Color counting collapsed to consistent (cases 0 and 1) versus
    inconsistent (case 2)."""

    def __init__(self, delta: int):
        self._cc = ColorCount(delta)

    def step(self, ctx: PartyContext, inbox: dict[int, Message]) -> Step:
        step = self._cc.step(ctx, inbox)
        if step.halt:
            return Step(halt=True, output=step.output.case <= 1)
        return step


class ComputeT0(RoundProgram):
    """True at every party iff all inputs are 0 (color counting over the
    single color 1: case 0 against case 1)."""

    def __init__(self, delta: int):
        self._cc = ColorCount(delta)

    def step(self, ctx: PartyContext, inbox: dict[int, Message]) -> Step:
        sub = PartyContext(
            d_in=ctx.d_in,
            d_out=ctx.d_out,
            input=(ctx.input == 1, 1),
            info=ctx.info,
            store=ctx.store,
            round=ctx.round,
            q=ctx.q,
            harness_party_index=ctx.harness_party_index,
        )
        step = self._cc.step(sub, inbox)
        if step.halt:
            return Step(halt=True, output=step.output.case == 0)
        return step


class BuildView(RoundProgram):
    """Each party assembles its depth-k view of the network by exchanging
    partial views k times; messages carry (sender out-port, view)."""

    def __init__(self, depth: int):
        if depth < 0:
            raise ValidationError("view depth must be >= 0")
        self.depth = depth

    def step(self, ctx: PartyContext, inbox: dict[int, Message]) -> Step:
        if ctx.round == 1:
            v = leaf(ctx.input)
            ctx.store["view"] = v
            if self.depth == 0:
                return Step(halt=True, output=v)
            return Step(
                outbox={
                    p: Message(payload=(p, v)) for p in range(1, ctx.d_out + 1)
                }
            )
        children = []
        for in_port, msg in sorted(inbox.items()):
            out_port, child = msg.payload
            children.append(((out_port, in_port), child))
        v = attach(ctx.input, children)
        ctx.store["view"] = v
        if v.depth == self.depth:
            return Step(halt=True, output=v)
        return Step(
            outbox={p: Message(payload=(p, v)) for p in range(1, ctx.d_out + 1)}
        )


class SymmetricGuess(RoundProgram):
    """Views of depth 2m-1 over the parties' bits, then the local rational
    guess chi = m*q1/q at the Hamming weight.  Exact whenever m equals the
    true party count; under a wrong m the caller must validate chi."""

    def __init__(self, m: int):
        if m < 2:
            raise ValidationError("m must be >= 2")
        self.m = m
        self._view = BuildView(2 * m - 1)

    def step(self, ctx: PartyContext, inbox: dict[int, Message]) -> Step:
        step = self._view.step(ctx, inbox)
        if step.halt:
            return Step(halt=True, output=hamming_guess(step.output, self.m))
        return step


class LeaderWeight(RoundProgram):
    """With a unique leader present, assign path identifiers from the leader,
    gather all (id, bit) pairs and output the Hamming weight everywhere.

    Input per party: (bit, role) with role 'leader' or 'follower'.  Runs in
    N + (N+1) rounds: N rounds of identifier flooding, then a set-union
    broadcast of the (id, bit) pairs.
    """

    def __init__(self, upper: int, expose_id: bool = False):
        if upper < 1:
            raise ValidationError("upper bound must be >= 1")
        self.N = upper
        self.expose_id = expose_id

    def step(self, ctx: PartyContext, inbox: dict[int, Message]) -> Step:
        bit, role = ctx.input
        N = self.N
        if ctx.round == 1:
            if role == "leader":
                ctx.store["id"] = ()
                return Step(
                    outbox={
                        p: Message(payload=("id", (p,)))
                        for p in range(1, ctx.d_out + 1)
                    }
                )
            return Step()
        if ctx.round <= N:
            if role == "follower" and "id" not in ctx.store:
                for in_port in sorted(inbox):
                    kind, path = inbox[in_port].payload
                    if kind == "id":
                        ctx.store["id"] = path
                        return Step(
                            outbox={
                                p: Message(payload=("id", path + (p,)))
                                for p in range(1, ctx.d_out + 1)
                            }
                        )
            return Step()
        if ctx.round == N + 1:
            ident = ctx.store.get("id", ("?",))  # undefined without a unique leader
            U = frozenset([(ident, bit)])
            ctx.store["U"] = U
            return Step(outbox=_broadcast(ctx, U))
        U = ctx.store["U"]
        for msg in inbox.values():
            if isinstance(msg.payload, tuple) and msg.payload and msg.payload[0] == "id":
                continue  # stale identifier relays from round N
            U = U | msg.payload
        ctx.store["U"] = U
        if ctx.round <= 2 * N:
            return Step(outbox=_broadcast(ctx, U))
        weight = sum(b for _, b in U)
        if self.expose_id:
            return Step(halt=True, output=(weight, ctx.store.get("id", ("?",)), U))
        return Step(halt=True, output=weight)
