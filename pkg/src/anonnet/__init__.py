"""Anonymous-network algorithm library with a sparse quantum engine.

Simulates synchronous, anonymous, port-numbered networks on strongly
connected digraphs and implements exact quantum solitude verification plus
its derivatives: zero-error leader election and exact evaluation of symmetric
Boolean functions, verified by exhaustive measurement-branch enumeration.
"""

from .errors import (
    AnonnetError,
    CapacityError,
    ConstructionError,
    DomainError,
    FixtureLookupError,
    NonTerminationError,
    PreconditionError,
    ValidationError,
)
from .graphs import (
    Edge,
    PortDigraph,
    complete,
    diameter,
    enumerate_graphs,
    enumerate_port_numberings,
    fixture,
    is_strongly_connected,
    parse,
    ring,
    sample_port_numberings,
    serialize,
)
from .qstate import (
    CROSS,
    EMPTY,
    ONE,
    SENTINEL,
    ZERO,
    BranchOutcome,
    RegisterId,
    SparseQuantumState,
    ghz_vector,
)
from .runtime import (
    Message,
    PartyContext,
    RoundProgram,
    RunTranscript,
    Step,
    assert_anonymity,
    run,
)
from .classical import (
    BuildView,
    ColorCount,
    ColorReport,
    ComputeT0,
    Consistency,
    LeaderWeight,
    SymmetricGuess,
)
from .quantum import (
    GhzScaledownProgram,
    QConsistencyProgram,
    QhmProgram,
    QsvProgram,
    QsymProgram,
    WUnitary,
    ZqleProgram,
    build_w,
    lane_pairs,
    round_budget,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
