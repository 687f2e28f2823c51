"""Quantum energy teleportation and distribution on critical Ising chains."""

from ._version import __version__  # noqa: F401
from .chain import (  # noqa: F401
    ChainModel,
    ChainOperator,
    QuantumState,
    build_hamiltonian,
    build_model,
    energy_density,
    expectation,
    ground_state,
    local_pauli,
)
from .errors import (  # noqa: F401
    ConfigError,
    DegenerateProtocolError,
    NumericalError,
    PlacementError,
    QetlabError,
)
from .protocol import (  # noqa: F401
    OutcomeEnsemble,
    PartyConfig,
    ProtocolReport,
    adversary_energy,
    feedback_angle,
    feedback_unitary,
    measure_supplier,
    projectors,
    run_qed,
    run_qet,
    validate_placement,
    xi_eta,
)
from .cooling import (  # noqa: F401
    CoolingResult,
    LocalOperationSet,
    OptimizerConfig,
    cooling_state,
    minimize_residual,
    reduced_site_state,
    supplier_energy,
)
from .netsim import (  # noqa: F401
    Message,
    Node,
    SessionLog,
    authenticate,
    expand_keys,
    replay_session,
    run_session,
)
