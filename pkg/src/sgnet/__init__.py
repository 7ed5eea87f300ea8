"""Small-gain stability toolkit for large interconnected networks.

Comparison-function algebra, sparse max-type gain operators with their
iterated-maximum closures, small-gain condition checkers, decay-path
construction, composite Lyapunov assembly and trajectory-level validation
on finite ODE truncations, driven either as a library or through the
scenario CLI (`sgnet`).
"""

from . import gainop, kfunc, network, path, sgc
from .gainop import GainOperator, KleeneResult, NonnegSeq, kleene_star
from .kfunc import (
    Compose,
    FnClass,
    FnTag,
    IdPlus,
    Identity,
    InverseOf,
    Linear,
    MaxOf,
    PiecewiseLinear,
    Power,
    Saturating,
    ScalarFn,
    Zero,
    check_class,
    compose,
    invert,
    max_of,
)
from .network import (
    CompositeLyapunov,
    InputSignal,
    Network,
    Subsystem,
    Trajectory,
    check_decay_implication,
    check_iss_estimate,
    check_subsystem_implication,
    compose_V,
    comparison_solve,
    fit_iss_envelope,
    gamma_external,
    simulate,
)
from .path import (
    DecayPath,
    build_path,
    identity_path,
    invert_path,
    verify_bilipschitz,
    verify_decay,
    verify_envelopes,
    verify_monotone,
)
from .sgc import (
    UgasReport,
    Verdict,
    VerdictStatus,
    check_chain_condition,
    check_componentwise_attractivity,
    check_max_robust_sgc,
    check_sgc_cycles,
    check_sgc_sampled,
    check_strong_sgc,
    check_ugas,
    check_ugs,
    compactification_check,
    virtual_reduce,
)

__version__ = "0.1.0"
