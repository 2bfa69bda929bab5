"""Private interactive proofs for distribution properties.

Verifiers, honest and adversarial provers, private testers and a Monte-Carlo
harness. Hot counting kernels come from a compiled extension when available;
``dpproofs.kernels.BACKEND`` says which implementation is active.
"""

from .distributions import Distribution, Marginals, ProductDomain, tv_distance
from .kernels import BACKEND
from .mechanisms import NoiseSource, PrivacyParams, audit_dp_decision, compose, laplace_release, ptr_gate
from .protocol import (
    AcceptanceEstimate,
    Protocol,
    ProverStrategy,
    Transcript,
    best_adversary_acceptance,
    estimate_acceptance,
    run_protocol,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AcceptanceEstimate",
    "Distribution",
    "Marginals",
    "NoiseSource",
    "PrivacyParams",
    "ProductDomain",
    "Protocol",
    "ProverStrategy",
    "Transcript",
    "audit_dp_decision",
    "best_adversary_acceptance",
    "compose",
    "estimate_acceptance",
    "laplace_release",
    "ptr_gate",
    "run_protocol",
    "tv_distance",
]
