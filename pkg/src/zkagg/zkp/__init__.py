"""Zero-knowledge proofs of a passing backdoor check."""

from .circuit import CircuitError, CircuitSpec, plain_check
from .mpc import InputShares, emulate_mpc, share_input
from .proof import (Proof, PredicateFailed, Repetition, challenge, proof_from_bytes, proof_to_bytes, prove,
                    prove_cheating, simulate_repetition, verify)

__all__ = [
    "CircuitError", "CircuitSpec", "InputShares", "PredicateFailed", "Proof", "Repetition", "challenge",
    "emulate_mpc", "plain_check", "proof_from_bytes", "proof_to_bytes", "prove", "prove_cheating",
    "share_input", "simulate_repetition", "verify",
]
