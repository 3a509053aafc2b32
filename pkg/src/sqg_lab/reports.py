"""Verification reports and the claim registry.

Every probe in the package reports its measurement as a VerificationReport
tied to a registered claim string, so the suite runner can enumerate exactly
which quantitative statements are exercised and no check floats free of a
claim. Claims are registered at import time by the module that measures them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

_CLAIMS: set[str] = set()


def register_claim(text: str) -> str:
    """Register a claim string and hand it back for module-level reuse."""
    _CLAIMS.add(text)
    return text


def registered_claims() -> frozenset[str]:
    return frozenset(_CLAIMS)


@dataclass(frozen=True)
class VerificationReport:
    """One measured inequality: lhs vs rhs, their ratio, and a verdict."""

    name: str
    claim: str
    lhs: float
    rhs: float
    ratio: float
    passed: bool
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.claim not in _CLAIMS:
            raise ValueError(f"unregistered claim: {self.claim!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "claim": self.claim,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "ratio": self.ratio,
            "pass": self.passed,
            "metadata": dict(self.metadata),
        }
