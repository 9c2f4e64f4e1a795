"""Exception types shared across the package.

The CLI maps these onto process exit codes: contract violations exit 2,
numeric failures exit 3, exhausted search budgets exit 4.
"""


class DivlabError(Exception):
    """Base class for all package-specific errors."""


class ContractError(DivlabError):
    """A documented precondition or invariant was violated by the caller."""


class CertificateInvalidError(ContractError):
    """An embedding certificate failed its norm preconditions.

    Distinct from a certificate that merely evaluates to False: the inputs
    were not even admissible, so no true/false verdict exists.
    """


class ConstructionInfeasibleError(ContractError):
    """A hard-instance construction has no room left (e.g. empty support)."""


class NumericError(DivlabError):
    """A numeric procedure failed (divergence, non-convergence)."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class BudgetExceededError(DivlabError):
    """A search exceeded its node budget; the partial answer is not returned
    so truncation can never be mistaken for a result."""

    def __init__(self, message: str, nodes: int):
        super().__init__(f"{message} (nodes explored: {nodes})")
        self.nodes = nodes
