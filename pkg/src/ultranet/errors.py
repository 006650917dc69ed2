"""Error taxonomy shared by all modules.

UsageError: an operation was called outside its stated preconditions.
ValidationError: input data (config, network, datum) fails its invariants.
NumericError: a computation cannot deliver its accuracy or shape contract.
ClassificationError: a network admits no consistent regime classification.
"""


class UltranetError(Exception):
    pass


class UsageError(UltranetError):
    pass


class ValidationError(UltranetError):
    pass


class NumericError(UltranetError):
    pass


class ClassificationError(NumericError):
    """The per-basin regime conditions are mutually inconsistent.

    Raised when a basin satisfies neither the conservative equality nor the
    strict dying inequality, which signals an inconsistency between the
    cross-rate bounds and the aggregate convention.
    """
