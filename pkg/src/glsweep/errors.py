"""Exception hierarchy.

Every error raised by the package derives from :class:`GlsError`. The CLI maps
the four families onto exit codes (config=2, format=3, numeric=4, io=5).
"""

from __future__ import annotations


class GlsError(Exception):
    exit_code = 1


class ConfigError(GlsError):
    exit_code = 2


class StructuralError(GlsError, ValueError):
    """Shapes or dimensions that do not fit together."""

    exit_code = 2


class ValidationError(GlsError, ValueError):
    exit_code = 2

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"{len(self.violations)} dataset violation(s):\n{lines}")


class FormatError(GlsError):
    exit_code = 3

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class NumericError(GlsError, ArithmeticError):
    exit_code = 4


class IndefiniteError(NumericError):
    """A factorization met a non-positive pivot.

    ``pivot`` is the zero-based index of the failing pivot, or of the
    offending eigenvalue for spectral weights.
    """

    def __init__(self, message, pivot=None):
        self.pivot = pivot
        super().__init__(message)


class SingularError(NumericError):
    pass


class CollinearityError(IndefiniteError):
    """The per-SNP normal-equations matrix is numerically singular."""


class KernelError(NumericError):
    pass


class StreamIOError(GlsError, OSError):
    exit_code = 5

    def __init__(self, message, block_index=None):
        self.block_index = block_index
        if block_index is not None:
            message = f"{message} (block {block_index})"
        super().__init__(message)


class ProblemError(NumericError):
    """A per-problem failure annotated with its (snp, trait) coordinates."""

    def __init__(self, snp_index, trait_index, cause):
        self.snp_index = snp_index
        self.trait_index = trait_index
        self.cause = cause
        super().__init__(f"snp {snp_index}, trait {trait_index}: {cause}")
