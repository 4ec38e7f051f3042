"""Base class for domain errors.

Every concrete error formats itself as a single ``Name(detail)`` line so the
CLI can surface it verbatim on stderr.
"""


class BranchLensError(Exception):
    pass
