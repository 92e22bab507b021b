"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition (shape, range, state)."""


class NumericFault(ArithmeticError):
    """A computation produced NaN/Inf.

    ``op`` names the operation (autodiff primitive, optimizer segment, ...)
    and ``node_id`` the tape node when one exists.
    """

    def __init__(self, op, node_id=None, detail=""):
        self.op = op
        self.node_id = node_id
        msg = f"non-finite value in {op}"
        if node_id is not None:
            msg += f" (node {node_id})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class OracleInvalid(RuntimeError):
    """An oracle's own assumptions failed (e.g. a non-deterministic objective)."""


class LayoutFault(RuntimeError):
    """Layout generation could not produce a usable grid."""
