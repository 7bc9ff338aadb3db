"""Exception taxonomy shared across modules.

ScenarioError maps to CLI exit code 2 (bad configuration), NumericsError to
exit code 3 (a computation failed despite a valid configuration).
"""


class ScenarioError(ValueError):
    """Invalid or inconsistent scenario configuration."""


class NumericsError(RuntimeError):
    """A numerical stage failed (grid, fit, inversion or control loop)."""
