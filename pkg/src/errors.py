"""Exception hierarchy shared by the analysis modules and the CLI.

Each error carries the process exit code the CLI uses when it escapes a
subcommand, so physics failures stay distinguishable from bad input.
"""
from typing import Any, Dict, Optional


EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_INSTABILITY = 4
EXIT_ABOVE_THRESHOLD = 5
EXIT_CONVERGENCE = 6
EXIT_ANALYSIS = 7


class ToolkitError(Exception):
    exit_code = EXIT_UNEXPECTED

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(ToolkitError, ValueError):
    exit_code = EXIT_CONFIG


class UnstableConfinementError(ToolkitError, ValueError):
    exit_code = EXIT_INSTABILITY


class ModeInstabilityError(ToolkitError):
    exit_code = EXIT_INSTABILITY

    def __init__(self, message: str, mode_index: int, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message, diagnostics)
        self.mode_index = mode_index


class AboveThresholdError(ToolkitError, ValueError):
    exit_code = EXIT_ABOVE_THRESHOLD


class ConvergenceError(ToolkitError):
    exit_code = EXIT_CONVERGENCE


class AnalysisError(ToolkitError, ValueError):
    exit_code = EXIT_ANALYSIS


EXIT_CODE_HELP = f"""exit codes:
  {EXIT_OK}  success
  {EXIT_UNEXPECTED}  unexpected error
  {EXIT_USAGE}  command-line usage error
  {EXIT_CONFIG}  missing or invalid configuration
  {EXIT_INSTABILITY}  unstable confinement or imaginary mode frequency
  {EXIT_ABOVE_THRESHOLD}  parametric drive at or above threshold
  {EXIT_CONVERGENCE}  minimizer or integrator failed to converge
  {EXIT_ANALYSIS}  analysis precondition failed (zero detuning, layers, gate kind)"""
