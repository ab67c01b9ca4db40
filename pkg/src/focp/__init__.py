"""Direct transcription of fractional optimal control problems.

The package discretizes Caputo-dynamics optimal control problems on a
uniform grid by replacing the fractional dynamics with one of three
fractional integration matrices (Grunwald-Letnikov, trapezoid, Simpson)
and solving the resulting sparse-structured NLP with an augmented
Lagrangian method.

Subpackage map:

- :mod:`focp.fracint`    fractional integration matrices and quadrature
- :mod:`focp.problem`    problem container, validation, time rescaling
- :mod:`focp.transcribe` NLP assembly: objective, residuals, Jacobians
- :mod:`focp.nlp`        augmented Lagrangian solver
- :mod:`focp.bench`      benchmark problems, error norms, convergence studies
- :mod:`focp.cli`        command line interface (solve / matrix / study)
"""

from .errors import (
    EvaluationError,
    FocpError,
    ParameterDomainError,
    ProblemValidationError,
    SchemeConstraintError,
)
from .fracint import (
    USING_NUMBA,
    FracIntegrationMatrix,
    QuadratureWeights,
    Scheme,
    apply,
    build_matrix,
    gl_matrix,
    gl_weights,
    quad_weights,
    si_coeffs,
    si_matrix,
    tr_coeffs,
    tr_matrix,
)
from .problem import FocpProblem, ScaledFocp, rescale, validate
from .transcribe import DecisionLayout, TranscribedNlp, build, fd_check
from .nlp import NlpSolution, SolverOptions, SolveStatus, kkt_residual, solve
from .bench import (
    ConvergenceStudy,
    ErrorNorms,
    ExampleId,
    bessel_j0,
    convergence_study,
    error_norms,
    make_example,
    switch_time,
)

__version__ = "0.1.0"

__all__ = [
    "USING_NUMBA",
    "FocpError",
    "ParameterDomainError",
    "SchemeConstraintError",
    "ProblemValidationError",
    "EvaluationError",
    "Scheme",
    "FracIntegrationMatrix",
    "QuadratureWeights",
    "gl_weights",
    "gl_matrix",
    "tr_coeffs",
    "tr_matrix",
    "si_coeffs",
    "si_matrix",
    "build_matrix",
    "apply",
    "quad_weights",
    "FocpProblem",
    "ScaledFocp",
    "validate",
    "rescale",
    "DecisionLayout",
    "TranscribedNlp",
    "build",
    "fd_check",
    "SolverOptions",
    "SolveStatus",
    "NlpSolution",
    "solve",
    "kkt_residual",
    "ExampleId",
    "ErrorNorms",
    "ConvergenceStudy",
    "make_example",
    "bessel_j0",
    "error_norms",
    "convergence_study",
    "switch_time",
    "__version__",
]
