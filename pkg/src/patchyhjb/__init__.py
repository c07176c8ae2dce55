"""Patchy power-series solutions of stationary HJB equations."""

from .albrekht import AlbrekhtSolution, albrekht_expand, albrekht_level, solve_are
from .errors import (
    AlbrekhtError,
    ConfigError,
    GeometryError,
    LyapunovViolation,
    OutOfRegion,
    PatchyError,
    RestPointError,
    RiccatiError,
    StageError,
)
from .partition import Atlas, build_atlas, evaluate, load_atlas, locate, save_atlas
from .patchcore import PatchSolution, ZInputs, assemble_patch, solve_scalar_hjb
from .problem import (
    LQR2D,
    HuntKrenerTestProblem,
    Problem,
    QuadraticOracle,
    TestProblemOracle,
    get_problem,
    register_problem,
)
from .tensorpoly import CoeffSet, affine_change, householder_basis, poly_eval, recover_partials

__version__ = "0.1.0"
