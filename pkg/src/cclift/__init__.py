"""Horizontal lifting through submersions and Carnot-Caratheodory geometry of
vector-field families: brackets, flows, approximate exponentials, composite
exponential maps, ball-box checks and completeness under renewal."""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    BlowUp,
    CCLiftError,
    DimensionMismatch,
    LeftDomain,
    NotInCertifiedBall,
    NotInRange,
    RankDeficient,
    RankZero,
    SpecFileError,
    StepBudgetExceeded,
    UnknownSystem,
    WordTooLong,
)
from .linalg import least_norm_solve, pinv_op_norm_identity, pseudoinverse, wedge_coordinates
from .fields import Frame, VectorField, Word, enumerate_frame, lie_bracket, nested_commutator
from .integrate import IntegratorConfig, dopri5
from .flow import EMap, HVector, approx_exp, commutator_flow, e_jacobian, e_map, homogeneous_norm
from .lifting import (
    Submersion,
    TargetPath,
    estimate_C0,
    horizontal_lift,
    named_submersion,
    open_map_solve,
    verify_horizontal,
)
from .frame import check_involutivity, maximal_frame, subunit_norm
from .ballbox import ball_box_verify, calibrate_delta, sample_cc_ball, solve_e_map
from .palais import ControlSchedule, Trajectory, detect_blowup, integrate_cauchy
from .systems import BUILTIN_NAMES, SystemSpec, builtin, load_spec, load_spec_file

__all__ = [
    "BlowUp",
    "CCLiftError",
    "DimensionMismatch",
    "LeftDomain",
    "NotInCertifiedBall",
    "NotInRange",
    "RankDeficient",
    "RankZero",
    "SpecFileError",
    "StepBudgetExceeded",
    "UnknownSystem",
    "WordTooLong",
    "least_norm_solve",
    "pinv_op_norm_identity",
    "pseudoinverse",
    "wedge_coordinates",
    "Frame",
    "VectorField",
    "Word",
    "enumerate_frame",
    "lie_bracket",
    "nested_commutator",
    "IntegratorConfig",
    "dopri5",
    "EMap",
    "HVector",
    "approx_exp",
    "commutator_flow",
    "e_jacobian",
    "e_map",
    "homogeneous_norm",
    "Submersion",
    "TargetPath",
    "estimate_C0",
    "horizontal_lift",
    "named_submersion",
    "open_map_solve",
    "verify_horizontal",
    "check_involutivity",
    "maximal_frame",
    "subunit_norm",
    "ball_box_verify",
    "calibrate_delta",
    "sample_cc_ball",
    "solve_e_map",
    "ControlSchedule",
    "Trajectory",
    "detect_blowup",
    "integrate_cauchy",
    "BUILTIN_NAMES",
    "SystemSpec",
    "builtin",
    "load_spec",
    "load_spec_file",
]
