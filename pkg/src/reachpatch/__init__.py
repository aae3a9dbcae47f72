"""Reachability-envelope patch covers and constraint-aware mesh refinement
for curvature-bounded trajectory optimization."""

from .geometry import (CurveSegment, CurveWord, DegenerateFrameError,
                       OrientedPoint, RigidMotion, SegmentKind,
                       canonical_frame, propagate, word_endpoint, wrap_2pi,
                       wrap_pi)
from .dubins import dubins_min_length, dubins_shortest, dubins_words
from .envelope import (EnvelopeQuery, Extents, InfeasibleQueryError, RectPatch,
                       Scenario, Turn, bottommost_bound, build_patches,
                       build_patches_batch, horizontal_bounds,
                       middle_circle_bounds_ccccc, upmost_bound)
from .lengtheq import (CaseInfeasibleError, LengthEquationCase,
                       NoConvergenceError, solve_length_eq_opposite,
                       solve_length_eq_same)

__version__ = "0.1.0"
