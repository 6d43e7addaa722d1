"""Abstraction-refinement solver for hierarchical MDPs built from one parametric template."""

from .errors import (CapExceeded, CoverageGap, DivergentReward, EngineError, GraphChange, HmdpError,
                     IterationCapExceeded, NotWellDefined, ParseError, SuitabilityViolation, ValidationError)
from .hierarchy import enumerate_baseline, flatten, flatten_and_solve
from .io import parse_macro, parse_template, serialize_macro, serialize_template
from .lifting import bound_results_for_set, check_one, to_region
from .model import (Call, Choice, Concrete, HierarchicalModel, Mode, Pmdp, Policy, Region, ResultBounds,
                    ResultVector, Template, validate)
from .numerics import expected_visits, max_expected_reward, robust_value_bounds
from .refine import RefineConfig, run

__version__ = "0.1.0"
