"""Transport, continuity and nonlinear equations driven by coordinate-wise increasing fields."""

from .monotone_core import Grid, GridFunction, abv_decompose, abv_norm, envelope, is_decreasing, is_increasing, leq
from .regularize import MollifierKernel, inf_convolution, one_sided_mollify, regularize, sup_convolution
from .fields import VelocityField, GriddedField, make_field, catalog_entries
from .flow_engine import (FlowMap, check_comparison, integrate_regularized_flow, maximal_minimal_flow,
                          measure_bound, semigroup_residual)

__version__ = "0.1.0"
