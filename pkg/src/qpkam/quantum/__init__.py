from .explicit import explicit_hyperbolic, explicit_parabolic, quadrature_sobolev
from .gaussian import gaussian_evolve, gaussian_hermite, gaussian_sobolev, gaussian_trace
from .growth import GrowthFit, GrowthLaw, InsufficientSamplesError, fit_growth, predict_growth
from .hermite import (HermiteState, SobolevTrace, hermite_evolve, hermite_functions,
                      norm_equivalence_check, norm_equivalence_ratio, sobolev_norm)
from .symbols import QuadraticSymbol, generator_samples, weyl_matrix
