"""Quadratic-form CLT limits, lattice point counts, and theta identities."""

from .edgeworth import (CrossValidation, EdgeworthSpec, cross_validate_edgeworth,
                        edgeworth_fourier, edgeworth_measure, make_edgeworth_spec)
from .empirics import (ConcentrationEstimate, DeltaEstimate, ExactQFTable,
                       TruncationReport, charfn_qf_exact, concentration,
                       estimate_delta, exact_cdf_product, rate_fit, sample_sn,
                       truncate)
from .errors import (BudgetError, CapExceededError, QfcltError, QuadratureError,
                     ValidationError)
from .gaussianqf import (CdfResult, InversionResult, SpectralQF, cdf_gaussian_qf,
                         cdf_gaussian_qf_grid, cf_gaussian_qf, cf_modulus,
                         make_spectral, prawitz_invert)
from .lattice import (AlphaProfile, FlowMatrices, Lattice, NormSpec,
                      SuccessiveMinima, alpha_characteristic, apply_flow,
                      build_flow, count_ellipsoid, count_norm_ball,
                      gm_integral_probe, lll_reduce, successive_minima)
from .model import (ConditionReport, CovarianceModel, QuadraticForm,
                    ShiftedInstance, SourceDistribution, build_covariance,
                    build_quadratic_form, check_ball_lower_bounds,
                    identity_covariance, identity_form, symmetrize)
from .rng import child_stream, child_streams
from .theta import (BilinearProbe, PoissonCheck, SymCheckResult,
                    SymmetrizationInstance, ThetaParams, ThetaValue,
                    WeightDomination, WeightTable, bilinear_cf_probe,
                    make_weight_table, poisson_check, symmetrization_check,
                    theta_series, weight_domination_check)

__version__ = "0.1.0"
