"""Twin-beam photon statistics: detector response modeling, maximum-likelihood
reconstruction and intensity-moment nonclassicality analysis."""

__version__ = "0.1.0"

from .criteria import (IdentifierSpec, IdentifierValue, MomentMatrix,
                       enumerate_identifiers, evaluate_identifier, majorizes,
                       minor_criteria, minor_to_majorization, moment_matrix)
from .detector import (DetectorModel, ResponseMatrix, apply_response,
                       build_response, conditional_theory, photocount_joint,
                       response_element, sample_physical, signal_count_theory)
from .distributions import (JointPhotonDistribution, MomentSet,
                            PhotonDistribution, TwinBeamParams,
                            count_factorial_moment, factorial_moment, fano,
                            fock_moments, make_distribution, mandel_rice,
                            mandel_rice_moments, moments, poisson_moments,
                            thermal_moments, twin_beam_joint)
from .errors import (DegenerateHistogramError, HistogramFormatError,
                     MomentOrderError, NumericalInstabilityError,
                     TruncationError, TwinBeamError, VacuumError,
                     ZeroConditionError)
from .experiment import (ConditionalReport, ExperimentConfig, analyze,
                         bootstrap_error, moment_error, simulate)
from .reconstruct import (EmDiagnostics, FitResult, JointPhotocountHistogram,
                          PhotocountHistogram, conditional_histogram, em_reconstruct,
                          em_step, fit_twin_beam)

__all__ = [name for name in dir() if not name.startswith("_")]
