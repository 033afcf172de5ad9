"""Shared fixtures: the bundled reference experiment at full detector scale."""
import numpy as np
import pytest

from twinbeam import (DetectorModel, TwinBeamParams, build_response,
                      twin_beam_joint)

REFERENCE = dict(M_p=270.0, B_p=0.032, M_s=0.01, B_s=7.6, M_i=0.026, B_i=5.3)
SIGNAL_PIXELS, IDLER_PIXELS = 6528, 6784
SIGNAL_EFFICIENCY, IDLER_EFFICIENCY = 0.23, 0.22
DARK_TOTAL = 0.04


@pytest.fixture(scope="session")
def reference_params():
    return TwinBeamParams(**REFERENCE)


@pytest.fixture(scope="session")
def signal_model():
    return DetectorModel.with_total_dark(SIGNAL_PIXELS, SIGNAL_EFFICIENCY, DARK_TOTAL)


@pytest.fixture(scope="session")
def idler_model():
    return DetectorModel.with_total_dark(IDLER_PIXELS, IDLER_EFFICIENCY, DARK_TOTAL)


@pytest.fixture(scope="session")
def reference_joint(reference_params):
    return twin_beam_joint(reference_params)


@pytest.fixture(scope="session")
def signal_response(signal_model, reference_joint):
    return build_response(signal_model, n_max=reference_joint.n_max)


@pytest.fixture(scope="session")
def idler_response(idler_model, reference_joint):
    return build_response(idler_model, n_max=reference_joint.n_max)
