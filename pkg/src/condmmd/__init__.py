"""Conditional maximum mean discrepancy: estimators and two-sample tests."""

from .cmmd import (
    CmmdConfig,
    CmmdEstimate,
    DiscreteConditionalModel,
    cmmd0_sq,
    cmmd1_sq,
    cmmd2_sq,
    cmmd_s_sq,
    discrete_cmmd_sq,
    estimate,
    mmd_joint_sq,
)
from .datagen import ScenarioConfig, named_propensity, toy_tables
from .doubly_robust import CombinedSample, PropensityModel, cmmd_dr_sq
from .embeddings import ConditionalMeanEmbedding, PairedDataset, fit_cmo
from .estimators import CMMD, ConditionalTwoSampleTest
from .exceptions import CMMDError, InputError, NumericError
from .kernels import Gaussian, KroneckerDelta, Linear, Polynomial, TensorProduct
from .testing import TestConfig, TestResult, run_test

__version__ = "0.1.0"

__all__ = [
    "CMMD",
    "CMMDError",
    "CmmdConfig",
    "CmmdEstimate",
    "CombinedSample",
    "ConditionalMeanEmbedding",
    "ConditionalTwoSampleTest",
    "DiscreteConditionalModel",
    "Gaussian",
    "InputError",
    "KroneckerDelta",
    "Linear",
    "NumericError",
    "PairedDataset",
    "Polynomial",
    "PropensityModel",
    "ScenarioConfig",
    "TensorProduct",
    "TestConfig",
    "TestResult",
    "cmmd0_sq",
    "cmmd1_sq",
    "cmmd2_sq",
    "cmmd_dr_sq",
    "cmmd_s_sq",
    "discrete_cmmd_sq",
    "estimate",
    "fit_cmo",
    "mmd_joint_sq",
    "named_propensity",
    "run_test",
    "toy_tables",
]
