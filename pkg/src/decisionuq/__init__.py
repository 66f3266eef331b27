"""Decision-theoretic uncertainty quantification for black-box text generators."""
from .calibration import (BinSpec, CalibrationRecord, ReliabilityDiagram, aurac, bootstrap_ci, ece,
                          prompt_confidence, reliability_diagram)
from .decision import (CandidateSet, SubjectiveUncertainty, bayes_risk, expected_gibbs_uncertainty,
                       gibbs_uncertainty, mbr_select, split_samples)
from .epistemic import (EUEstimate, EUParams, PseudoChain, estimate_eu, estimate_tu, rewrite_inputs,
                        sample_chain)
from .utility import (RiskTransform, UtilityMatrix, UtilitySpec, chrf, exact_match, judge_utility,
                      pairwise_matrix, token_f1)

__version__ = "0.1.0"
