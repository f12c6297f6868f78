"""Blind extraction of one non-Gaussian source from complex linear mixtures.

The library estimates a single source (or one dependent source per
mixture, jointly over K mixtures) through the mixing-vector /
separating-vector pair (a, w) tied by the orthogonal constraint, using
gradient solvers with re-coupling, a one-unit fixed-point baseline, full
separation baselines, and the minimum-power distortionless beamformer.
``icex.simbench`` adds the seeded Monte-Carlo robustness benchmark behind
the ``icex`` command line.
"""

__version__ = "0.1.0"

from .baselines import (bs_delta, fica_batch, fica_one_unit,
                        fica_via_gradient, full_ica, ica_batch, ng_delta)
from .ice import (SolverConfig, SolverError, SolverTrace, contrast, grad_a,
                  grad_w, grad_w_full, ogice_a, ogice_s, ogice_w,
                  preconditioned_step, run_batch, switching_criterion)
from .ive import (JointParams, JointProblem, JointSolverTrace, grad_ive_a,
                  grad_ive_w, grad_ive_w_full, joint_contrast, ogive_a,
                  ogive_s, ogive_w, run_joint_batch, theta)
from .linalg import Rng
from .mixing import (DegenerateParameterError, DegenerateSignalError,
                     ExtractionParams, ModelMatrices, assemble,
                     background_basis, couple_a_from_w, couple_w_from_a, mpdr)
from .scores import (DegenerateScoreError, ScaledModel, ScoreModel,
                     score_rational, score_tanh, score_vector)
from .simbench import (ALGORITHMS, ExperimentConfig, Trial, TrialConfig,
                       build_trial, perturb_init, run_experiment, sir_db)

__all__ = [
    "__version__",
    "ALGORITHMS",
    "DegenerateParameterError",
    "DegenerateScoreError",
    "DegenerateSignalError",
    "ExperimentConfig",
    "ExtractionParams",
    "JointParams",
    "JointProblem",
    "JointSolverTrace",
    "ModelMatrices",
    "Rng",
    "ScaledModel",
    "ScoreModel",
    "SolverConfig",
    "SolverError",
    "SolverTrace",
    "Trial",
    "TrialConfig",
    "assemble",
    "background_basis",
    "bs_delta",
    "build_trial",
    "contrast",
    "couple_a_from_w",
    "couple_w_from_a",
    "fica_batch",
    "fica_one_unit",
    "fica_via_gradient",
    "full_ica",
    "grad_a",
    "grad_ive_a",
    "grad_ive_w",
    "grad_ive_w_full",
    "grad_w",
    "grad_w_full",
    "ica_batch",
    "joint_contrast",
    "mpdr",
    "ng_delta",
    "ogice_a",
    "ogice_s",
    "ogice_w",
    "ogive_a",
    "ogive_s",
    "ogive_w",
    "perturb_init",
    "preconditioned_step",
    "run_batch",
    "run_experiment",
    "run_joint_batch",
    "score_rational",
    "score_tanh",
    "score_vector",
    "sir_db",
    "switching_criterion",
    "theta",
]
