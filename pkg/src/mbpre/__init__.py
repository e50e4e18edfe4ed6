"""
mbpre: multitype branching processes in random environment.

This library studies linear-fractional multitype branching processes whose
offspring laws share a common left eigenvector, with features such as:
- Exact quenched probabilities from the composed linear-fractional form
- Exact particle simulation and direct sampling of Z_n
- Environment models with exponential tilting and regime classification
- Random-walk functionals and the renewal function of the associated walk
- Monte Carlo limit constants in the strongly and intermediately
  supercritical regimes, with mergeable seeded accumulators
- A batch harness writing JSONL/CSV results and a run manifest
"""

from .accumulators import Estimate, EstimatorAccumulator
from .config import SCHEMA_VALIDATION_AVAILABLE, ExperimentConfig, Suite, load_config
from .environment import (
    EnvModel,
    Regime,
    RegimeReport,
    RhoLaw,
    ShapeLaw,
    ShiftLaw,
    classify,
    construct_law,
    tilt,
    weighted_expect,
)
from .exceptions import MbpreError
from .harness import RunManifest, emit_plotdata, run
from .intermediate import (
    conditional_law_at_minimum,
    estimate_interm_delta,
    estimate_q,
    k_independence,
    verify_interm_ratio,
)
from .limits import Horizons, multinomial_weight
from .linfrac import (
    LinFracLaw,
    QuenchedState,
    compose,
    gf_eval,
    local_prob_total,
    local_prob_vector,
    step,
    survival_probs,
)
from .parallel import ReplicaPool
from .simulator import (
    conditional_sampler,
    sample_offspring,
    sample_zn_direct,
    simulate_particles,
)
from .strong import (
    estimate_G_u,
    estimate_strong_constants,
    verify_p,
    verify_strong_ratio,
    verify_uniform,
)
from .walks import RenewalTable, functionals, prob_min_nonneg, renewal_function

__version__ = "0.1.0"
__all__ = [
    "EnvModel",
    "Estimate",
    "EstimatorAccumulator",
    "ExperimentConfig",
    "Horizons",
    "LinFracLaw",
    "MbpreError",
    "QuenchedState",
    "Regime",
    "RegimeReport",
    "RenewalTable",
    "ReplicaPool",
    "RhoLaw",
    "RunManifest",
    "SCHEMA_VALIDATION_AVAILABLE",
    "ShapeLaw",
    "ShiftLaw",
    "Suite",
    "classify",
    "compose",
    "conditional_law_at_minimum",
    "conditional_sampler",
    "construct_law",
    "emit_plotdata",
    "estimate_G_u",
    "estimate_interm_delta",
    "estimate_q",
    "estimate_strong_constants",
    "functionals",
    "gf_eval",
    "k_independence",
    "load_config",
    "local_prob_total",
    "local_prob_vector",
    "multinomial_weight",
    "prob_min_nonneg",
    "renewal_function",
    "run",
    "sample_offspring",
    "sample_zn_direct",
    "simulate_particles",
    "step",
    "survival_probs",
    "tilt",
    "verify_interm_ratio",
    "verify_p",
    "verify_strong_ratio",
    "verify_uniform",
    "weighted_expect",
]
