"""Score-based causal discovery by Bayesian optimization over a low-rank DAG space."""

from .graph import Dag, LatentPoint, vec_to_dag, vec_to_adj_batch, grad_flow, is_acyclic
from .datagen import Dataset, ScmSpec, sample_er_dag, sample_sf_dag, sample_linear_weights, simulate, standardize
from .scoring import ScoreConfig, LocalScoreCache, EvaluationRecord, Scorer, score_dag, bic_ev, bic_nv, bic_logistic
from .surrogate import DropoutNet, SurrogateEnsemble, ReplayBuffer, forward_stochastic, thompson_sample_locals, combine_af, train_continual, reservoir_update
from .engine import TrustRegion, RunConfig, RunTrace, run, diversity_probe, lhd_initial, propose_candidates, acquisition_rank, update_trust_region
from .pruning import prune_linear_threshold, prune_ci
from .metrics import MetricReport, metrics

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
