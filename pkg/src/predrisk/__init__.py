"""Interaction-aware trajectory prediction and time-continuous collision risk for highway driving."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .scene import ContextGrid, LaneGeometry, MotionState, Obb, Track, assign_context_grid, obb_at
from .autodiff import Tensor, backward
from .optim import AdamState, adam_step, grad_check, load_checkpoint, save_checkpoint
from .data import Sample, extract_windows, parse_highd, parse_ngsim, preprocess, split_dataset
from .model import AblationConfig, GaussianTrajectory, ModelConfig, Predictor, baseline_predict
from .training import EvalReport, TrainConfig, evaluate, nll_loss, rmse_loss, train
from .planning import CandidateTrajectory, SplineTrajectory, candidates, eval_pose, quintic_lateral, spline_fit
from .risk import (
    RiskMap,
    RiskParams,
    RiskProfile,
    aggregate_risk,
    distance_margin,
    mdm,
    pair_risk,
    risk_map,
    sat_overlap,
    ttc,
)
from .scenarios import Scenario, assess, read_scenario, write_scenario
