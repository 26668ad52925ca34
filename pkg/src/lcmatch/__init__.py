"""Variable-importance distance metrics for almost-exact matching and CATE estimation."""

from .dataset import Dataset, FoldPlan, Schema, Standardization, dummify, load_csv, load_dataset, make_folds, standardize
from .dgp import DgpSample, generate
from .estimate import CateEstimates, RunConfig, RunResult, ate, crossfit_run
from .matching import GroupSet, MatchedGroup, lap_match, match_groups, prognostic_match
from .metric import DistanceMetric, LassoConfig, TreeConfig

__version__ = "0.1.0"
