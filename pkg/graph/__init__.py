from .state import ScoreResult, ScoringState
from .workflow import build_workflow, score_sample
