"""Pool-based active learning for temporal action spotting, desk scale."""

from .data import (Clip, ConfigurationError, Dataset, DatasetParseError, DatasetSplit,
                   SegmentationError, Spot, SyntheticConfig, Video, generate_synthetic,
                   load_dataset, save_dataset, segment_video, spots_in_clip)
from .harness import (ALConfig, ALResult, ScheduleConfig, StopConfig, compare_strategies,
                      count_annotation_rounds, next_step_size, run_active_learning)
from .metrics import LearningCurve, aulc, avg_map, match_spots, md_at, mp_at
from .model import DivergenceError, ModelParams, TrainConfig, train
from .selection import SelectionConfig, em_score, score_pool, select_random, select_top_k, um_score
from .spotting import PredictedSpot, infer_video, nms_1d

__version__ = "0.1.0"
