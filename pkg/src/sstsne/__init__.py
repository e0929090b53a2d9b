"""Semi-supervised Barnes-Hut t-SNE with interactive groupwise labeling.

The package couples a label-aware t-SNE optimizer with an annotator model:
annotations reshape the embedding through per-pair attraction/repulsion
priors while the embedding, in turn, makes groupwise labeling cheap. It
ships an emulated annotator for batch experiments, active-learning
baselines for comparison, embedding-quality metrics, a session server for
human annotators, and a scikit-learn style estimator facade.
"""

__version__ = "0.1.0"

from . import spatial
from .activelearn import (ALConfig, ALCurve, MlpClassifier, actions_to_fraction,
                          predict_proba, reference_accuracy, run_active_learning,
                          run_tsne_strategy, select_batch, train_incremental)
from .affinity import AffinityMatrix, compute_affinities, conditional_probs, symmetrize
from .dataset import (DataError, Dataset, FoldSplit, kfold_split, load_dataset,
                      make_synthetic_gaussians, stratified_subsample)
from .emulator import (ActionLog, LabelingEvent, SessionComplete,
                       count_opportunities, emulate_group_label, exact_knn,
                       run_session, select_focus)
from .engine import (AnnotationState, EmbeddingState, Engine, EngineError,
                     TsneConfig, apply_label, attraction_prior, gradient,
                     init_embedding, kl_divergence, load_checkpoint,
                     repulsion_prior, save_checkpoint, schedules, step,
                     update_point_rates)
from .estimator import SemiSupervisedTSNE, ShallowMlpClassifier
from .metrics import KnnReport, efficiency_curve, knn_accuracy, knn_over_epochs

__all__ = [
    "ALConfig", "ALCurve", "ActionLog", "AffinityMatrix", "AnnotationState",
    "DataError", "Dataset", "EmbeddingState", "Engine", "EngineError",
    "FoldSplit", "KnnReport", "LabelingEvent", "MlpClassifier",
    "SemiSupervisedTSNE", "SessionComplete", "ShallowMlpClassifier",
    "TsneConfig", "actions_to_fraction", "apply_label", "attraction_prior",
    "compute_affinities", "conditional_probs", "count_opportunities",
    "efficiency_curve", "emulate_group_label", "exact_knn", "gradient",
    "init_embedding", "kfold_split", "kl_divergence", "knn_accuracy",
    "knn_over_epochs", "load_checkpoint", "load_dataset",
    "make_synthetic_gaussians", "predict_proba", "reference_accuracy",
    "repulsion_prior", "run_active_learning", "run_session",
    "run_tsne_strategy", "save_checkpoint", "schedules", "select_batch",
    "select_focus", "spatial", "step", "stratified_subsample", "symmetrize",
    "train_incremental", "update_point_rates",
]
