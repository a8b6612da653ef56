"""Single-pass face image quality from a recognition model's own activations."""

from .auxiliary import AuxParams, PseudoLabelSet, pseudo_label, pseudo_label_set
from .backend import InferenceSession, ModelManifest, TapPoint, list_taps, load_model, run
from .calibration import (
    CalibrationReport,
    GreedyCorrelationSelector,
    LayerScoreMatrix,
    calibrate,
    greedy_select,
    layer_correlations,
    layer_scan,
)
from .estimator import QualityObserver
from .evaluation import (
    EdcCurve,
    EmbeddingStore,
    PairProtocol,
    edc_curve,
    embed_set,
    pauc,
    threshold_at_fmr,
    verification_scores,
)
from .observer import ObserverConfig, ScoreFile, aggregate, load_config, save_config, score, score_batch
from .stats import cosine_similarity, quantile_threshold, rank, spearman

__version__ = "0.1.0"
