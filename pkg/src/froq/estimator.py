"""scikit-learn style front end.

``QualityObserver`` takes image paths as ``X``. ``fit`` calibrates the
observer (computing pseudo-labels unless ``y`` is given) and
``score_samples`` returns one quality score per image from a single forward
pass each.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .auxiliary import AuxParams, PseudoLabelSet, pseudo_label_set
from .backend import load_model
from .calibration import calibrate
from .exceptions import InvalidParameter
from .observer import bind, score_batch


class QualityObserver(TransformerMixin, BaseEstimator):
    """Face image quality from the activation norms of a recognition model.

    Parameters
    ----------
    model_path : str or Path
        ONNX face-recognition model (manifest sidecar is picked up).
    top_b : int, default=10
        Taps admitted to the greedy subset search.
    normalize : bool, default=False
        Min-max scale tap norms before averaging them.
    alpha, occlusion_size, seed
        Pseudo-label perturbation settings, used only when ``fit`` gets no ``y``.
    threads : int or None
        Worker threads; ``None`` reads ``FROQ_THREADS``.
    """

    def __init__(self, model_path=None, top_b=10, normalize=False, alpha=0.001,
                 occlusion_size=14, seed=0, threads=None):
        self.model_path = model_path
        self.top_b = top_b
        self.normalize = normalize
        self.alpha = alpha
        self.occlusion_size = occlusion_size
        self.seed = seed
        self.threads = threads

    def _session(self):
        if self.model_path is None:
            raise InvalidParameter("model_path is required")
        return load_model(self.model_path)

    def fit(self, X, y=None):
        paths = [str(p) for p in X]
        session = self._session()
        if y is None:
            params = AuxParams(self.alpha, self.occlusion_size, self.seed)
            labels = pseudo_label_set(session, paths, params, self.threads)
        else:
            y = np.asarray(y, dtype=np.float64)
            if y.shape != (len(paths),):
                raise InvalidParameter("y must hold one label per image")
            labels = PseudoLabelSet(list(zip(paths, y.tolist())), model_identity=session.model_identity)
        self.labels_ = labels
        self.config_, self.report_ = calibrate(
            session, labels.paths, labels, b=self.top_b, normalize=self.normalize,
            threads=self.threads)
        self.session_ = bind(session, self.config_)
        self.taps_ = list(self.config_.taps)
        return self

    @classmethod
    def from_config(cls, config, model_path, **params):
        """A fitted observer from a saved configuration."""
        obs = cls(model_path=model_path, **params)
        obs.config_ = config
        obs.session_ = bind(obs._session(), config)
        obs.taps_ = list(config.taps)
        return obs

    def score_samples(self, X):
        check_is_fitted(self, "config_")
        paths = [str(p) for p in X]
        scored = dict(score_batch(self.session_, self.config_, paths, self.threads))
        return np.array([scored.get(p, np.nan) for p in paths])

    def transform(self, X):
        return self.score_samples(X)[:, None]

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("session_", None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        if "config_" in state:
            self.session_ = bind(self._session(), self.config_)
