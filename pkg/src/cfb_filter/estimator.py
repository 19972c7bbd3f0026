"""scikit-learn style wrapper around the feature-bank OOD filter."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .bank import FeatureBankSet
from .exceptions import UnknownClassError, ValidationError
from .filtering import filter_predictions
from .scoring import k_from_ratio, ood_scores
from .threshold import BetaSchedule, ThresholdPolicy, ThresholdTracker


class CFBOODDetector(OutlierMixin, BaseEstimator):
    """Class-wise feature bank OOD detector.

    ``fit(X, y)`` fills one FIFO bank per class with the rows of ``X``
    (the last ``capacity`` rows of each class are kept). Scoring methods
    take the *predicted* class of every query row as their second argument
    and compare the row against that class's bank only.

    Parameters
    ----------
    capacity : int, default=100
        Prototypes kept per class.
    knn_ratio : float, default=0.05
        Fraction of ``capacity`` used as the number of neighbours K.
    metric : {'cosine', 'l1', 'l2'}, default='cosine'
    threshold : {'adaptive', 'fixed'}, default='adaptive'
    beta_init, beta_final : float, default=1.0, 2.0
        Endpoints of the linear beta schedule over ``total_steps``.
    fixed_tau : float, default=0.5
        Cut-off used when ``threshold='fixed'``.
    total_steps : int, default=1
        Schedule length T; pass ``step`` in ``[0, T]`` to the scoring
        methods.
    n_jobs : int, default=1
        Threads for batch scoring. Results do not depend on it.

    Attributes
    ----------
    classes_ : ndarray of int
    bank_set_ : FeatureBankSet
    k_ : int
    n_features_in_ : int
    """

    def __init__(
        self,
        capacity=100,
        knn_ratio=0.05,
        metric="cosine",
        threshold="adaptive",
        beta_init=1.0,
        beta_final=2.0,
        fixed_tau=0.5,
        total_steps=1,
        n_jobs=1,
    ):
        self.capacity = capacity
        self.knn_ratio = knn_ratio
        self.metric = metric
        self.threshold = threshold
        self.beta_init = beta_init
        self.beta_final = beta_final
        self.fixed_tau = fixed_tau
        self.total_steps = total_steps
        self.n_jobs = n_jobs

    def _policy(self) -> ThresholdPolicy:
        if self.threshold == "fixed":
            return ThresholdPolicy.fixed(self.fixed_tau, self.metric)
        mode = "fixed" if self.beta_init == self.beta_final else "linear"
        return ThresholdPolicy("adaptive", BetaSchedule(self.beta_init, self.beta_final, self.total_steps, mode))

    def fit(self, X, y, classes=None):
        self.k_ = k_from_ratio(self.capacity, self.knn_ratio)
        self._policy()
        X, y = self._check_xy(X, y, reset=True)
        self.classes_ = np.unique(y) if classes is None else np.unique(np.asarray(classes, dtype=int))
        self.bank_set_ = FeatureBankSet(len(self.classes_), self.capacity, X.shape[1], class_ids=self.classes_)
        self._tracker = ThresholdTracker(self.k_, self.metric)
        self.bank_set_.push_many(y, X)
        return self

    def partial_fit(self, X, y, classes=None):
        """Push more labeled rows; the first call needs ``classes`` unless ``fit`` ran."""
        if not hasattr(self, "bank_set_"):
            if classes is None:
                raise ValidationError("classes must be passed on the first call to partial_fit")
            return self.fit(X, y, classes=classes)
        X, y = self._check_xy(X, y, reset=False)
        self.bank_set_.push_many(y, X)
        return self

    def _check_xy(self, X, y, reset):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValidationError("y must be 1-D with one entry per row of X")
        if y.size and not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValidationError("class labels must be integers")
        y = y.astype(int)
        if reset:
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise ValidationError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X, y

    def _check_query(self, X, y):
        check_is_fitted(self, "bank_set_")
        X, y = self._check_xy(X, y, reset=False)
        unknown = set(y.tolist()) - set(self.classes_.tolist())
        if unknown:
            raise UnknownClassError(f"classes {sorted(unknown)} were not seen in fit")
        return X, y

    @property
    def is_warm_(self) -> bool:
        check_is_fitted(self, "bank_set_")
        return self.bank_set_.is_warm()

    def ood_score(self, X, y) -> np.ndarray:
        """OOD score per row against the bank of class ``y[i]``; higher is more OOD."""
        X, y = self._check_query(X, y)
        out = np.empty(X.shape[0])
        for c in np.unique(y):
            m = y == c
            out[m] = ood_scores(X[m], self.bank_set_.bank(c), self.k_, self.metric, n_jobs=self.n_jobs)
        return out

    def score_samples(self, X, y):
        """Negated OOD score, so that lower means more abnormal."""
        return -self.ood_score(X, y)

    def thresholds(self, step=0) -> dict:
        check_is_fitted(self, "bank_set_")
        return self._tracker.thresholds(self.bank_set_, self._policy(), step)

    def decision_function(self, X, y, step=0):
        """``tau[y] - score``; non-negative values are inliers."""
        taus = self.thresholds(step)
        scores = self.ood_score(X, y)
        return np.array([taus[int(c)] for c in np.asarray(y, dtype=int)]) - scores

    def predict(self, X, y, step=0):
        """+1 for rows kept as in-distribution, -1 for rows rejected as OOD."""
        return np.where(self.decision_function(X, y, step) >= 0, 1, -1)

    def fit_predict(self, X, y=None, **kwargs):
        if y is None:
            raise ValidationError("fit_predict needs class labels")
        return self.fit(X, y).predict(X, y, **kwargs)

    def filter(self, predictions, conf_tau=0.7, step=0, on_cold="bypass"):
        """Run the confidence + OOD gate on :class:`PseudoPrediction` objects."""
        check_is_fitted(self, "bank_set_")
        return filter_predictions(
            predictions, self.bank_set_, self.k_, self.metric, self._policy(), conf_tau, step,
            tracker=self._tracker, on_cold=on_cold, n_jobs=self.n_jobs,
        )
