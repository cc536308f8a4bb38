"""scikit-learn style front end: planner, bit selector and secure classifier.

Each class stores constructor arguments untouched (so ``get_params`` and
``clone`` work) and learns its state in ``fit`` into trailing-underscore
attributes.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import bits as bits_mod
from .engine import SecureParams, secure_infer
from .nn import ModelGraph, apply_plan, forward, transform_model
from .planner import alternative_plans, build_distortion_table
from .validation import check_activations, check_fraction, check_int, check_nchw


class PatchPlanner(BaseEstimator, TransformerMixin):
    """Learns a patch plan for ``model`` from sample images.

    ``transform`` returns the last-layer outputs of the planned model and
    ``predict`` its argmax.
    """

    def __init__(self, model: ModelGraph = None, budget: int | None = None, budget_frac: float = 0.1,
                 mode: str = "optimal", bucket: int = 1, seed: int = 0, n_jobs: int = 1):
        self.model = model
        self.budget = budget
        self.budget_frac = budget_frac
        self.mode = mode
        self.bucket = bucket
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        if not isinstance(self.model, ModelGraph):
            raise TypeError("PatchPlanner needs a ModelGraph as `model`")
        model = transform_model(self.model)
        X = check_nchw(X, model.input_shape)
        check_int(self.bucket, "bucket", 1)
        self.table_ = build_distortion_table(model, X, check_int(self.n_jobs, "n_jobs", 1))
        if self.budget is None:
            budget = int(check_fraction(self.budget_frac, "budget_frac", inclusive_low=True) * self.table_.full_weight())
        else:
            budget = check_int(self.budget, "budget", 0)
        self.budget_ = budget
        self.plan_ = alternative_plans(self.table_, budget, self.mode, self.seed, bucket=self.bucket)
        self.model_ = apply_plan(model, self.plan_)
        self.drelu_count_ = self.plan_.weight(model)
        return self

    def transform(self, X):
        check_is_fitted(self, "plan_")
        return forward(self.model_, check_nchw(X, self.model_.input_shape), "float")

    def predict(self, X):
        return np.argmax(self.transform(X), axis=1)


class BitSelector(BaseEstimator, TransformerMixin):
    """Chooses how many high and low bits the approximate DReLU may ignore.

    ``transform`` returns the approximate DReLU bits of the inputs under the
    learned truncation, with fresh share splits drawn from ``seed``.
    """

    def __init__(self, target_error: float = 5e-4, repeats: int = 1, seed: int = 0, frac_bits: int = 16):
        self.target_error = target_error
        self.repeats = repeats
        self.seed = seed
        self.frac_bits = frac_bits

    def fit(self, X, y=None):
        A = check_activations(X)
        check_fraction(self.target_error, "target_error")
        self.config_ = bits_mod.recommend_bits(A, self.target_error, check_int(self.repeats, "repeats", 1),
                                               self.seed, self.frac_bits)
        self.error_ = bits_mod.empirical_error(A, self.config_, self.repeats, self.seed, self.frac_bits)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        A = check_activations(X)
        vals = bits_mod._as_ring(A, self.frac_bits)
        s0 = np.random.default_rng(self.seed).integers(0, 1 << 64, size=vals.shape, dtype=np.uint64)
        return bits_mod.approx_decisions(vals, s0, self.config_.k_msb, self.config_.k_lsb)


class SecureClassifier(BaseEstimator, ClassifierMixin):
    """Three-party secure inference behind ``predict``.

    Nothing is trained: ``fit`` validates the model and plan, and records the
    class labels (``range(n_outputs)`` unless ``y`` is given).
    """

    def __init__(self, model: ModelGraph = None, plan=None, frac_bits: int = 16, ignore_msb: int = 0,
                 ignore_lsb: int = 0, master_seed: str = "00" * 32, transport: str = "inprocess"):
        self.model = model
        self.plan = plan
        self.frac_bits = frac_bits
        self.ignore_msb = ignore_msb
        self.ignore_lsb = ignore_lsb
        self.master_seed = master_seed
        self.transport = transport

    def fit(self, X=None, y=None):
        if not isinstance(self.model, ModelGraph):
            raise TypeError("SecureClassifier needs a ModelGraph as `model`")
        self.model_ = transform_model(self.model)
        self.model_.frac_bits = self.frac_bits
        if self.plan is not None:
            apply_plan(self.model_, self.plan)
        n_out = self.model_.shapes[-1][0]
        self.classes_ = np.unique(y) if y is not None else np.arange(n_out)
        if len(self.classes_) != n_out:
            raise ValueError(f"model has {n_out} outputs but y has {len(self.classes_)} classes")
        self.params_ = SecureParams(self.frac_bits, self.ignore_msb, self.ignore_lsb)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_nchw(X, self.model_.input_shape)
        res = secure_infer(self.model_, X, self.plan, self.master_seed, self.params_, self.transport)
        self.last_ledger_ = res.ledger
        self.last_drelu_count_ = res.drelu_total
        return res.output

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
