"""scikit-learn style wrappers around the functional API.

``GroundSpaceSampler.fit`` trains a generator, ``transform`` maps prior draws
to circuit angles and ``sample`` returns simulated states. ``SpanCertifier``
learns nothing from data beyond the exact ground space of its model; ``fit``
certifies an ensemble and ``score`` is the acceptance rate. ``LocalFeatures``
is a stateless transformer from statevectors to feature matrices.
"""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import generator as gen
from ._validation import check_states
from .features import FeatureSpec, compute_features_batch
from .models import SpinModelSpec, model_ground_space
from .pipeline import CERTIFY_DEFAULTS
from .spanlab import Thresholds, accept, certify, overlap_table
from .trainer import TrainConfig, train


class GroundSpaceSampler(BaseEstimator):
    """Trainable generator of (approximate) ground states.

    ``config`` is a TrainConfig or a dict accepted by ``TrainConfig.from_dict``;
    ``seed`` and ``max_iters`` override the matching config fields when set.
    """

    def __init__(self, config=None, seed=None, max_iters=None, run_dir=None):
        self.config = config
        self.seed = seed
        self.max_iters = max_iters
        self.run_dir = run_dir

    def _resolved_config(self):
        if self.config is None:
            raise ValueError("GroundSpaceSampler needs a config")
        cfg = self.config if isinstance(self.config, TrainConfig) else TrainConfig.from_dict(self.config)
        changes = {}
        if self.seed is not None:
            changes["seed"] = int(self.seed)
        if self.max_iters is not None:
            changes["max_iters"] = int(self.max_iters)
        return cfg.replace(**changes) if changes else cfg

    def fit(self, X=None, y=None):
        """Train; ``X`` and ``y`` are ignored (the data are the prior draws)."""
        cfg = self._resolved_config()
        result = train(cfg, self.run_dir)
        self.config_ = cfg
        self.params_ = result.params
        self.converged_ = result.converged
        self.n_iter_ = result.iterations
        self.history_ = result.history
        self.template_ = cfg.template
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("GroundSpaceSampler is not fitted yet; call fit first")

    def transform(self, X, eps=None):
        """Circuit angles for prior draws ``X`` of shape (n, n_params).

        ``eps`` is the latent noise; it defaults to zeros (the latent mean).
        """
        self._check_fitted()
        X = np.asarray(X, dtype=float)
        if eps is None:
            eps = np.zeros((np.atleast_2d(X).shape[0], self.params_.shape.latent_dim))
        theta, _ = gen.forward(self.params_, X, eps)
        return theta

    def sample(self, n_samples, seed=None):
        """(states, angles) for ``n_samples`` draws of the trained generator."""
        self._check_fitted()
        theta = gen.generate(self.params_, n_samples, self.config_.seed if seed is None else seed)
        if theta.shape[0] == 0:
            return np.zeros((0, self.template_.dim), dtype=complex), theta
        return self.template_.prepare_batch(theta), theta


class SpanCertifier(BaseEstimator):
    """Acceptance filtering and span diagnostics against the exact ground space."""

    def __init__(self, model="MG", n_sites=5, anisotropy=-1.0, energy_rel=None, overlap=None,
                 variant=None, rank_eps=None, subset_cap=None):
        self.model = model
        self.n_sites = n_sites
        self.anisotropy = anisotropy
        self.energy_rel = energy_rel
        self.overlap = overlap
        self.variant = variant
        self.rank_eps = rank_eps
        self.subset_cap = subset_cap

    def _setup(self):
        spec = SpinModelSpec(self.model, self.n_sites, self.anisotropy)
        defaults = CERTIFY_DEFAULTS[spec.model]
        pick = lambda value, key: defaults[key] if value is None else value  # noqa: E731
        thresholds = Thresholds(pick(self.energy_rel, "energy_rel"), pick(self.overlap, "overlap"),
                                pick(self.variant, "variant"))
        return spec, thresholds, pick(self.rank_eps, "rank_eps")

    def _energies(self, X):
        h = self.spec_.hamiltonian()
        return h.table.expectations(X) @ h.coefficients

    def fit(self, X, y=None):
        """Certify the states ``X`` (rows); ``y`` optionally supplies their energies."""
        spec, thresholds, eps = self._setup()
        self.spec_ = spec
        self.thresholds_ = thresholds
        self.ground_ = model_ground_space(spec)
        X = check_states(X, spec.n_qubits)
        energies = self._energies(X) if y is None else np.asarray(y, dtype=float)
        self.report_, self.accepted_ = certify(X, energies, self.ground_, thresholds, eps, self.subset_cap)
        return self

    def _check_fitted(self):
        if not hasattr(self, "ground_"):
            raise NotFittedError("SpanCertifier is not fitted yet; call fit first")

    def transform(self, X):
        """Overlap magnitudes |<g_j|psi_i>|, shape (n, r)."""
        self._check_fitted()
        return overlap_table(check_states(X, self.spec_.n_qubits), self.ground_.basis)

    def predict(self, X):
        """Boolean acceptance mask."""
        self._check_fitted()
        X = check_states(X, self.spec_.n_qubits)
        ens = accept(X, self._energies(X), self.ground_.energy, self.ground_.basis, self.thresholds_)
        mask = np.zeros(X.shape[0], dtype=bool)
        mask[ens.indices] = True
        return mask

    def score(self, X, y=None):
        """Acceptance rate of ``X``."""
        return float(self.predict(X).mean()) if len(X) else 0.0


class LocalFeatures(TransformerMixin, BaseEstimator):
    """Statevectors to local Pauli feature vectors (stateless)."""

    def __init__(self, kind="ONE_BODY", mode="exact", shots=None, seed=None):
        self.kind = kind
        self.mode = mode
        self.shots = shots
        self.seed = seed

    def fit(self, X, y=None):
        X = check_states(X, normalized=False)
        self.spec_ = FeatureSpec(self.kind, X.shape[1].bit_length() - 1)
        self.n_features_out_ = len(self.spec_)
        return self

    def transform(self, X):
        if not hasattr(self, "spec_"):
            raise NotFittedError("LocalFeatures is not fitted yet; call fit first")
        return compute_features_batch(X, self.spec_, self.mode, self.shots, self.seed)

    def get_feature_names_out(self, input_features=None):
        return np.array(self.spec_.labels, dtype=object)
