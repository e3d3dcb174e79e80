import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import random_state
from groundspan.estimators import GroundSpaceSampler, LocalFeatures, SpanCertifier
from groundspan.models import SpinModelSpec, model_ground_space

TINY = dict(model="MG", n_sites=3, depth=1, encoder=[6], latent_dim=2, decoder=[6], batch_size=4, eta=1e-3,
            lambda2_start=1.0, lambda2_end=0.2, features=["ONE_BODY"], max_iters=4)


def test_sampler_fit_sample():
    sampler = GroundSpaceSampler(TINY, seed=2).fit()
    states, thetas = sampler.sample(5)
    assert states.shape == (5, 8) and thetas.shape == (5, 30)
    assert sampler.n_iter_ == 4
    np.testing.assert_allclose(np.linalg.norm(states, axis=1), 1, atol=1e-10)
    assert sampler.transform(np.zeros((2, 30))).shape == (2, 30)


def test_sampler_unfitted():
    with pytest.raises(NotFittedError):
        GroundSpaceSampler(TINY).sample(3)


def test_sampler_clone_keeps_params():
    sampler = GroundSpaceSampler(TINY, seed=5, max_iters=2)
    assert clone(sampler).get_params() == sampler.get_params()


def test_certifier_on_exact_basis():
    ground = model_ground_space(SpinModelSpec("MG", 5))
    cert = SpanCertifier("MG", 5, variant="PROB_SUM", energy_rel=0.01, overlap=0.99).fit(ground.basis.T)
    assert cert.report_["rank"] == 4
    assert cert.score(ground.basis.T) == 1.0
    np.testing.assert_allclose(cert.transform(ground.basis.T), np.eye(4), atol=1e-12)


def test_certifier_rejects_random_states(rng):
    cert = SpanCertifier("MG", 5).fit(model_ground_space(SpinModelSpec("MG", 5)).basis.T)
    assert not cert.predict(random_state(rng, 5, batch=10)).any()


def test_certifier_unfitted():
    with pytest.raises(NotFittedError):
        SpanCertifier().predict(np.eye(32)[:1])


def test_local_features(rng):
    X = random_state(rng, 4, batch=3)
    lf = LocalFeatures("TWO_BODY_NN")
    out = lf.fit_transform(X)
    assert out.shape == (3, 36)
    assert lf.get_feature_names_out()[0] == "x0x1"
