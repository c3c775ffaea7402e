from dataclasses import replace

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import norm

from src.errors import ConfigError, ShapeError
from src.models import (
    EncoderOutput,
    GenerativeModel,
    build_model,
    elbo_gradients,
    elbo_ivae,
    elbo_vade_mc,
    elbo_vae,
    encode,
    gaussian_log_likelihood,
    kl_diag_gaussians,
    load_model,
    reparameterize,
    responsibilities,
    save_model,
)
from src.ndmath import RngStream
from src.nn import MlpParams, MlpSpec, forward, one_hot
from src.priors import ConditionalGaussianPrior, GaussianMixturePrior, build_rademacher_hasher
from src.state import ModelKind

LOG_2PI = np.log(2 * np.pi)


def _model(kind, K=7, d_x=5, d_z=5, hidden=(8, 8), dropout=0.1, seed=0, decoder_log_var=np.log(0.5)):
    n_labels = K if kind is ModelKind.IVAE else 0
    encoder = MlpSpec(layer_widths=(d_x + n_labels, *hidden, 2 * d_z), dropout_rate=dropout)
    decoder = MlpSpec(layer_widths=(d_z, *hidden, d_x), dropout_rate=dropout)
    return build_model(kind, encoder, decoder, K, decoder_log_var, RngStream(seed), seed=seed)


def _zero_weights(params: MlpParams) -> None:
    for w in params.weights:
        w[...] = 0.0
    for b in params.biases:
        b[...] = 0.0


def _central_difference(f, array, index, h=1e-5):
    original = array[index]
    array[index] = original + h
    up = f()
    array[index] = original - h
    down = f()
    array[index] = original
    return (up - down) / (2 * h)


def _check_all_gradients(model, x, u, rng, objective, kl_estimator=None):
    _, grads = elbo_gradients(model, x, u, rng.clone(), kl_estimator=kl_estimator)
    params = model.parameters()
    assert set(grads) == set(params)
    checked = 0
    for name, array in params.items():
        for index in np.ndindex(array.shape):
            numeric = _central_difference(lambda: objective(rng.clone()), array, index)
            assert grads[name][index] == pytest.approx(numeric, rel=1e-4, abs=1e-6), f"{name}{index}"
            checked += 1
    assert checked >= 100


def test_vae_gradients_match_finite_differences():
    model = _model(ModelKind.VAE, seed=1)
    x = RngStream(2).normal((8, 5))
    rng = RngStream(3)
    _check_all_gradients(model, x, None, rng, lambda r: elbo_vae(model, x, r).total)


def test_vae_sampled_kl_gradients_match_finite_differences():
    model = _model(ModelKind.VAE, seed=4)
    x = RngStream(5).normal((8, 5))
    rng = RngStream(6)
    _check_all_gradients(
        model, x, None, rng, lambda r: elbo_vae(model, x, r, kl_estimator="sample").total, kl_estimator="sample"
    )


def test_ivae_gradients_match_finite_differences():
    model = _model(ModelKind.IVAE, seed=7)
    x = RngStream(8).normal((8, 5))
    u = RngStream(9).integers(0, 7, 8)
    rng = RngStream(10)
    _check_all_gradients(model, x, u, rng, lambda r: elbo_ivae(model, x, u, r).total)


def test_vade_gradients_match_finite_differences():
    model = _model(ModelKind.VADE, seed=11)
    model.prior.logits[:] = RngStream(12).normal(7)
    x = RngStream(13).normal((8, 5))
    rng = RngStream(14)
    _check_all_gradients(model, x, None, rng, lambda r: elbo_vade_mc(model, x, r).total)


def _ivae_twin(vae: GenerativeModel) -> GenerativeModel:
    """An iVAE with one u value, a N(0, I) prior and the VAE's networks."""
    w0 = vae.encoder.weights[0]
    encoder = MlpParams([np.vstack([w0, np.zeros((1, w0.shape[1]))]), *vae.encoder.weights[1:]], vae.encoder.biases)
    widths = vae.encoder_spec.layer_widths
    return GenerativeModel(
        kind=ModelKind.IVAE,
        encoder_spec=replace(vae.encoder_spec, layer_widths=(widths[0] + 1, *widths[1:])),
        encoder=encoder,
        decoder_spec=vae.decoder_spec,
        decoder=vae.decoder,
        prior=ConditionalGaussianPrior(means=np.zeros((1, vae.d_z)), log_vars=np.zeros((1, vae.d_z))),
        decoder_log_var=vae.decoder_log_var,
    )


def _vade_twin(vae: GenerativeModel) -> GenerativeModel:
    prior = GaussianMixturePrior(logits=np.zeros(1), means=np.zeros((1, vae.d_z)), log_vars=np.zeros((1, vae.d_z)))
    return replace(vae, kind=ModelKind.VADE, prior=prior)


def test_one_value_ivae_collapses_to_vae():
    for trial in range(100):
        vae = _model(ModelKind.VAE, seed=trial)
        ivae = _ivae_twin(vae)
        x = RngStream(trial, 1).normal((1 + trial % 9, 5))
        rng = RngStream(trial, 2)
        expected = elbo_vae(vae, x, rng.clone())
        got = elbo_ivae(ivae, x, np.zeros(x.shape[0], dtype=np.int64), rng.clone())
        assert (got.recon, got.kl, got.total) == (expected.recon, expected.kl, expected.total)


def test_one_component_vade_collapses_to_vae():
    for trial in range(100):
        vae = _model(ModelKind.VAE, seed=trial)
        vade = _vade_twin(vae)
        x = RngStream(trial, 1).normal((1 + trial % 9, 5))
        rng = RngStream(trial, 2)
        expected = elbo_vae(vae, x, rng.clone(), kl_estimator="sample")
        got = elbo_vade_mc(vade, x, rng.clone())
        assert (got.recon, got.kl, got.total) == (expected.recon, expected.kl, expected.total)


@pytest.mark.parametrize("kind", list(ModelKind))
def test_total_is_recon_minus_kl(kind, rng):
    model = _model(kind)
    x = rng.normal((6, 5))
    u = rng.integers(0, 7, 6) if kind is ModelKind.IVAE else None
    breakdown, _ = elbo_gradients(model, x, u, rng)
    assert breakdown.total == breakdown.recon - breakdown.kl


def test_zero_weight_encoder_emits_bias():
    model = _model(ModelKind.VAE, d_z=2, d_x=3)
    _zero_weights(model.encoder)
    model.encoder.biases[-1][:] = [0.1, 0.2, -1.0, -2.0]
    enc = encode(model, np.ones((4, 3)))
    assert np.array_equal(enc.mu, np.tile([0.1, 0.2], (4, 1)))
    assert np.array_equal(enc.log_var, np.tile([-1.0, -2.0], (4, 1)))


def test_ivae_encoder_sees_one_hot_u(rng):
    model = _model(ModelKind.IVAE, K=3, d_x=2, d_z=2)
    x = rng.normal((64, 2))
    u = np.ones(64, dtype=np.int64)
    enc = encode(model, x, u)
    out, _ = forward(model.encoder, model.encoder_spec, np.hstack([x, one_hot(u, 3)]), train_mode=False)
    assert enc.mu.shape == (64, 2)
    assert np.allclose(enc.mu, out[:, :2], atol=1e-12)
    assert np.array_equal(np.hstack([x, one_hot(u, 3)])[0, 2:], [0.0, 1.0, 0.0])


def test_encode_checks_u(rng):
    x = rng.normal((3, 5))
    with pytest.raises(ShapeError, match="takes no u"):
        encode(_model(ModelKind.VAE), x, np.zeros(3, dtype=np.int64))
    ivae = _model(ModelKind.IVAE)
    with pytest.raises(ShapeError, match="needs u"):
        encode(ivae, x)
    with pytest.raises(ShapeError, match="must lie in"):
        encode(ivae, x, np.array([0, 7, 1]))


def test_wrong_kind_is_rejected(rng):
    x = rng.normal((3, 5))
    with pytest.raises(ConfigError):
        elbo_vae(_model(ModelKind.VADE), x, rng)
    with pytest.raises(ConfigError):
        elbo_vade_mc(_model(ModelKind.VAE), x, rng)


def test_reparameterize_limits(rng):
    mu = rng.normal((4, 3))
    z = reparameterize(EncoderOutput(mu=mu, log_var=np.full((4, 3), -50.0)), rng)
    assert np.allclose(z, mu, atol=1e-10, rtol=0)

    draws = reparameterize(EncoderOutput(mu=np.zeros((100_000, 1)), log_var=np.zeros((100_000, 1))), rng)
    assert draws.var() == pytest.approx(1.0, rel=0.05)


def test_gaussian_log_likelihood_examples(rng):
    assert gaussian_log_likelihood(np.zeros((1, 1)), np.zeros((1, 1)), 0.0) == pytest.approx(-0.5 * LOG_2PI)
    assert gaussian_log_likelihood(np.ones((1, 1)), np.zeros((1, 1)), 0.0) == pytest.approx(-0.5 * LOG_2PI - 0.5)

    x, x_hat = rng.normal((7, 4)), rng.normal((7, 4))
    expected = norm.logpdf(x, loc=x_hat, scale=np.sqrt(0.3)).sum(axis=1).mean()
    assert gaussian_log_likelihood(x, x_hat, np.log(0.3)) == pytest.approx(expected, abs=1e-12)
    with pytest.raises(ShapeError):
        gaussian_log_likelihood(x, x_hat[:, :3], 0.0)


def test_kl_examples():
    assert kl_diag_gaussians(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3))) == 0.0
    assert kl_diag_gaussians(np.ones((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1))) == pytest.approx(0.5)


def test_kl_matches_monte_carlo(rng):
    q_mu, q_lv = rng.normal((1, 3)), 0.5 * rng.normal((1, 3))
    p_mu, p_lv = rng.normal((1, 3)), 0.5 * rng.normal((1, 3))
    z = q_mu + np.exp(0.5 * q_lv) * rng.normal((1_000_000, 3))
    log_ratio = (
        norm.logpdf(z, q_mu, np.exp(0.5 * q_lv)).sum(axis=1) - norm.logpdf(z, p_mu, np.exp(0.5 * p_lv)).sum(axis=1)
    )
    standard_error = log_ratio.std() / np.sqrt(log_ratio.size)
    assert abs(kl_diag_gaussians(q_mu, q_lv, p_mu, p_lv) - log_ratio.mean()) < 3 * standard_error


def test_closed_form_kl_terms_vanish_when_prior_matches():
    vae = _model(ModelKind.VAE, dropout=0.0)
    _zero_weights(vae.encoder)
    assert elbo_vae(vae, np.ones((3, 5)), RngStream(0)).kl == 0.0

    ivae = _model(ModelKind.IVAE, K=3, dropout=0.0)
    _zero_weights(ivae.encoder)
    ivae.encoder.biases[-1][:] = np.linspace(-1, 1, 10)
    ivae.prior.means[2] = ivae.encoder.biases[-1][:5]
    ivae.prior.log_vars[2] = ivae.encoder.biases[-1][5:]
    assert elbo_ivae(ivae, np.ones((3, 5)), np.full(3, 2), RngStream(0)).kl == pytest.approx(0.0, abs=1e-12)


def test_perfect_reconstruction_recon_term():
    model = _model(ModelKind.VAE, dropout=0.0, decoder_log_var=0.0)
    x = np.array([[0.3, -1.0, 2.0, 0.0, 0.5]])
    _zero_weights(model.decoder)
    model.decoder.biases[-1][:] = x[0]
    assert elbo_vae(model, x, RngStream(0)).recon == pytest.approx(-2.5 * LOG_2PI)


def test_ivae_single_sample_estimate_is_unbiased():
    model = _model(ModelKind.IVAE, K=4, d_x=3, d_z=2, hidden=(6,))
    x = RngStream(1).normal((5, 3))
    u = np.array([0, 1, 2, 3, 0])
    first_rng, second_rng = RngStream(2), RngStream(3)
    first = np.array([elbo_ivae(model, x, u, first_rng, train_mode=False).total for _ in range(1000)])
    second = np.array([elbo_ivae(model, x, u, second_rng, train_mode=False).total for _ in range(1000)])
    combined_se = np.sqrt(first.var() / first.size + second.var() / second.size)
    assert abs(first.mean() - second.mean()) < 3 * combined_se


def test_vade_kl_matches_monte_carlo_kl():
    model = _model(ModelKind.VADE, K=4, d_x=3, d_z=2, hidden=(6,), seed=5)
    model.prior.logits[:] = [0.5, -0.5, 0.0, 1.0]
    x = RngStream(6).normal((1, 3))
    batch = np.repeat(x, 50, axis=0)
    rng = RngStream(7)
    estimates = np.array([elbo_vade_mc(model, batch, rng, train_mode=False).kl for _ in range(200)])

    enc = encode(model, x)
    sd = np.exp(0.5 * enc.log_var)
    z = enc.mu + sd * RngStream(8).normal((100_000, 2))
    log_q = norm.logpdf(z, enc.mu, sd).sum(axis=1)
    prior = model.prior
    log_w = prior.logits - logsumexp(prior.logits)
    per_component = np.stack(
        [log_w[k] + norm.logpdf(z, prior.means[k], np.exp(0.5 * prior.log_vars[k])).sum(axis=1) for k in range(4)],
        axis=1,
    )
    reference = log_q - logsumexp(per_component, axis=1)

    se = np.sqrt(estimates.var() / estimates.size + reference.var() / reference.size)
    assert abs(estimates.mean() - reference.mean()) < 3 * se


def test_responsibilities(rng):
    single = _vade_twin(_model(ModelKind.VAE, d_z=2, d_x=3))
    assert np.array_equal(responsibilities(single, rng.normal((4, 2))), np.ones((4, 1)))

    symmetric = replace(
        single,
        prior=GaussianMixturePrior(
            logits=np.zeros(2), means=np.array([[-1.0, 0.0], [1.0, 0.0]]), log_vars=np.zeros((2, 2))
        ),
    )
    assert responsibilities(symmetric, np.zeros((1, 2))) == pytest.approx(np.array([[0.5, 0.5]]))

    model = _model(ModelKind.VADE, K=5, d_z=2, d_x=3)
    model.prior.logits[:] = rng.normal(5)
    z = rng.normal((6, 2))
    gamma = responsibilities(model, z)
    prior = model.prior
    density = np.stack(
        [prior.weights[k] * norm.pdf(z, prior.means[k], np.exp(0.5 * prior.log_vars[k])).prod(axis=1) for k in range(5)],
        axis=1,
    )
    assert np.allclose(gamma, density / density.sum(axis=1, keepdims=True), atol=1e-12)
    assert np.allclose(gamma.sum(axis=1), 1.0, atol=1e-12)

    model.prior.logits += 3.0
    assert np.allclose(responsibilities(model, z), gamma, atol=1e-12)
    with pytest.raises(ConfigError):
        responsibilities(_model(ModelKind.VAE), z)


@pytest.mark.parametrize("kind", list(ModelKind))
def test_model_directory_round_trip(kind, tmp_path, rng):
    model = _model(kind, K=4)
    if kind is ModelKind.IVAE:
        model.hasher = build_rademacher_hasher(2, 5, rng)
    save_model(model, tmp_path / "model")
    loaded = load_model(tmp_path / "model")
    assert loaded.kind is kind
    assert loaded.decoder_log_var == model.decoder_log_var
    for name, array in model.parameters().items():
        assert np.array_equal(loaded.parameters()[name], array), name
    if kind is ModelKind.IVAE:
        assert np.array_equal(loaded.hasher.A, model.hasher.A)
