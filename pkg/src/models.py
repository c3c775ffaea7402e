"""VAE, iVAE and VaDE: encoders, ELBOs and their exact gradients.

All three share one Gaussian encoder q(z|x[,u]) and one decoder with fixed
isotropic observation noise; they differ only in the prior over z. Gradients
are assembled by hand: the closed-form derivatives of the likelihood and KL
heads are pushed through the decoder and encoder tapes.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, ShapeError
from .ndmath import Matrix, RngStream, load_matrix_csv, save_matrix_csv
from .nn import MlpParams, MlpSpec, backward, forward, init_xavier_uniform, load_mlp, save_mlp
from .priors import (
    ConditionalGaussianPrior,
    GaussianMixturePrior,
    Prior,
    RademacherHasher,
    StandardNormalPrior,
    init_conditional_prior,
    init_mixture_prior,
)
from .state import ModelKind

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))

KL_ANALYTIC = "analytic"
KL_SAMPLE = "sample"


@dataclass
class EncoderOutput:
    mu: Matrix
    log_var: Matrix


@dataclass
class ElboBreakdown:
    recon: float
    kl: float
    total: float

    @classmethod
    def from_terms(cls, recon: float, kl: float) -> "ElboBreakdown":
        return cls(recon=float(recon), kl=float(kl), total=float(recon - kl))


@dataclass
class GenerativeModel:
    kind: ModelKind
    encoder_spec: MlpSpec
    encoder: MlpParams
    decoder_spec: MlpSpec
    decoder: MlpParams
    prior: Prior
    decoder_log_var: float
    seed: int = 0
    hasher: Optional[RademacherHasher] = None

    def __post_init__(self):
        self.encoder.check(self.encoder_spec)
        self.decoder.check(self.decoder_spec)
        expected_in = self.d_x + (self.n_labels if self.kind is ModelKind.IVAE else 0)
        if self.encoder_spec.input_width != expected_in:
            raise ShapeError(f"{self.kind.value} encoder takes {self.encoder_spec.input_width} inputs, expected {expected_in}")
        if self.encoder_spec.output_width != 2 * self.d_z:
            raise ShapeError(f"encoder emits {self.encoder_spec.output_width} values, expected 2*d_z={2 * self.d_z}")
        expected_prior = {
            ModelKind.VAE: StandardNormalPrior,
            ModelKind.IVAE: ConditionalGaussianPrior,
            ModelKind.VADE: GaussianMixturePrior,
        }[self.kind]
        if not isinstance(self.prior, expected_prior):
            raise ConfigError(f"{self.kind.value} needs a {expected_prior.__name__}, got {type(self.prior).__name__}")

    @property
    def d_x(self) -> int:
        return self.decoder_spec.output_width

    @property
    def d_z(self) -> int:
        return self.decoder_spec.input_width

    @property
    def n_labels(self) -> int:
        return 1 if isinstance(self.prior, StandardNormalPrior) else self.prior.K

    def parameters(self) -> Dict[str, np.ndarray]:
        """Every trainable array, by reference."""
        params = self.encoder.named_arrays("encoder")
        params.update(self.decoder.named_arrays("decoder"))
        params.update(self.prior.named_arrays())
        return params


def build_model(
    kind: ModelKind,
    encoder_spec: MlpSpec,
    decoder_spec: MlpSpec,
    n_components: int,
    decoder_log_var: float,
    rng: RngStream,
    seed: int = 0,
) -> GenerativeModel:
    d_z = decoder_spec.input_width
    encoder = init_xavier_uniform(encoder_spec, rng)
    decoder = init_xavier_uniform(decoder_spec, rng)
    if kind is ModelKind.VAE:
        prior = StandardNormalPrior(d_z)
    elif kind is ModelKind.IVAE:
        prior = init_conditional_prior(n_components, d_z, rng)
    else:
        prior = init_mixture_prior(n_components, d_z, rng)
    return GenerativeModel(
        kind=kind,
        encoder_spec=encoder_spec,
        encoder=encoder,
        decoder_spec=decoder_spec,
        decoder=decoder,
        prior=prior,
        decoder_log_var=decoder_log_var,
        seed=seed,
    )


def _check_labels(model: GenerativeModel, x: Matrix, u: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if model.kind is ModelKind.IVAE:
        if u is None:
            raise ShapeError("an iVAE encoder needs u labels")
        u = np.asarray(u, dtype=np.int64)
        if u.shape != (x.shape[0],):
            raise ShapeError(f"{x.shape[0]} inputs but {u.shape} labels")
        if u.size and (u.min() < 0 or u.max() >= model.prior.K):
            raise ShapeError(f"u labels must lie in [0, {model.prior.K})")
        return u
    if u is not None:
        raise ShapeError(f"a {model.kind.value} encoder takes no u labels")
    return None


def _encode_with_tape(model, x, u, rng, train_mode):
    u = _check_labels(model, x, u)
    out, tape = forward(
        model.encoder,
        model.encoder_spec,
        x,
        train_mode,
        rng,
        labels=u,
        n_labels=model.n_labels if u is not None else 0,
    )
    return EncoderOutput(mu=out[:, : model.d_z], log_var=out[:, model.d_z:]), tape, u


def encode(
    model: GenerativeModel,
    x: Matrix,
    u: Optional[np.ndarray] = None,
    rng: Optional[RngStream] = None,
    train_mode: bool = False,
) -> EncoderOutput:
    enc, _, _ = _encode_with_tape(model, x, u, rng, train_mode)
    return enc


def reparameterize(enc: EncoderOutput, rng: RngStream) -> Matrix:
    return enc.mu + np.exp(0.5 * enc.log_var) * rng.normal(enc.mu.shape)


def log_normal_diag(z: np.ndarray, mu, log_var) -> np.ndarray:
    """Elementwise log density of independent Gaussians (sum the last axis yourself)."""
    return -0.5 * (LOG_2PI + log_var + (z - mu) ** 2 / np.exp(log_var))


def gaussian_log_likelihood(x: Matrix, x_hat: Matrix, decoder_log_var: float) -> float:
    if x.shape != x_hat.shape:
        raise ShapeError(f"observations {x.shape} vs reconstructions {x_hat.shape}")
    per_row = (-0.5 * (LOG_2PI + decoder_log_var) - (x - x_hat) ** 2 / (2.0 * np.exp(decoder_log_var))).sum(axis=1)
    return float(per_row.mean())


def kl_diag_gaussians(q_mu, q_log_var, p_mu, p_log_var) -> float:
    """KL(q || p) for diagonal Gaussians, summed over dims and averaged over rows."""
    q_mu, q_log_var = np.atleast_2d(q_mu), np.atleast_2d(q_log_var)
    per_dim = 0.5 * (p_log_var - q_log_var + (np.exp(q_log_var) + (q_mu - p_mu) ** 2) / np.exp(p_log_var) - 1.0)
    return float(per_dim.sum(axis=-1).mean())


def _mixture_terms(prior: GaussianMixturePrior, z: Matrix) -> Tuple[np.ndarray, np.ndarray]:
    """Per-component joint log densities (B x K) and log p(z) (B)."""
    log_pi = prior.logits - logsumexp(prior.logits)
    joint = log_normal_diag(z[:, None, :], prior.means[None], prior.log_vars[None]).sum(axis=-1) + log_pi
    return joint, logsumexp(joint, axis=1)


def responsibilities(model: GenerativeModel, z: Matrix) -> Matrix:
    """Bayes-optimal q(u|x) at a latent sample: pi_k N(z; mu_k, Sigma_k), normalised."""
    if model.kind is not ModelKind.VADE:
        raise ConfigError(f"responsibilities need a VaDE model, got {model.kind.value}")
    joint, log_p = _mixture_terms(model.prior, z)
    return np.exp(joint - log_p[:, None])


def _require_kind(model: GenerativeModel, kind: ModelKind) -> None:
    if model.kind is not kind:
        raise ConfigError(f"expected a {kind.value} model, got {model.kind.value}")


def _elbo(
    model: GenerativeModel,
    x: Matrix,
    u: Optional[np.ndarray],
    rng: RngStream,
    train_mode: bool,
    kl_estimator: str,
    need_grad: bool,
) -> Tuple[ElboBreakdown, Optional[Dict[str, np.ndarray]]]:
    if kl_estimator not in (KL_ANALYTIC, KL_SAMPLE):
        raise ConfigError(f"unknown KL estimator {kl_estimator!r}")
    if x.ndim != 2 or x.shape[1] != model.d_x:
        raise ShapeError(f"inputs of shape {x.shape} do not match d_x={model.d_x}")

    enc, enc_tape, u = _encode_with_tape(model, x, u, rng, train_mode)
    z = reparameterize(enc, rng)
    x_hat, dec_tape = forward(model.decoder, model.decoder_spec, z, train_mode, rng)
    recon = gaussian_log_likelihood(x, x_hat, model.decoder_log_var)

    prior = model.prior
    analytic = model.kind is ModelKind.IVAE or (model.kind is ModelKind.VAE and kl_estimator == KL_ANALYTIC)
    if analytic:
        if model.kind is ModelKind.IVAE:
            p_mu, p_log_var = prior.means[u], prior.log_vars[u]
        else:
            p_mu, p_log_var = np.zeros_like(enc.mu), np.zeros_like(enc.log_var)
        kl = kl_diag_gaussians(enc.mu, enc.log_var, p_mu, p_log_var)
    else:
        log_q = log_normal_diag(z, enc.mu, enc.log_var).sum(axis=-1)
        if model.kind is ModelKind.VADE:
            joint, log_p = _mixture_terms(prior, z)
        else:
            log_p = log_normal_diag(z, 0.0, 0.0).sum(axis=-1)
        kl = float(np.mean(log_q - log_p))

    breakdown = ElboBreakdown.from_terms(recon, kl)
    if not need_grad:
        return breakdown, None

    scale = 1.0 / x.shape[0]
    dec_grads = backward(dec_tape, (x - x_hat) * (scale / np.exp(model.decoder_log_var)))
    g_z = dec_grads.input
    dz_dlog_var = 0.5 * (z - enc.mu)
    grads = dec_grads.named_arrays("decoder")

    if analytic:
        p_var = np.exp(p_log_var)
        diff = enc.mu - p_mu
        g_mu = g_z - diff / p_var * scale
        g_log_var = g_z * dz_dlog_var - 0.5 * (np.exp(enc.log_var) / p_var - 1.0) * scale
        if model.kind is ModelKind.IVAE:
            g_means = np.zeros_like(prior.means)
            g_log_vars = np.zeros_like(prior.log_vars)
            np.add.at(g_means, u, diff / p_var * scale)
            np.add.at(g_log_vars, u, -0.5 * (1.0 - (np.exp(enc.log_var) + diff**2) / p_var) * scale)
            grads["prior.means"] = g_means
            grads["prior.log_vars"] = g_log_vars
    else:
        if model.kind is ModelKind.VADE:
            gamma = np.exp(joint - log_p[:, None])
            inv_var = np.exp(-prior.log_vars)[None]
            offset = z[:, None, :] - prior.means[None]
            weighted = gamma[:, :, None] * offset * inv_var
            dlogp_dz = -weighted.sum(axis=1)
            grads["prior.means"] = weighted.sum(axis=0) * scale
            grads["prior.log_vars"] = (gamma[:, :, None] * 0.5 * (offset**2 * inv_var - 1.0)).sum(axis=0) * scale
            grads["prior.logits"] = (gamma - prior.weights[None]).sum(axis=0) * scale
        else:
            dlogp_dz = -z
        g_z = g_z + dlogp_dz * scale
        g_mu = g_z
        # pathwise: log q at a reparameterised sample depends on log_var only
        g_log_var = g_z * dz_dlog_var + 0.5 * scale

    enc_grads = backward(enc_tape, np.hstack([g_mu, g_log_var]))
    grads.update(enc_grads.named_arrays("encoder"))
    return breakdown, grads


def elbo_vae(
    model: GenerativeModel,
    x: Matrix,
    rng: RngStream,
    train_mode: bool = True,
    kl_estimator: str = KL_ANALYTIC,
) -> ElboBreakdown:
    _require_kind(model, ModelKind.VAE)
    return _elbo(model, x, None, rng, train_mode, kl_estimator, need_grad=False)[0]


def elbo_ivae(model: GenerativeModel, x: Matrix, u: np.ndarray, rng: RngStream, train_mode: bool = True) -> ElboBreakdown:
    _require_kind(model, ModelKind.IVAE)
    return _elbo(model, x, u, rng, train_mode, KL_ANALYTIC, need_grad=False)[0]


def elbo_vade_mc(model: GenerativeModel, x: Matrix, rng: RngStream, train_mode: bool = True) -> ElboBreakdown:
    """Single-sample estimate; the cluster KL vanishes under the Bayes-optimal q(u|x)."""
    _require_kind(model, ModelKind.VADE)
    return _elbo(model, x, None, rng, train_mode, KL_SAMPLE, need_grad=False)[0]


def elbo(
    model: GenerativeModel, x: Matrix, u: Optional[np.ndarray], rng: RngStream, train_mode: bool = True
) -> ElboBreakdown:
    """The kind-appropriate ELBO."""
    if model.kind is ModelKind.VAE:
        return elbo_vae(model, x, rng, train_mode)
    if model.kind is ModelKind.IVAE:
        return elbo_ivae(model, x, u, rng, train_mode)
    return elbo_vade_mc(model, x, rng, train_mode)


def elbo_gradients(
    model: GenerativeModel,
    x: Matrix,
    u: Optional[np.ndarray],
    rng: RngStream,
    train_mode: bool = True,
    kl_estimator: Optional[str] = None,
) -> Tuple[ElboBreakdown, Dict[str, np.ndarray]]:
    """ELBO and its gradient with respect to every entry of ``model.parameters()``."""
    if kl_estimator is None:
        kl_estimator = KL_SAMPLE if model.kind is ModelKind.VADE else KL_ANALYTIC
    return _elbo(model, x, u, rng, train_mode, kl_estimator, need_grad=True)


def save_model(model: GenerativeModel, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_mlp(model.encoder, model.encoder_spec, directory / "encoder")
    save_mlp(model.decoder, model.decoder_spec, directory / "decoder")

    prior_doc = {"kind": type(model.prior).__name__}
    if isinstance(model.prior, StandardNormalPrior):
        prior_doc["K"] = 1
    else:
        prior_doc["K"] = model.prior.K
        for name, values in model.prior.named_arrays().items():
            filename = f"{name.replace('.', '_')}.csv"
            save_matrix_csv(np.atleast_2d(values), directory / filename)
            prior_doc[name.split(".")[1]] = filename
    with open(directory / "prior.json", "w", encoding="utf-8") as f:
        json.dump(prior_doc, f, indent=2)

    if model.hasher is not None:
        save_matrix_csv(model.hasher.A, directory / "hasher.csv")
    manifest = {
        "kind": model.kind.value,
        "d_z": model.d_z,
        "decoder_log_var": model.decoder_log_var,
        "seed": model.seed,
    }
    with open(directory / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    return directory


def load_model(directory) -> GenerativeModel:
    directory = Path(directory)
    with open(directory / "manifest.json", "r", encoding="utf-8") as f:
        manifest = json.load(f)
    with open(directory / "prior.json", "r", encoding="utf-8") as f:
        prior_doc = json.load(f)
    encoder, encoder_spec = load_mlp(directory / "encoder")
    decoder, decoder_spec = load_mlp(directory / "decoder")

    kind = ModelKind(manifest["kind"])
    if prior_doc["kind"] == StandardNormalPrior.__name__:
        prior = StandardNormalPrior(manifest["d_z"])
    elif prior_doc["kind"] == ConditionalGaussianPrior.__name__:
        prior = ConditionalGaussianPrior(
            means=load_matrix_csv(directory / prior_doc["means"]),
            log_vars=load_matrix_csv(directory / prior_doc["log_vars"]),
        )
    else:
        prior = GaussianMixturePrior(
            logits=load_matrix_csv(directory / prior_doc["logits"])[0],
            means=load_matrix_csv(directory / prior_doc["means"]),
            log_vars=load_matrix_csv(directory / prior_doc["log_vars"]),
        )
    hasher_path = directory / "hasher.csv"
    hasher = RademacherHasher(A=load_matrix_csv(hasher_path)) if hasher_path.exists() else None
    return GenerativeModel(
        kind=kind,
        encoder_spec=encoder_spec,
        encoder=encoder,
        decoder_spec=decoder_spec,
        decoder=decoder,
        prior=prior,
        decoder_log_var=manifest["decoder_log_var"],
        seed=manifest.get("seed", 0),
        hasher=hasher,
    )
