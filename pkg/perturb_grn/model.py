# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""
The generative model.

Perturbations enter through a global Bernoulli mask M over gene pairs
whose logits form the causal matrix, effects E ~ N(f(M)) and
Z_p = P (E ⊙ M). A global artifact embedding u is switched on by the QC
flag (Z_a = A u) and, for counterfactual reasoning, by its complement
(Z_a_cf = (1 - A) u). The basal encoder maps (log1p X, Z_p, Z_a) to a
Gaussian over Z_b, and the decoder turns [Z_b | Z_p | Z_a] into
library-size-scaled negative-binomial rates.
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dataset import GeneCatalog, PerturbDataset
from .diffcore import DTYPE
from .errors import ShapeError, ValidationError

logger = logging.getLogger(__name__)

SCALE_FLOOR = 1e-6
UNIFORM_EPS = 1e-12

Seed = int | torch.Generator


def _generator(seed: Seed) -> torch.Generator:
    if isinstance(seed, torch.Generator):
        return seed
    return torch.Generator().manual_seed(int(seed))


def _positive(raw: torch.Tensor) -> torch.Tensor:
    return F.softplus(raw) + SCALE_FLOOR


def mlp(in_dim: int, width: int, n_hidden: int, out_dim: int) -> nn.Sequential:
    """``n_hidden`` ELU layers of ``width`` units followed by a linear output."""
    layers = []
    previous = in_dim
    for _ in range(n_hidden):
        layers += [nn.Linear(previous, width), nn.ELU()]
        previous = width
    layers.append(nn.Linear(previous, out_dim))
    return nn.Sequential(*layers)


@dataclass(frozen=True)
class ModelDims:
    """Everything needed to rebuild the parameter layout."""

    n_genes: int
    n_modeled: int
    latent_dim: int
    encoder_layers: int
    encoder_width: int
    decoder_layers: int
    effect_width: int
    mask_prior: float

    @classmethod
    def from_config(cls, config, catalog: GeneCatalog) -> 'ModelDims':
        return cls(
            n_genes=catalog.n_genes,
            n_modeled=catalog.n_modeled,
            latent_dim=config.latent_dim,
            encoder_layers=config.encoder_layers,
            encoder_width=config.encoder_width,
            decoder_layers=config.decoder_layers,
            effect_width=config.effect_width,
            mask_prior=config.mask_prior,
        )

    def to_dict(self) -> dict:
        return asdict(self)


class CausalParams(nn.Module):
    """The trainable causal matrix: logits whose sigmoid is the edge probability."""

    def __init__(self, n_modeled: int, mask_prior: float):
        super().__init__()
        init = math.log(mask_prior) - math.log1p(-mask_prior)
        self.logits = nn.Parameter(torch.full((n_modeled, n_modeled), init, dtype=DTYPE))

    def prob(self) -> torch.Tensor:
        return torch.sigmoid(self.logits)


class EffectNet(nn.Module):
    """Row-wise map from a mask row to the (mean, scale) of the effect row."""

    def __init__(self, n_modeled: int, width: int):
        super().__init__()
        self.n_modeled = n_modeled
        self.net = mlp(n_modeled, width, 1, 2 * n_modeled)

    def forward(self, M: torch.Tensor):
        mean, raw = self.net(M).chunk(2, dim=-1)
        return mean, _positive(raw)


class ArtifactPrior(nn.Module):
    """Parameters (mu, log sigma) of the global artifact embedding u."""

    def __init__(self, latent_dim: int):
        super().__init__()
        self.mu = nn.Parameter(torch.zeros(latent_dim, dtype=DTYPE))
        self.log_sigma = nn.Parameter(torch.zeros(latent_dim, dtype=DTYPE))

    def sigma(self) -> torch.Tensor:
        return torch.exp(self.log_sigma)


class BasalEncoderNet(nn.Module):
    def __init__(self, dims: ModelDims):
        super().__init__()
        in_dim = dims.n_genes + dims.n_modeled + dims.latent_dim
        self.net = mlp(
            in_dim, dims.encoder_width, dims.encoder_layers, 2 * dims.latent_dim
        )

    def forward(self, log_x, z_p, z_a):
        mean, raw = self.net(torch.cat([log_x, z_p, z_a], dim=-1)).chunk(2, dim=-1)
        return mean, _positive(raw)


class DecoderNet(nn.Module):
    """Maps [Z_b | Z_p | Z_a] to expression fractions on the simplex."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        in_dim = 2 * dims.latent_dim + dims.n_modeled
        self.net = mlp(
            in_dim, dims.encoder_width, dims.decoder_layers - 1, dims.n_genes
        )

    def forward(self, z_b, z_p, z_a):
        return torch.softmax(self.net(torch.cat([z_b, z_p, z_a], dim=-1)), dim=-1)


@dataclass
class Batch:
    """Tensors for one mini-batch (rows of a prepared training split)."""

    X: torch.Tensor
    P: torch.Tensor
    A: torch.Tensor
    L: torch.Tensor
    delta: torch.Tensor
    excluded: torch.Tensor
    X_ref: torch.Tensor
    has_ref: torch.Tensor

    @property
    def size(self) -> int:
        return self.X.shape[0]

    @classmethod
    def from_dataset(
        cls,
        dataset: PerturbDataset,
        rows=None,
        *,
        delta: np.ndarray | None = None,
        excluded: np.ndarray | None = None,
        references: np.ndarray | None = None,
    ) -> 'Batch':
        rows = np.arange(dataset.n_cells) if rows is None else np.asarray(rows)
        n = dataset.catalog.n_modeled
        if delta is None:
            delta = np.zeros((dataset.n_cells, n))
            excluded = np.ones(dataset.n_cells, dtype=bool)
        elif excluded is None:
            excluded = np.zeros(dataset.n_cells, dtype=bool)
        if references is None:
            references = np.full(dataset.n_cells, -1)

        ref = references[rows]
        has_ref = ref >= 0
        X_ref = np.zeros((len(rows), dataset.catalog.n_genes))
        X_ref[has_ref] = dataset.X[ref[has_ref]]

        def t(a):
            return torch.as_tensor(np.asarray(a, dtype=np.float64), dtype=DTYPE)

        return cls(
            X=t(dataset.X[rows]),
            P=t(dataset.P[rows]),
            A=t(dataset.A[rows]),
            L=t(np.maximum(dataset.library_size[rows], 1.0)),
            delta=t(delta[rows]),
            excluded=torch.as_tensor(excluded[rows], dtype=torch.bool),
            X_ref=t(X_ref),
            has_ref=torch.as_tensor(has_ref, dtype=torch.bool),
        )


@dataclass
class ForwardPass:
    """All latent draws and distribution parameters of one forward pass."""

    logits: torch.Tensor
    mask_prior: float
    M: torch.Tensor
    E: torch.Tensor
    effect_mean: torch.Tensor
    effect_scale: torch.Tensor
    u: torch.Tensor
    u_mean: torch.Tensor
    u_scale: torch.Tensor
    Z_p: torch.Tensor
    Z_a: torch.Tensor
    Z_a_cf: torch.Tensor
    basal_mean: torch.Tensor
    basal_scale: torch.Tensor
    Z_b: torch.Tensor
    rate: torch.Tensor
    dispersion: torch.Tensor
    cf_mean: torch.Tensor | None = None
    cf_scale: torch.Tensor | None = None
    ref_mean: torch.Tensor | None = None
    ref_scale: torch.Tensor | None = None


class ModelState(nn.Module):
    """All trainable parameters plus the gene catalog they are laid out over."""

    def __init__(self, dims: ModelDims, catalog: GeneCatalog, library_size: float = 1.0):
        super().__init__()
        if dims.n_genes != catalog.n_genes or dims.n_modeled != catalog.n_modeled:
            raise ShapeError('model dimensions do not match the gene catalog')
        self.dims = dims
        self.catalog = catalog
        self.causal = CausalParams(dims.n_modeled, dims.mask_prior)
        self.effect_net = EffectNet(dims.n_modeled, dims.effect_width)
        self.artifact_prior = ArtifactPrior(dims.latent_dim)
        self.basal_encoder = BasalEncoderNet(dims)
        self.decoder = DecoderNet(dims)
        # Theta = 1 per gene, optimized in log space
        self.log_dispersion = nn.Parameter(torch.zeros(dims.n_genes, dtype=DTYPE))
        self.register_buffer(
            'reference_library_size', torch.tensor(float(library_size), dtype=DTYPE)
        )
        self.to(DTYPE)

    def dispersion(self) -> torch.Tensor:
        return torch.exp(self.log_dispersion)

    def is_finite(self) -> bool:
        return all(torch.isfinite(p).all() for p in self.parameters())

    def forward(
        self,
        batch: Batch,
        *,
        temperature: float = 1.0,
        seed: Seed = 0,
        mode: str = 'relaxed',
    ) -> ForwardPass:
        gen = _generator(seed)
        M = sample_mask(self.causal, temperature, mode, gen)
        effect_mean, effect_scale = self.effect_net(M)
        E = effect_mean + effect_scale * _standard_normal(effect_mean.shape, gen)
        Z_p = encode_perturbation(batch.P, E, M)
        Z_a, Z_a_cf, u = encode_artifact(batch.A, self.artifact_prior, gen)
        basal_mean, basal_scale, Z_b = encode_basal(
            self.basal_encoder, batch.X, Z_p, Z_a, gen
        )
        rate, dispersion = decode_nb_params(
            self.decoder, Z_b, Z_p, Z_a, batch.L, self.dispersion()
        )
        fp = ForwardPass(
            logits=self.causal.logits,
            mask_prior=self.dims.mask_prior,
            M=M,
            E=E,
            effect_mean=effect_mean,
            effect_scale=effect_scale,
            u=u,
            u_mean=self.artifact_prior.mu,
            u_scale=self.artifact_prior.sigma(),
            Z_p=Z_p,
            Z_a=Z_a,
            Z_a_cf=Z_a_cf,
            basal_mean=basal_mean,
            basal_scale=basal_scale,
            Z_b=Z_b,
            rate=rate,
            dispersion=dispersion,
        )
        if bool(batch.has_ref.any()):
            rows = batch.has_ref
            fp.cf_mean, fp.cf_scale = self.basal_encoder(
                torch.log1p(batch.X[rows]), Z_p[rows], Z_a_cf[rows]
            )
            fp.ref_mean, fp.ref_scale = self.basal_encoder(
                torch.log1p(batch.X_ref[rows]), Z_p[rows], Z_a_cf[rows]
            )
        return fp


def _standard_normal(shape, gen: torch.Generator) -> torch.Tensor:
    return torch.randn(shape, generator=gen, dtype=DTYPE)


def sample_mask(
    params: CausalParams | torch.Tensor,
    temperature: float = 1.0,
    mode: str = 'relaxed',
    seed: Seed = 0,
) -> torch.Tensor:
    """
    Draws the perturbation mask M from Bernoulli(sigmoid(logits)).

    ``relaxed`` returns binary-concrete samples in (0, 1), differentiable in
    the logits; ``hard`` returns exact {0, 1} draws. Both share the logistic
    noise of a seed, so a hard draw is the zero-temperature limit of the
    relaxed draw with the same seed.
    """
    logits = params.logits if isinstance(params, CausalParams) else params
    if mode not in ('relaxed', 'hard'):
        raise ValidationError(f"mode must be 'relaxed' or 'hard', got {mode!r}")
    gen = _generator(seed)
    u = torch.rand(logits.shape, generator=gen, dtype=DTYPE)
    u = u.clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    noise = torch.log(u) - torch.log1p(-u)
    if mode == 'hard':
        return (logits + noise > 0).to(DTYPE)
    if temperature <= 0:
        raise ValidationError(f'temperature must be positive, got {temperature}')
    return torch.sigmoid((logits + noise) / temperature)


def sample_effects(net: EffectNet, M: torch.Tensor, seed: Seed = 0) -> torch.Tensor:
    """Reparameterized draw E = mean(M) + scale(M) * eps."""
    if M.ndim != 2 or M.shape[-1] != net.n_modeled:
        raise ShapeError(
            f'M must have {net.n_modeled} columns, got shape {tuple(M.shape)}'
        )
    mean, scale = net(M)
    return mean + scale * _standard_normal(mean.shape, _generator(seed))


def encode_perturbation(P: torch.Tensor, E: torch.Tensor, M: torch.Tensor) -> torch.Tensor:
    """Z_p = P (E ⊙ M); control rows map to zero."""
    if E.shape != M.shape or E.ndim != 2 or E.shape[0] != E.shape[1]:
        raise ShapeError(f'E and M must be equal square matrices, got {E.shape}, {M.shape}')
    if P.shape[-1] != E.shape[0]:
        raise ShapeError(f'P has {P.shape[-1]} columns, E has {E.shape[0]} rows')
    return P @ (E * M)


def encode_artifact(A: torch.Tensor, prior: ArtifactPrior, seed: Seed = 0):
    """Returns (Z_a, Z_a_cf, u) with Z_a = A u and Z_a_cf = (1 - A) u."""
    flags = A.reshape(-1, 1).to(DTYPE)
    if not torch.all((flags == 0) | (flags == 1)):
        raise ValidationError('QC flags A must be binary')
    mu = prior.mu
    u = mu + prior.sigma() * _standard_normal(mu.shape, _generator(seed))
    return flags * u, (1.0 - flags) * u, u


def encode_basal(net: BasalEncoderNet, X: torch.Tensor, Z_p, Z_a, seed: Seed = 0):
    """Returns (mean, scale, Z_b) of q(Z_b | X, Z_p, Z_a)."""
    if not (X.shape[0] == Z_p.shape[0] == Z_a.shape[0]):
        raise ShapeError(
            f'row counts differ: X {X.shape[0]}, Z_p {Z_p.shape[0]}, Z_a {Z_a.shape[0]}'
        )
    mean, scale = net(torch.log1p(X), Z_p, Z_a)
    return mean, scale, mean + scale * _standard_normal(mean.shape, _generator(seed))


def decode_nb_params(net: DecoderNet, Z_b, Z_p, Z_a, L, theta):
    """Returns (rate, dispersion), each N x |G|; rate rows sum to L."""
    L = torch.as_tensor(L, dtype=DTYPE).reshape(-1, 1)
    if not torch.all(L > 0):
        raise ValidationError('library sizes must be positive')
    if not torch.all(theta > 0):
        raise ValidationError('dispersion must be positive')
    fractions = net(Z_b, Z_p, Z_a)
    rate = fractions * L
    return rate, theta.expand_as(rate)


def nb_log_likelihood(X: torch.Tensor, rate: torch.Tensor, dispersion: torch.Tensor):
    """
    Negative-binomial log-mass summed over genes, one value per row.

    This is the Gamma-Poisson marginal with mean ``rate`` and shape
    ``dispersion`` (Poisson as dispersion -> inf).
    """
    if not (X.shape == rate.shape == dispersion.shape):
        raise ShapeError(
            f'shapes differ: X {tuple(X.shape)}, rate {tuple(rate.shape)}, '
            f'dispersion {tuple(dispersion.shape)}'
        )
    if not torch.all(rate > 0) or not torch.all(dispersion > 0):
        raise ValidationError('rate and dispersion must be positive')
    if not torch.all(X >= 0):
        raise ValidationError('counts must be non-negative')
    log_total = torch.log(dispersion + rate)
    log_mass = (
        torch.lgamma(X + dispersion)
        - torch.lgamma(dispersion)
        - torch.lgamma(X + 1.0)
        - dispersion * torch.log1p(rate / dispersion)
        + X * (torch.log(rate) - log_total)
    )
    return log_mass.sum(dim=-1)


def build_model(
    config, catalog: GeneCatalog, library_size: float = 1.0
) -> ModelState:
    """Builds a freshly initialized model; initialization is seeded by config.seed."""
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        model = ModelState(ModelDims.from_config(config, catalog), catalog, library_size)
    return model
