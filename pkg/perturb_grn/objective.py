# Copyright (c) 2025 Felipe Paucar
# Licensed under the MIT License

"""
Loss terms.

The minimized total is ``-j_rec + alpha * j_ade + beta * j_gpo`` where
j_rec is the ELBO, j_ade the KL divergence between the counterfactual and
reference basal posteriors, and j_gpo = j_dge_k + j_sp the graph prior
objective over the causal probability matrix.
"""

import logging
from dataclasses import dataclass

import torch
from torch.distributions import Normal

from .config import Ablation
from .diffcore import DTYPE, matrix_power_sum
from .errors import ShapeError
from .model import Batch, CausalParams, ForwardPass, nb_log_likelihood

logger = logging.getLogger(__name__)


@dataclass
class GpoTerms:
    j_dge_k: torch.Tensor
    j_sp: torch.Tensor
    j_gpo: torch.Tensor


@dataclass
class LossBreakdown:
    j_rec: torch.Tensor
    j_ade: torch.Tensor
    j_dge_k: torch.Tensor
    j_sp: torch.Tensor
    j_gpo: torch.Tensor
    total: torch.Tensor
    alpha: float
    beta: float
    k_hops: int

    def as_record(self, step: int | None = None) -> dict:
        """JSON-ready floats; ``step`` first when given."""
        record = {} if step is None else {'step': step}
        for name in ('j_rec', 'j_ade', 'j_dge_k', 'j_sp', 'j_gpo', 'total'):
            record[name] = float(getattr(self, name).detach())
        return record


def _zero() -> torch.Tensor:
    return torch.zeros((), dtype=DTYPE)


def gaussian_kl(mean_q, scale_q, mean_p, scale_p) -> torch.Tensor:
    """Elementwise KL(N(mean_q, scale_q) || N(mean_p, scale_p))."""
    var_ratio = (scale_q / scale_p) ** 2
    return 0.5 * (var_ratio + ((mean_q - mean_p) / scale_p) ** 2 - 1.0) - torch.log(
        scale_q / scale_p
    )


def standard_normal_kl(mean, scale) -> torch.Tensor:
    """Elementwise KL(N(mean, scale) || N(0, 1)) = (s² + m² - 1 - 2 ln s) / 2."""
    return 0.5 * (scale**2 + mean**2 - 1.0) - torch.log(scale)


def bernoulli_kl(logits: torch.Tensor, prior: float) -> torch.Tensor:
    """Elementwise KL(Bernoulli(sigmoid(logits)) || Bernoulli(prior))."""
    q = torch.sigmoid(logits)
    log_q = torch.nn.functional.logsigmoid(logits)
    log_1mq = torch.nn.functional.logsigmoid(-logits)
    prior = torch.as_tensor(prior, dtype=DTYPE)
    return q * (log_q - torch.log(prior)) + (1.0 - q) * (log_1mq - torch.log1p(-prior))


def elbo(
    batch: Batch, fp: ForwardPass, *, n_total: int | None = None, kl_weight: float = 1.0
) -> torch.Tensor:
    """
    Single-sample ELBO estimate per datum.

    The per-row terms (NB log-likelihood and log p(Z_b) - log q(Z_b)) are
    averaged over the batch. The global KL terms for M, E and u are charged
    once per dataset, so each batch carries a 1/n_total share per datum.
    """
    if fp.rate.shape != batch.X.shape:
        raise ShapeError(
            f'rate {tuple(fp.rate.shape)} does not match X {tuple(batch.X.shape)}'
        )
    n_total = batch.size if n_total is None else n_total
    log_lik = nb_log_likelihood(batch.X, fp.rate, fp.dispersion)
    prior = Normal(torch.zeros_like(fp.Z_b), torch.ones_like(fp.Z_b))
    posterior = Normal(fp.basal_mean, fp.basal_scale)
    basal = (prior.log_prob(fp.Z_b) - posterior.log_prob(fp.Z_b)).sum(dim=-1)

    global_kl = (
        bernoulli_kl(fp.logits, fp.mask_prior).sum()
        + standard_normal_kl(fp.effect_mean, fp.effect_scale).sum()
        + standard_normal_kl(fp.u_mean, fp.u_scale).sum()
    )
    return (log_lik + kl_weight * basal).mean() - kl_weight * global_kl / n_total


def ade_loss(q_cf, q_ref) -> torch.Tensor:
    """
    KL(q_cf || q_ref) between diagonal Gaussians given as (mean, scale).

    Summed over latent dimensions, averaged over rows. No rows gives 0.
    """
    if q_cf is None or q_ref is None:
        return _zero()
    mean_cf, scale_cf = q_cf
    mean_ref, scale_ref = q_ref
    if mean_cf.shape != mean_ref.shape or scale_cf.shape != scale_ref.shape:
        raise ShapeError(
            f'Gaussian dimensions differ: {tuple(mean_cf.shape)} vs {tuple(mean_ref.shape)}'
        )
    if mean_cf.numel() == 0:
        return _zero()
    kl = gaussian_kl(mean_cf, scale_cf, mean_ref, scale_ref)
    return kl.reshape(-1, kl.shape[-1]).sum(dim=-1).mean()


def dge_loss(probs, P, delta, excluded=None) -> torch.Tensor:
    """Mean over included rows of ||P T - delta||_1; zero if every row is excluded."""
    if P.shape[-1] != probs.shape[0] or delta.shape != (P.shape[0], probs.shape[1]):
        raise ShapeError(
            f'incompatible shapes: T {tuple(probs.shape)}, P {tuple(P.shape)}, '
            f'delta {tuple(delta.shape)}'
        )
    if excluded is None:
        excluded = torch.zeros(P.shape[0], dtype=torch.bool)
    included = ~excluded
    n_included = int(included.sum())
    if n_included == 0:
        logger.warning('Every row is excluded from the DGE loss; using 0')
        return probs.sum() * 0.0
    residual = P[included] @ probs - delta[included]
    return residual.abs().sum() / n_included


def gpo_loss(
    params: CausalParams | torch.Tensor,
    P,
    delta,
    k_hops: int = 5,
    excluded=None,
    ablation: Ablation = Ablation.FULL,
) -> GpoTerms:
    """
    Graph prior objective over prob = sigmoid(logits).

    ``ablation`` keeps only some components: sp_only keeps j_sp, dge_only
    uses the one-hop DGE loss, dge_k_only the K-hop DGE loss.
    """
    if k_hops < 1:
        raise ValueError(f'k_hops must be >= 1, got {k_hops}')
    logits = params.logits if isinstance(params, CausalParams) else params
    prob = torch.sigmoid(logits)
    n = prob.shape[0]
    ablation = Ablation(ablation)

    j_sp = prob.abs().sum() / n**2
    if ablation is Ablation.SP_ONLY:
        j_dge_k = _zero()
    else:
        hops = 1 if ablation is Ablation.DGE_ONLY else k_hops
        j_dge_k = dge_loss(matrix_power_sum(prob, hops, 1.0 / n), P, delta, excluded)
    if ablation in (Ablation.DGE_ONLY, Ablation.DGE_K_ONLY):
        j_sp = _zero()
    return GpoTerms(j_dge_k=j_dge_k, j_sp=j_sp, j_gpo=j_dge_k + j_sp)


def total_loss(
    j_rec, j_ade, gpo: GpoTerms, alpha: float, beta: float, k_hops: int = 5
) -> LossBreakdown:
    return LossBreakdown(
        j_rec=j_rec,
        j_ade=j_ade,
        j_dge_k=gpo.j_dge_k,
        j_sp=gpo.j_sp,
        j_gpo=gpo.j_gpo,
        total=-j_rec + alpha * j_ade + beta * gpo.j_gpo,
        alpha=alpha,
        beta=beta,
        k_hops=k_hops,
    )


def compute_breakdown(
    batch: Batch, fp: ForwardPass, config, *, n_total: int | None = None
) -> LossBreakdown:
    """All loss terms of one forward pass under ``config`` (a TrainConfig)."""
    j_rec = elbo(batch, fp, n_total=n_total, kl_weight=config.kl_weight)
    j_ade = ade_loss(
        None if fp.cf_mean is None else (fp.cf_mean, fp.cf_scale),
        None if fp.ref_mean is None else (fp.ref_mean, fp.ref_scale),
    )
    gpo = gpo_loss(
        fp.logits, batch.P, batch.delta, config.k_hops, batch.excluded, config.ablation
    )
    return total_loss(j_rec, j_ade, gpo, config.alpha, config.beta, config.k_hops)
