"""Training losses. All functions build autodiff graphs; pass Tensors to
train, or plain arrays to just evaluate (read the scalar with .item())."""

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import wrap


@dataclass
class LossWeights:
    lam: float = 0.1        # weight of the uncertainty-aware term
    alpha_w: float = 1.0    # residual attenuation weight inside the aleatoric loss
    beta_w: float = 0.5     # uncertainty regularizer weight

    def validate(self):
        if min(self.lam, self.alpha_w, self.beta_w) < 0:
            raise ValueError("loss weights must be nonnegative")


def diffusion_loss(eps_hat, eps_target):
    """Mean squared error between predicted and injected noise."""
    d = wrap(eps_hat) - wrap(eps_target)
    return ad.tmean(d * d)


def rec_loss(J, J_f):
    """Mean absolute error between clean and restored images."""
    return ad.tmean(ad.absolute(wrap(J) - wrap(J_f)))


def au_loss(I, J_a, U_A, weights):
    """Aleatoric loss, mean over elements: alpha*exp(-U_A)*(I - J_a)^2 + beta*U_A."""
    weights.validate()
    d = wrap(I) - wrap(J_a)
    attn = ad.exp(wrap(U_A) * -1.0)
    return ad.tmean(attn * (d * d) * weights.alpha_w + wrap(U_A) * weights.beta_w)


def un_loss(J, J_a, au):
    """Uncertainty-aware loss: L1(J, J_a) plus the aleatoric term."""
    return rec_loss(J, J_a) + wrap(au)


def total_loss(rec, un, lam):
    """Combined objective: rec + lam * un."""
    return wrap(rec) + wrap(un) * lam
