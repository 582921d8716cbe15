"""Forward diffusion, training-example assembly, and samplers.

Everything here is shape-agnostic: states are plain ndarrays (scalars,
vectors, or NCHW batches), and the denoiser is any callable
``(noisy_state, condition, t) -> noise_estimate`` of identical shape.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .schedule import timestep_subsequence


@dataclass
class Condition:
    """Conditioning pair for restoration: degraded image + degradation mask."""

    degraded: np.ndarray
    mask: np.ndarray


@dataclass
class TrainingExample:
    noisy: np.ndarray
    target_noise: np.ndarray
    condition: Condition
    timestep: int


def _check_t(t, T):
    if not (1 <= t <= T):
        raise ValueError(f"timestep {t} outside schedule range 1..{T}")


def forward_marginal_sample(J0, t, eps, sched):
    """Noisy state at step t in closed form: sqrt(abar_t) J0 + sqrt(1-abar_t) eps."""
    _check_t(t, sched.T)
    abar = sched.alpha_bar_at(t)
    return np.sqrt(abar) * J0 + np.sqrt(1.0 - abar) * eps


def forward_chain_step(J_prev, t, eps, sched):
    """One Markov-chain corruption step: sqrt(1-beta_t) J_{t-1} + sqrt(beta_t) eps."""
    _check_t(t, sched.T)
    beta = sched.beta_at(t)
    return np.sqrt(1.0 - beta) * J_prev + np.sqrt(beta) * eps


def make_training_example(J0, condition, sched, rng):
    """Draw (t, eps) and assemble a noisy training input.

    t is uniform on {1..T} and eps is a standard normal field, both taken
    from the supplied generator so examples are reproducible.
    """
    t = int(rng.integers(1, sched.T + 1))
    eps = rng.standard_normal(np.shape(J0))
    noisy = forward_marginal_sample(J0, t, eps, sched)
    return TrainingExample(noisy=noisy, target_noise=eps, condition=condition, timestep=t)


def ddim_step(J_t, t, t_next, eps_hat, sched):
    """Deterministic implicit update from step t to t_next (t_next may be 0)."""
    abar_t = sched.alpha_bar_at(t)
    abar_next = sched.alpha_bar_at(t_next)
    J0_hat = (J_t - np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(abar_t)
    return np.sqrt(abar_next) * J0_hat + np.sqrt(1.0 - abar_next) * eps_hat


def ancestral_step(J_t, t, eps_hat, sched, rng):
    """One stochastic reverse step with variance beta_t (no noise at t=1)."""
    _check_t(t, sched.T)
    beta = sched.beta_at(t)
    alpha = sched.alpha_at(t)
    abar = sched.alpha_bar_at(t)
    mean = (J_t - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
    if t > 1:
        mean = mean + np.sqrt(beta) * rng.standard_normal(np.shape(J_t))
    return mean


def restore(condition, denoiser, sched, S, rng, trace=None, eta=0.0, clamp_x0=False):
    """Subsequence-sampler restoration conditioned on (degraded, mask).

    Starts from a standard normal field shaped like the degraded input and
    visits the S-step timestep subsequence. With the defaults (eta=0, no
    x0 clamping) every update is the deterministic implicit step and only
    the final state is clamped to [0, 1].

    Small imperfect denoisers drift off-distribution under the purely
    deterministic sampler, so two optional stabilizers are provided:
    ``eta`` blends in the stochastic update (eta=1 re-noises each step
    with the full transition variance, masking accumulated error) and
    ``clamp_x0`` clips the implied clean-image estimate to [0, 1] before
    each step re-noises it. ``trace`` may be a list to collect per-step
    rows (i, t, t_next, state mean, state std).
    """
    if S > sched.T:
        raise ValueError(f"S={S} exceeds schedule length T={sched.T}")
    if not (0.0 <= eta <= 1.0):
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    J = rng.standard_normal(np.shape(condition.degraded))
    for i in range(S, 0, -1):
        t, t_next = timestep_subsequence(sched.T, S, i)
        eps_hat = denoiser(J, condition, t)
        abar_t = sched.alpha_bar_at(t)
        abar_next = sched.alpha_bar_at(t_next)
        J0_hat = (J - np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(abar_t)
        if clamp_x0:
            J0_hat = np.clip(J0_hat, 0.0, 1.0)
        sig2 = 0.0
        if eta > 0.0 and t_next > 0:
            sig2 = (eta ** 2) * (1.0 - abar_next) / (1.0 - abar_t) * (1.0 - abar_t / abar_next)
        J = np.sqrt(abar_next) * J0_hat + np.sqrt(max(1.0 - abar_next - sig2, 0.0)) * eps_hat
        if sig2 > 0.0:
            J = J + np.sqrt(sig2) * rng.standard_normal(np.shape(J))
        if trace is not None:
            trace.append((i, t, t_next, float(np.mean(J)), float(np.std(J))))
    return np.clip(J, 0.0, 1.0)


def write_trace(trace, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["i", "t", "t_next", "state_mean", "state_std"])
        writer.writerows(trace)


def analytic_gaussian_denoiser(mu, sigma2, sched):
    """Bayes-optimal noise estimator for J0 ~ N(mu, sigma2 I).

    Test oracle: with a conjugate Gaussian prior the posterior mean
    E[J0 | Jt] is available in closed form, giving the exact eps that a
    perfectly trained network would output.
    """
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    mu = np.asarray(mu, dtype=np.float64)

    def denoiser(J_t, condition, t):
        abar = sched.alpha_bar_at(t)
        post_mean = (sigma2 * np.sqrt(abar) * J_t + (1.0 - abar) * mu) / (
            abar * sigma2 + 1.0 - abar
        )
        return (J_t - np.sqrt(abar) * post_mean) / np.sqrt(1.0 - abar)

    return denoiser
