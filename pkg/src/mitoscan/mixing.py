"""Feature-distribution mixing between sample pairs.

Mixes the feature values of two samples with a stop-gradient construction:
the mixed value is mu*u + (1-mu)*v, but gradients flow to u with weight 1
and to v with weight (1-mu). In sorted mode the mix happens between order
statistics along the last dimension and the result scatters back through
u's sort permutation, matching the two distributions pointwise.
"""
from __future__ import annotations

import torch


def efdmix(u: torch.Tensor, v: torch.Tensor, mu, sorted_mode: bool = True) -> torch.Tensor:
    """Mix features u and v with instance weight mu.

    mu may be a float or a tensor broadcastable against u (e.g. one weight
    per batch element). Sorting, when enabled, runs along the last
    dimension.
    """
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch: {tuple(u.shape)} vs {tuple(v.shape)}")
    mu_t = torch.as_tensor(mu, dtype=u.dtype, device=u.device)
    if bool((mu_t < 0).any() or (mu_t > 1).any()):
        raise ValueError("mu must lie in [0, 1]")
    one_minus = 1.0 - mu_t
    if not sorted_mode:
        return u + one_minus * v - one_minus * u.detach()
    u_sorted, u_idx = torch.sort(u, dim=-1)
    v_sorted, _ = torch.sort(v, dim=-1)
    mixed = u_sorted + one_minus * v_sorted - one_minus * u_sorted.detach()
    return torch.zeros_like(mixed).scatter(-1, u_idx, mixed)


def sample_mix_weights(rng, batch_size: int, beta: float) -> torch.Tensor:
    """Per-instance Beta(beta, beta) mixing weights as a float32 tensor."""
    mu = rng.beta(beta, beta, size=batch_size)
    return torch.as_tensor(mu, dtype=torch.float32)
