"""Zero-shot guided sampling: posterior score, predictor-corrector, temporal
convolution over windows, and temporal composition of variable-length chunks.

The score network stays in epsilon-parameterization; every use converts
explicitly via score = -eps / sigma(k).  Guidance differentiates the Gaussian
observation log-density of the conditioning prior through the posterior-mean
(Tweedie) estimate, with variance sigma_c^2 + gamma * sigma^2(k) / mu^2(k).

The deterministic predictor is the exponential-integrator update

    u <- (mu+/mu) u + (mu+/mu - sigma+/sigma) sigma^2(k) s

(the minus-sign, score-parameterized form), followed by Langevin corrections
u <- u + tau s + sqrt(2 tau) eps.

Forecasting composes chunks of length R in [1, T]: R=T denoises the whole
horizon in one pass (trajectory planning), R=1 is classic autoregression.
Chunks shorter than the receptive window W (only R=1 and trailing partial
chunks) are handled by temporal edge-replication padding with guidance
restricted to the real frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .datasets import NormStats
from .errors import SamplingError
from .fields import ConditioningSequence
from .rom import KoopmanROM, rollout
from .schedule import (
    DiffusionTimeGrid,
    NoiseSchedule,
    cosine_schedule,
    eps_to_score,
    schedule_eval,
)

MODES = ("full-posterior", "residual")


@dataclass(frozen=True)
class GuidanceConfig:
    # corrector_conditional=False is the literal Langevin update (uncondi-
    # tional score in the corrector): the conditional variant is linearly
    # unstable whenever tau > 2 * sigma_c2.  max_score_ratio is a per-sample
    # trust region on ||s_c|| relative to ||s_u||: the Gaussian likelihood
    # gradient passes through the network Jacobian, and early in training
    # (or early in denoising) that amplification can exceed the explicit
    # integrator's stability threshold; the cap leaves converged guidance
    # untouched.  None disables it.
    sigma_c2: float = 1e-2
    gamma: float = 1e-2
    mask: np.ndarray | None = None
    mode: str = "full-posterior"
    corrector_conditional: bool = False
    max_score_ratio: float | None = 5.0

    def __post_init__(self):
        if self.sigma_c2 < 0:
            raise ValueError("observation-noise variance must be >= 0")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError("gamma must be positive and finite")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.max_score_ratio is not None and self.max_score_ratio <= 0:
            raise ValueError("max_score_ratio must be positive (or None)")
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if not mask.any():
                raise ValueError("mask selects zero observed entries")
            object.__setattr__(self, "mask", mask)


@dataclass(frozen=True)
class SamplerConfig:
    # k_start stays just below 1: at k=1 the clamped mu floor makes the first
    # predictor ratio mu(k1)/mu(k0) explode (~240x for a 64-step grid), which
    # amplifies learned-score error violently; sigma(0.99) = 0.99988 so the
    # initial marginal is still standard normal to 1e-4.
    steps: int = 64
    corrector_steps: int = 1
    tau: float = 3e-2
    seed: int = 0
    k_start: float = 0.99
    k_end: float = 0.0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("need at least one denoising step")
        if self.corrector_steps < 0:
            raise ValueError("corrector_steps must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def grid(self) -> DiffusionTimeGrid:
        return DiffusionTimeGrid(steps=self.steps, k_start=self.k_start, k_end=self.k_end)


@dataclass(frozen=True)
class PlanConfig:
    horizon: int
    chunk: int
    window: int = 5

    def __post_init__(self):
        if not (1 <= self.chunk <= self.horizon):
            raise ValueError("require 1 <= chunk length R <= horizon T")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd integer")
        if self.chunk > 1 and self.window > self.chunk:
            raise ValueError("window must not exceed the chunk length when R > 1")


def observation_mask(grid_size: int, stride: int) -> np.ndarray:
    """Equally-spaced observation mask; True where (i % stride, j % stride) == 0."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if stride > grid_size:
        raise ValueError(f"stride {stride} exceeds grid size {grid_size}")
    idx = np.arange(grid_size)
    keep = (idx % stride) == 0
    return np.outer(keep, keep)


def apply_mask(c: ConditioningSequence, stride: int) -> ConditioningSequence:
    """Attach an equally-spaced observation mask to a conditioning sequence."""
    mask = observation_mask(c.grid_size, stride)
    return ConditioningSequence(frames=c.frames, origin=c.origin, mask=mask)


def _as_tensor(x, dtype) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _guidance_multiplier(gcfg, frame_weight, like: torch.Tensor) -> torch.Tensor | None:
    mult = None
    if gcfg.mask is not None:
        mult = _as_tensor(gcfg.mask, like.dtype).reshape(1, 1, *gcfg.mask.shape)
    if frame_weight is not None:
        fw = _as_tensor(frame_weight, like.dtype).reshape(1, -1, 1, 1)
        mult = fw if mult is None else mult * fw
    return mult


def posterior_score(net, u_k: torch.Tensor, k: float, c: torch.Tensor | None,
                    gcfg: GuidanceConfig | None, frame_weight=None) -> torch.Tensor:
    """Conditional score s_u + s_c on a batch of windows (B, W, N, N).

    s_u converts the epsilon prediction; s_c differentiates the Gaussian
    log-likelihood of c given the posterior-mean estimate through the network.
    With sigma_c2 = inf (or no conditioning) the unconditional score returns.
    """
    k = float(k)
    k_t = torch.full((u_k.shape[0],), k, dtype=u_k.dtype)
    unconditional = c is None or gcfg is None or not math.isfinite(gcfg.sigma_c2)
    if unconditional:
        with torch.no_grad():
            eps = net(u_k, k_t)
        return eps_to_score(eps, k)
    if u_k.shape != c.shape:
        raise ValueError(f"state shape {tuple(u_k.shape)} != conditioning shape {tuple(c.shape)}")
    mu, sigma = schedule_eval(k)
    if gcfg.sigma_c2 + gcfg.gamma * float(sigma**2 / mu**2) <= 0:
        raise ValueError("guidance variance sigma_c^2 + gamma*sigma^2/mu^2 must be positive")
    mult = _guidance_multiplier(gcfg, frame_weight, u_k)
    if mult is not None and float(mult.sum()) == 0.0:
        raise ValueError("guidance mask selects zero observed entries")
    x = u_k.detach().requires_grad_(True)
    eps = net(x, k_t)
    s_u = eps_to_score(eps, k)
    # log N(c | u_hat, v I) with u_hat = (x + sigma^2 s_u)/mu and
    # v = sigma_c^2 + gamma sigma^2/mu^2, written with the 1/mu factors
    # cancelled so the near-noise end (mu at its clamp floor) stays finite
    # in single precision:  -||mu c - w||^2 / (2 (mu^2 sigma_c^2 + gamma sigma^2))
    # where w = mu u_hat = x + sigma^2 s_u.
    w = x + float(sigma**2) * s_u
    resid = float(mu) * c - w
    if mult is not None:
        resid = resid * mult
    denom = float(mu**2) * gcfg.sigma_c2 + gcfg.gamma * float(sigma**2)
    log_likelihood = -0.5 * resid.square().sum() / denom
    (s_c,) = torch.autograd.grad(log_likelihood, x)
    s_u = s_u.detach()
    if gcfg.max_score_ratio is not None:
        dims = tuple(range(1, s_u.dim()))
        norm_u = s_u.square().sum(dims, keepdim=True).sqrt()
        norm_c = s_c.square().sum(dims, keepdim=True).sqrt()
        limit = gcfg.max_score_ratio * norm_u
        scale = torch.where(norm_c > limit, limit / norm_c.clamp_min(1e-30),
                            torch.ones_like(norm_c))
        s_c = s_c * scale
    return (s_u + s_c).detach()


def predictor_step(u, k: float, k_next: float, score):
    """Exponential-integrator update from k toward the data end at k_next."""
    if k_next > k:
        raise ValueError("k_next must be closer to the data end than k")
    mu_k, sig_k = schedule_eval(float(k))
    mu_n, sig_n = schedule_eval(float(k_next))
    if sig_k <= 0:
        raise ValueError("sigma(k) must be positive in the predictor")
    ratio_mu = float(mu_n / mu_k)
    ratio_sig = float(sig_n / sig_k)
    return ratio_mu * u + (ratio_mu - ratio_sig) * float(sig_k**2) * score


def corrector_step(u, k: float, score, tau: float, rng: np.random.Generator):
    """One Langevin Monte Carlo update u + tau*s + sqrt(2 tau) * eps."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    eps = rng.standard_normal(tuple(u.shape))
    if isinstance(u, torch.Tensor):
        eps = torch.as_tensor(eps, dtype=u.dtype)
    return u + tau * score + math.sqrt(2.0 * tau) * eps


def temporal_convolution_score(net, u_k: torch.Tensor, k: float, c: torch.Tensor | None,
                               gcfg: GuidanceConfig | None, window: int | None = None) -> torch.Tensor:
    """Assemble a full-sequence score from overlapping W-frame windows.

    Frames 1..w+1 take the first w+1 outputs of the leading window, interior
    frames take the center output of the window centered on them, and the last
    w+1 frames take the trailing outputs of the final window.  Guidance is
    applied per window against the matching slice of c.  Sequences shorter
    than the window are rejected (R == W degenerates to one direct call).
    """
    window = int(window if window is not None else net.window)
    if window % 2 == 0:
        raise ValueError("window must be odd")
    b, r = u_k.shape[0], u_k.shape[1]
    if r < window:
        raise ValueError(
            f"sequence length {r} is shorter than the receptive window {window}; "
            "only R == W degenerates to a single whole-sequence window"
        )
    w = (window - 1) // 2
    n_win = r - window + 1

    def to_windows(x):
        wins = x.unfold(1, window, 1)          # (B, n_win, N, N, W)
        return wins.permute(0, 1, 4, 2, 3).reshape(b * n_win, window, *x.shape[2:])

    c_wins = to_windows(c) if c is not None else None
    scores = posterior_score(net, to_windows(u_k), k, c_wins, gcfg)
    scores = scores.reshape(b, n_win, window, *u_k.shape[2:])
    out = torch.empty_like(u_k)
    out[:, : w + 1] = scores[:, 0, : w + 1]
    if n_win > 2:
        out[:, w + 1 : r - w - 1] = scores[:, 1 : n_win - 1, w]
    out[:, r - w - 1 :] = scores[:, n_win - 1, w:]
    return out


def _member_rngs(seed: int, members: int) -> list[np.random.Generator]:
    return [np.random.default_rng([seed, m]) for m in range(members)]


def _stack_noise(rngs, shape, dtype) -> torch.Tensor:
    draws = np.stack([rng.standard_normal(shape) for rng in rngs])
    return torch.as_tensor(draws, dtype=dtype)


def _batched_scores(net, u, k, c, gcfg, window, pad):
    """Scores of the real frames; short sequences are edge-padded to the window."""
    if pad == (0, 0):
        return temporal_convolution_score(net, u, k, c, gcfg, window)
    left, right = pad
    r = u.shape[1]

    def pad_seq(x):
        parts = []
        if left:
            parts.append(x[:, :1].expand(-1, left, -1, -1))
        parts.append(x)
        if right:
            parts.append(x[:, -1:].expand(-1, right, -1, -1))
        return torch.cat(parts, dim=1)

    frame_weight = np.zeros(window)
    frame_weight[left : left + r] = 1.0
    scores = posterior_score(net, pad_seq(u), k, pad_seq(c) if c is not None else None,
                             gcfg, frame_weight=frame_weight)
    return scores[:, left : left + r]


def _denoise(net, schedule: NoiseSchedule, c_norm: torch.Tensor | None, shape,
             gcfg: GuidanceConfig | None, scfg: SamplerConfig, rngs, window: int,
             dtype=torch.float32, state_hook=None) -> torch.Tensor:
    """Run the predictor-corrector chain on (B, R, N, N) states, normalized units."""
    grid = scfg.grid()
    ks = grid.k
    r = shape[1]
    pad = (0, 0)
    if r < window:
        left = (window - r) // 2
        pad = (left, window - r - left)
    u = float(schedule.sigma(ks[0])) * _stack_noise(rngs, shape[1:], dtype)
    guided = c_norm is not None and gcfg is not None and math.isfinite(gcfg.sigma_c2)
    for i in range(grid.steps):
        k, k_next = float(ks[i]), float(ks[i + 1])
        s = _batched_scores(net, u, k, c_norm, gcfg, window, pad)
        u = predictor_step(u, k, k_next, s)
        if not torch.isfinite(u).all():
            raise SamplingError(
                f"non-finite state after predictor step {i} (k={k_next:.4f})",
                step_index=i, k=k_next,
            )
        for _ in range(scfg.corrector_steps):
            if guided and not gcfg.corrector_conditional:
                s = _batched_scores(net, u, k_next, None, None, window, pad)
            else:
                s = _batched_scores(net, u, k_next, c_norm, gcfg, window, pad)
            eps = _stack_noise(rngs, shape[1:], dtype)
            u = u + scfg.tau * s + math.sqrt(2.0 * scfg.tau) * eps
            if not torch.isfinite(u).all():
                raise SamplingError(
                    f"non-finite state after corrector at step {i} (k={k_next:.4f})",
                    step_index=i, k=k_next,
                )
        if state_hook is not None:
            state_hook(i, k_next, u)
    return u


def sample_chunk(net, schedule: NoiseSchedule, c, gcfg: GuidanceConfig | None,
                 scfg: SamplerConfig, stats: NormStats, members: int = 1,
                 rngs=None, dtype=torch.float32, state_hook=None) -> np.ndarray:
    """Sample `members` sequences guided by the R-frame prior; physical units.

    `c` is a ConditioningSequence or an (R, N, N) array in physical units.
    Returns (members, R, N, N).  In residual mode the sampled refinement is
    added to the prior.
    """
    if isinstance(c, ConditioningSequence):
        if gcfg is not None and gcfg.mask is None and c.mask is not None:
            gcfg = replace(gcfg, mask=c.mask)
        c_frames = c.frames
    else:
        c_frames = np.asarray(c)
    r, n = c_frames.shape[0], c_frames.shape[-1]
    window = net.window
    if rngs is None:
        rngs = _member_rngs(scfg.seed, members)
    residual = gcfg is not None and gcfg.mode == "residual"
    if residual:
        target = torch.zeros((1, r, n, n), dtype=dtype)
    else:
        target = _as_tensor(stats.normalize(c_frames.astype(np.float64)), dtype)[None]
    c_norm = target.expand(len(rngs), -1, -1, -1)
    u = _denoise(net, schedule, c_norm, (len(rngs), r, n, n), gcfg, scfg, rngs,
                 window, dtype=dtype, state_hook=state_hook)
    out = stats.denormalize(u.numpy().astype(np.float64))
    if residual:
        out = out + c_frames[None]
    return out


def forecast(net, rom: KoopmanROM, u0: np.ndarray, plan: PlanConfig,
             gcfg: GuidanceConfig | None, scfg: SamplerConfig, stats: NormStats,
             rom_stats: NormStats | None = None, members: int = 1,
             dtype=torch.float32, traj_offset: int = 0) -> np.ndarray:
    """Guided forecast over plan.horizon frames in ceil(T / R) chunks.

    Each chunk rolls the coherent-flow model out from the current initial
    condition, resolves the chunk with guided denoising, and hands the last
    generated frame to the next chunk.  Returns (members, T, N, N) for a
    single initial condition, (G, members, T, N, N) for a batch of G.
    Member noise streams are seeded by (seed, trajectory index, member);
    traj_offset shifts the trajectory index for callers that batch externally.
    """
    if plan.window != net.window:
        raise ValueError(
            f"plan window {plan.window} does not match the trained window {net.window}"
        )
    if rom_stats is None:
        rom_stats = stats
    u0 = np.asarray(u0, dtype=np.float64)
    single = u0.ndim == 2
    ics = u0[None] if single else u0
    g = ics.shape[0]
    n = ics.shape[-1]
    rngs = [
        np.random.default_rng([scfg.seed, traj_offset + gi, m])
        for gi in range(g)
        for m in range(members)
    ]
    current = np.repeat(ics, members, axis=0)  # (G*members, N, N)
    chunks = []
    done = 0
    schedule = cosine_schedule()
    while done < plan.horizon:
        r = min(plan.chunk, plan.horizon - done)
        priors = rollout(rom, current, r, rom_stats)  # (B, r, N, N)
        if gcfg is not None and gcfg.mode == "residual":
            target = torch.zeros((len(rngs), r, n, n), dtype=dtype)
        else:
            target = _as_tensor(stats.normalize(priors), dtype)
        u = _denoise(net, schedule, target if gcfg is not None else None,
                     (len(rngs), r, n, n), gcfg, scfg, rngs, net.window, dtype=dtype)
        resolved = stats.denormalize(u.numpy().astype(np.float64))
        if gcfg is not None and gcfg.mode == "residual":
            resolved = resolved + priors
        chunks.append(resolved)
        current = resolved[:, -1]
        done += r
    out = np.concatenate(chunks, axis=1).reshape(g, members, plan.horizon, n, n)
    return out[0] if single else out
