"""Architecture search over the toy supernet.

Three pieces:

* relaxed categorical sampling of per-edge op choices (Gumbel-softmax), so
  the validation loss is differentiable in the op logits;
* variational fitting of those logits against a uniform prior (one gradient
  step per call: sample, evaluate joint NLL plus an expected-MACs penalty,
  add the KL term, descend);
* a particle sampler whose update combines a kernel-weighted log-posterior
  driving force with a kernel-gradient repulsive force scaled by (1 + delta),
  run with momentum SGD. The repulsion coefficient is signed and applied
  exactly as configured.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .supernet import ToySupernet
from .toytrain import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ArchParams:
    """Per-edge operation logits plus the sampling temperature."""

    alpha: tuple[np.ndarray, ...]
    lambda_temp: float = 1.0

    def __post_init__(self):
        if self.lambda_temp <= 0:
            raise ConfigError(f"temperature must be positive, got {self.lambda_temp}")
        alpha = tuple(np.asarray(a, dtype=np.float64) for a in self.alpha)
        for i, a in enumerate(alpha):
            if a.ndim != 1 or a.size < 2:
                raise ConfigError(f"edge {i}: logits must be a vector of >= 2 ops")
            if not np.isfinite(a).all():
                raise ConfigError(f"edge {i}: non-finite logits")
        object.__setattr__(self, "alpha", alpha)

    def sizes(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.alpha)

    def flatten(self) -> np.ndarray:
        return np.concatenate(self.alpha)


def unflatten(vec: np.ndarray, sizes: tuple[int, ...]) -> list[np.ndarray]:
    out = []
    offset = 0
    for size in sizes:
        out.append(np.asarray(vec[offset : offset + size], dtype=np.float64))
        offset += size
    return out


def uniform_params(sizes: tuple[int, ...], lambda_temp: float = 1.0) -> ArchParams:
    return ArchParams(tuple(np.zeros(s) for s in sizes), lambda_temp)


# --- Gumbel-softmax sampling -------------------------------------------------


def gumbel_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    u = rng.uniform(size=size)
    return -np.log(-np.log(u))


def _soft_sample(logits: np.ndarray, lambda_temp: float, noise: np.ndarray) -> np.ndarray:
    u = (logits + noise) / lambda_temp
    u = u - u.max()
    z = np.exp(u)
    return z / z.sum()


def gumbel_sample(
    alpha: np.ndarray,
    lambda_temp: float,
    noise_seed: int | np.random.Generator,
) -> np.ndarray:
    """Softened one-hot draw: softmax((logits + Gumbel noise) / temperature).

    Deterministic given the seed; components are positive and sum to 1.
    """
    logits = np.asarray(alpha, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise ConfigError("non-finite logits")
    if lambda_temp <= 0:
        raise ConfigError(f"temperature must be positive, got {lambda_temp}")
    rng = (
        noise_seed
        if isinstance(noise_seed, np.random.Generator)
        else np.random.default_rng(noise_seed)
    )
    return _soft_sample(logits, lambda_temp, gumbel_noise(rng, logits.size))


def soft_sample_grad_chain(
    z: np.ndarray, grad_z: np.ndarray, lambda_temp: float
) -> np.ndarray:
    """Pull a dL/dZ back to dL/dlogits through the softmax at fixed noise."""
    return z * (grad_z - float(np.dot(z, grad_z))) / lambda_temp


# --- expected-MACs penalty ---------------------------------------------------


def macs_penalty(supernet: ToySupernet, z_list: list[np.ndarray]) -> float:
    """Expected MACs of a softened architecture: sum over edges of MACs . Z."""
    z_list = [np.asarray(z, dtype=np.float64) for z in z_list]
    if len(z_list) != supernet.num_edges:
        raise ConfigError(
            f"expected {supernet.num_edges} mixing vectors, got {len(z_list)}"
        )
    total = 0.0
    for i, z in enumerate(z_list):
        if z.shape != supernet.macs[i].shape:
            raise ConfigError(f"edge {i}: mixing vector does not match MACs table")
        total += float(np.dot(supernet.macs[i], z))
    return total


# --- variational posterior fitting (one step + driver) -----------------------


def kl_uniform(alpha: tuple[np.ndarray, ...] | list[np.ndarray]) -> float:
    """KL(q_phi || uniform) = sum over edges of (log |O| - entropy)."""
    total = 0.0
    for logits in alpha:
        p = _stable_softmax(np.asarray(logits, dtype=np.float64))
        entropy = -float(np.sum(p * np.log(np.maximum(p, 1e-300))))
        total += math.log(len(p)) - entropy
    return total


def _stable_softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


def _kl_uniform_grad(logits: np.ndarray) -> np.ndarray:
    p = _stable_softmax(logits)
    log_p = np.log(np.maximum(p, 1e-300))
    entropy = -float(np.sum(p * log_p))
    return p * (log_p + entropy)


def elbo_step(
    phi: ArchParams,
    supernet: ToySupernet,
    beta_kl: float,
    eta: float,
    seed: int,
    cost_weight: float = 0.0,
) -> tuple[ArchParams, float, float]:
    """One variational step: sample, score, regularize, descend.

    Samples one architecture through the reparameterized relaxation, scores
    its joint validation NLL (plus the expected-MACs penalty when weighted),
    adds beta_kl times the KL against the uniform prior, and takes one
    gradient-descent step on the logits. Returns the updated parameters with
    the (nll, kl) pair at the sampled point.
    """
    if beta_kl < 0:
        raise ConfigError(f"beta_kl must be >= 0, got {beta_kl}")
    rng = np.random.default_rng(seed)
    z_list = [
        _soft_sample(a, phi.lambda_temp, gumbel_noise(rng, a.size)) for a in phi.alpha
    ]
    nll, grad_z = supernet.joint_nll(z_list)
    if not math.isfinite(nll):
        raise ConfigError(f"non-finite loss {nll} in variational step")
    if cost_weight:
        for i in range(len(grad_z)):
            grad_z[i] = grad_z[i] + cost_weight * supernet.macs[i]
    kl = kl_uniform(phi.alpha)

    new_alpha = []
    for a, z, gz in zip(phi.alpha, z_list, grad_z):
        grad = soft_sample_grad_chain(z, gz, phi.lambda_temp)
        grad = grad + beta_kl * _kl_uniform_grad(a)
        new_alpha.append(a - eta * grad)
    return replace(phi, alpha=tuple(new_alpha)), nll, kl


def fit_posterior(
    supernet: ToySupernet,
    iterations: int = 200,
    eta: float = 0.05,
    beta_kl: float = 0.05,
    cost_weight: float = 1e-3,
    seed: int = 0,
    lambda_start: float = 1.0,
    lambda_end: float = 0.1,
    init: ArchParams | None = None,
) -> tuple[ArchParams, list[tuple[float, float]]]:
    """Drive elbo_step with a linearly annealed sampling temperature."""
    sizes = tuple(supernet.ops_per_edge())
    phi = init if init is not None else uniform_params(sizes, lambda_start)
    history = []
    for it in range(iterations):
        frac = it / max(iterations - 1, 1)
        lam = lambda_start + (lambda_end - lambda_start) * frac
        phi = replace(phi, lambda_temp=lam)
        phi, nll, kl = elbo_step(
            phi, supernet, beta_kl=beta_kl, eta=eta, seed=seed + it,
            cost_weight=cost_weight,
        )
        history.append((nll, kl))
    return phi, history


# --- SVGD with regularized diversity -----------------------------------------


@dataclass
class Particle:
    """One architecture-parameter vector in the swarm, with momentum."""

    position: np.ndarray
    velocity: np.ndarray

    @classmethod
    def at(cls, position: np.ndarray) -> "Particle":
        position = np.asarray(position, dtype=np.float64)
        return cls(position.copy(), np.zeros_like(position))


@dataclass(frozen=True)
class SVGDConfig:
    particle_count: int
    step_size: float = 0.1
    momentum: float = 0.9
    delta: float = -1.3
    iterations: int = 1000
    bandwidth: float | str = "median"
    kernel: str = "rbf"
    seed: int = 0

    def __post_init__(self):
        if self.particle_count < 2:
            raise ConfigError(f"swarm needs >= 2 particles, got {self.particle_count}")
        if self.step_size <= 0:
            raise ConfigError(f"step size must be positive, got {self.step_size}")
        if self.kernel not in ("rbf", "delta"):
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median":
                raise ConfigError(f"unknown bandwidth rule {self.bandwidth!r}")
        elif self.bandwidth <= 0:
            raise ConfigError(f"bandwidth must be positive, got {self.bandwidth}")


def _pairwise_sq_dists(positions: np.ndarray) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    return np.sum(diff * diff, axis=2)


def _rbf_bandwidth(sq_dists: np.ndarray, cfg: SVGDConfig) -> float:
    if not isinstance(cfg.bandwidth, str):
        return float(cfg.bandwidth)
    n = sq_dists.shape[0]
    off_diag = sq_dists[~np.eye(n, dtype=bool)]
    med = float(np.median(off_diag))
    h = med / math.log(n) if n > 1 else 1.0
    return h if h > 1e-12 else 1.0


def svgd_direction(
    positions: np.ndarray, grads: np.ndarray, cfg: SVGDConfig
) -> np.ndarray:
    """Update direction: kernel-weighted driving force plus scaled repulsion."""
    n = positions.shape[0]
    if cfg.kernel == "delta":
        return grads / n
    sq = _pairwise_sq_dists(positions)
    h = _rbf_bandwidth(sq, cfg)
    kmat = np.exp(-sq / h)
    driving = kmat @ grads
    # sum_j grad_{x_j} k(x_j, x_i) = (2/h) (x_i * rowsum_i - (K X)_i)
    repulsion = (2.0 / h) * (positions * kmat.sum(axis=1, keepdims=True) - kmat @ positions)
    return (driving + (1.0 + cfg.delta) * repulsion) / n


def svgd_rd_step(particles, log_posterior, cfg: SVGDConfig):
    """Advance the whole swarm one synchronous momentum-SGD step.

    ``log_posterior(positions)`` must return (log-density values, gradients)
    for a stacked (N, D) array. All forces are computed from the pre-step
    positions; the update is deterministic given its inputs.
    """
    positions = np.stack([p.position for p in particles])
    _logp, grads = log_posterior(positions)
    grads = np.asarray(grads, dtype=np.float64)
    if not np.isfinite(grads).all():
        raise ConfigError("non-finite log-posterior gradient")
    phi = svgd_direction(positions, grads, cfg)
    out = []
    for particle, direction in zip(particles, phi):
        velocity = cfg.momentum * particle.velocity + cfg.step_size * direction
        out.append(Particle(particle.position + velocity, velocity))
    return out


def run_svgd(particles, log_posterior, cfg: SVGDConfig, record_every: int = 0):
    """Run the configured number of steps; optionally record the trajectory."""
    trajectory = []
    for it in range(cfg.iterations):
        particles = svgd_rd_step(particles, log_posterior, cfg)
        if record_every and (it % record_every == 0 or it == cfg.iterations - 1):
            trajectory.append((it, np.stack([p.position for p in particles])))
    return particles, trajectory


def init_swarm(
    center: np.ndarray, count: int, spread: float = 1.0, seed: int = 0
) -> list[Particle]:
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=np.float64)
    return [
        Particle.at(center + spread * rng.standard_normal(center.size))
        for _ in range(count)
    ]


def make_logits_posterior(phi_star: ArchParams):
    """Log-posterior over particle positions from the fitted op logits.

    A particle is a flattened per-edge logits vector; its log-density is the
    particle's op distribution scored against the fitted posterior log-mass,
    edge by edge (the continuous extension of the categorical log-pmf to the
    simplex interior). Returns a callable producing values and gradients.
    """
    sizes = phi_star.sizes()
    log_q = [
        np.log(np.maximum(_stable_softmax(a), 1e-300)) for a in phi_star.alpha
    ]

    def log_posterior(positions: np.ndarray):
        positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        n = positions.shape[0]
        values = np.zeros(n)
        grads = np.zeros_like(positions)
        for row in range(n):
            offset = 0
            for size, lq in zip(sizes, log_q):
                seg = positions[row, offset : offset + size]
                s = _stable_softmax(seg)
                score = float(np.dot(s, lq))
                values[row] += score
                grads[row, offset : offset + size] = s * (lq - score)
                offset += size
        return values, grads

    return log_posterior


def discretize(position: np.ndarray, sizes: tuple[int, ...]) -> tuple[int, ...]:
    """Per-edge argmax of a particle's logits segments."""
    return tuple(int(np.argmax(seg)) for seg in unflatten(position, sizes))


def select_ensemble(
    swarm: list[Particle], supernet: ToySupernet, ensemble_size: int
) -> list[tuple[int, ...]]:
    """Distinct discretized architectures, best validation NLL first.

    Returns fewer than requested (with a warning) when the swarm does not
    cover enough distinct architectures.
    """
    if ensemble_size < 1:
        raise ConfigError(f"ensemble size must be >= 1, got {ensemble_size}")
    if len(swarm) < ensemble_size:
        raise ConfigError(
            f"swarm holds {len(swarm)} particles, fewer than the requested "
            f"{ensemble_size} ensemble members"
        )
    sizes = tuple(supernet.ops_per_edge())
    distinct: dict[tuple[int, ...], float] = {}
    for particle in swarm:
        arch = discretize(particle.position, sizes)
        if arch not in distinct:
            distinct[arch] = supernet.nll_of_discrete(arch)
    ranked = sorted(distinct.items(), key=lambda kv: (kv[1], kv[0]))
    if len(ranked) < ensemble_size:
        logger.warning(
            "swarm covers %d distinct architectures, fewer than the requested %d",
            len(ranked),
            ensemble_size,
        )
    return [arch for arch, _nll in ranked[:ensemble_size]]
