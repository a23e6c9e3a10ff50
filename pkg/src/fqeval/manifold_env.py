"""Synthetic environments on a torus embedded in R^D, and per-step datasets.

The state space is a product of d unit circles, placed into R^D by a seeded
orthogonal map. Latent dynamics are smooth trigonometric drifts plus wrapped
truncated Gaussian noise, so transition means and rewards are infinitely
differentiable in the latent coordinates.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .mdp import Array, Environment, Policy, sample_actions_batch
from .seeding import draw_root, substream

TWO_PI = 2.0 * np.pi

_ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class TorusEmbedding:
    """Maps latent angles z in [0, 2pi)^d to points in R^D.

    Before rotation, latent coordinate i occupies the ambient pair
    (2i, 2i+1) as (cos z_i, sin z_i); the orthogonal ``rotation`` then mixes
    coordinates. Unit circle radii give reach 1 and |embed(z)|_2 = sqrt(d).
    """

    intrinsic_dim: int
    ambient_dim: int
    rotation: Array  # (D, D) orthogonal

    def __post_init__(self) -> None:
        d, D = self.intrinsic_dim, self.ambient_dim
        if D < 2 * d:
            raise ConfigurationError(f"ambient dim {D} < 2 * intrinsic dim {d}")
        R = np.asarray(self.rotation, dtype=float)
        if R.shape != (D, D):
            raise ValueError(f"rotation has shape {R.shape}, expected ({D}, {D})")
        if np.max(np.abs(R @ R.T - np.eye(D))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthogonal")
        object.__setattr__(self, "rotation", R)

    def embed(self, z: Array) -> Array:
        return self.embed_batch(np.asarray(z, dtype=float)[None, :])[0]

    def embed_batch(self, Z: Array) -> Array:
        Z = np.asarray(Z, dtype=float)
        n = Z.shape[0]
        v = np.zeros((n, self.ambient_dim), dtype=float)
        v[:, 0 : 2 * self.intrinsic_dim : 2] = np.cos(Z)
        v[:, 1 : 2 * self.intrinsic_dim : 2] = np.sin(Z)
        return v @ self.rotation.T

    def invert(self, x: Array) -> Array:
        return self.invert_batch(np.asarray(x, dtype=float)[None, :])[0]

    def invert_batch(self, X: Array) -> Array:
        """Recover latent angles in [0, 2pi); exact on manifold points."""
        V = np.asarray(X, dtype=float) @ self.rotation
        cos_part = V[:, 0 : 2 * self.intrinsic_dim : 2]
        sin_part = V[:, 1 : 2 * self.intrinsic_dim : 2]
        return np.mod(np.arctan2(sin_part, cos_part), TWO_PI)


def seeded_rotation(d: int, D: int, rng: np.random.Generator) -> Array:
    """Random orthogonal matrix that keeps the embedded torus in [-1, 1]^D.

    Composes an in-pair phase rotation for each circle with a signed
    permutation of all D coordinates. Every output coordinate then carries
    at most one circle, so the sup-norm bound 1 is exact.
    """
    phases = rng.uniform(0.0, TWO_PI, size=d)
    perm = rng.permutation(D)
    signs = rng.choice([-1.0, 1.0], size=D)
    R = np.zeros((D, D), dtype=float)
    for i in range(d):
        c, s = np.cos(phases[i]), np.sin(phases[i])
        R[perm[2 * i], 2 * i] = signs[perm[2 * i]] * c
        R[perm[2 * i], 2 * i + 1] = -signs[perm[2 * i]] * s
        R[perm[2 * i + 1], 2 * i] = signs[perm[2 * i + 1]] * s
        R[perm[2 * i + 1], 2 * i + 1] = signs[perm[2 * i + 1]] * c
    for j in range(2 * d, D):
        R[perm[j], j] = signs[perm[j]]
    return R


class TorusEnv(Environment):
    """MDP whose states live on an embedded d-torus.

    Latent update: z' = z + drift_h(z, a) + eps (mod 2pi), with the drift a
    first-order trigonometric polynomial per (h, a) and eps a truncated
    Gaussian. Mean rewards are trigonometric polynomials squashed into
    (0, 1); sampled rewards are Bernoulli at the mean or the mean itself.
    """

    def __init__(
        self,
        embedding: TorusEmbedding,
        horizon: int,
        action_count: int,
        drift_const: Array,  # (H, A, d)
        drift_sin: Array,  # (H, A, d, d)
        drift_cos: Array,  # (H, A, d, d)
        reward_const: Array,  # (H, A)
        reward_sin: Array,  # (H, A, n_harmonics, d)
        reward_cos: Array,  # (H, A, n_harmonics, d)
        noise_scale: float,
        reward_noise: str = "bernoulli",
    ):
        if reward_noise not in ("bernoulli", "none"):
            raise ConfigurationError(f"unknown reward_noise {reward_noise!r}")
        self.embedding = embedding
        self.horizon = horizon
        self.action_count = action_count
        self.obs_dim = embedding.ambient_dim
        self.intrinsic_dim = embedding.intrinsic_dim
        self.bound_sup = 1.0
        self.reach = 1.0
        self.drift_const = drift_const
        self.drift_sin = drift_sin
        self.drift_cos = drift_cos
        self.reward_const = reward_const
        self.reward_sin = reward_sin
        self.reward_cos = reward_cos
        self.noise_scale = float(noise_scale)
        self.reward_noise = reward_noise

    # Latent-space pieces. z arrays are (n, d); actions are (n,) indices.

    def latent_of(self, s: Array) -> Array:
        """Diagnostic access to latent coordinates; never fed to learners."""
        return self.embedding.invert(s)

    def latent_of_batch(self, S: Array) -> Array:
        return self.embedding.invert_batch(S)

    def _drift(self, h: int, Z: Array, actions: Array) -> Array:
        c = self.drift_const[h - 1, actions]  # (n, d)
        A_sin = self.drift_sin[h - 1, actions]  # (n, d, d)
        A_cos = self.drift_cos[h - 1, actions]
        return (
            c
            + np.einsum("nij,nj->ni", A_sin, np.sin(Z))
            + np.einsum("nij,nj->ni", A_cos, np.cos(Z))
        )

    def latent_mean_reward(self, h: int, Z: Array, actions: Array) -> Array:
        poly = self.reward_const[h - 1, actions]
        n_harm = self.reward_sin.shape[2]
        for m in range(n_harm):
            poly = poly + np.einsum(
                "ni,ni->n", self.reward_sin[h - 1, actions, m], np.sin((m + 1) * Z)
            )
            poly = poly + np.einsum(
                "ni,ni->n", self.reward_cos[h - 1, actions, m], np.cos((m + 1) * Z)
            )
        return np.clip(0.5 * (1.0 + poly), 0.0, 1.0)

    def latent_step(self, h: int, Z: Array, actions: Array, rng: np.random.Generator) -> Array:
        eps = rng.normal(0.0, 1.0, size=Z.shape)
        eps = self.noise_scale * np.clip(eps, -3.0, 3.0)
        return np.mod(Z + self._drift(h, Z, actions) + eps, TWO_PI)

    # Environment interface.

    def initial_sample(self, rng: np.random.Generator) -> Array:
        return self.initial_sample_batch(1, rng)[0]

    def initial_sample_batch(self, n: int, rng: np.random.Generator) -> Array:
        Z = rng.uniform(0.0, TWO_PI, size=(n, self.intrinsic_dim))
        return self.embedding.embed_batch(Z)

    def transition(self, h: int, s: Array, a: int, rng: np.random.Generator) -> Array:
        return self.transition_batch(h, s[None, :], np.array([a]), rng)[0]

    def transition_batch(self, h: int, states: Array, actions: Array, rng: np.random.Generator) -> Array:
        Z = self.embedding.invert_batch(states)
        return self.embedding.embed_batch(self.latent_step(h, Z, actions, rng))

    def reward(self, h: int, s: Array, a: int, rng: np.random.Generator) -> float:
        return float(self.reward_batch(h, s[None, :], np.array([a]), rng)[0])

    def reward_batch(self, h: int, states: Array, actions: Array, rng: np.random.Generator) -> Array:
        means = self.latent_mean_reward(h, self.embedding.invert_batch(states), actions)
        if self.reward_noise == "none":
            # Consume one uniform per sample regardless, so the draw pattern
            # does not depend on the noise mode.
            rng.random(len(means))
            return means
        u = rng.random(len(means))
        return (u < means).astype(float)

    def mean_reward(self, h: int, s: Array, a: int) -> float:
        Z = self.embedding.invert_batch(s[None, :])
        return float(self.latent_mean_reward(h, Z, np.array([a]))[0])


def make_torus_env(
    d: int,
    D: int,
    horizon: int,
    action_count: int,
    dynamics_seed: int,
    *,
    noise_scale: float = 0.25,
    drift_scale: float = 0.6,
    reward_scale: float = 0.9,
    reward_harmonics: int = 2,
    reward_noise: str = "bernoulli",
) -> TorusEnv:
    """Build a seeded torus environment.

    Drift and reward coefficients are drawn once from ``dynamics_seed`` and
    do not depend on D, so environments with the same seed share latent
    dynamics across ambient dimensions. The rotation is drawn from the same
    seed but consumes a separate substream. ``reward_harmonics`` controls
    how many trigonometric orders enter the mean reward.
    """
    if D < 2 * d:
        raise ConfigurationError(f"need D >= 2d, got D={D}, d={d}")
    if horizon < 1:
        raise ConfigurationError(f"horizon must be >= 1, got {horizon}")
    if action_count < 2:
        raise ConfigurationError(f"need at least 2 actions, got {action_count}")
    if reward_harmonics < 1:
        raise ConfigurationError("reward_harmonics must be >= 1")
    coef_rng = substream(dynamics_seed, 0)
    H, A, M = horizon, action_count, reward_harmonics
    drift_const = drift_scale * coef_rng.uniform(-1.0, 1.0, size=(H, A, d))
    drift_sin = drift_scale / np.sqrt(d) * coef_rng.uniform(-1.0, 1.0, size=(H, A, d, d))
    drift_cos = drift_scale / np.sqrt(d) * coef_rng.uniform(-1.0, 1.0, size=(H, A, d, d))
    w0 = coef_rng.uniform(-1.0, 1.0, size=(H, A))
    ws = coef_rng.uniform(-1.0, 1.0, size=(H, A, M, d))
    wc = coef_rng.uniform(-1.0, 1.0, size=(H, A, M, d))
    # Normalize so the reward polynomial stays within +-reward_scale and the
    # clip in latent_mean_reward never actually binds.
    total = np.abs(w0) + np.abs(ws).sum(axis=(2, 3)) + np.abs(wc).sum(axis=(2, 3))
    scale = reward_scale / np.maximum(total, 1e-12)
    rot_rng = substream(dynamics_seed, 1, D)
    embedding = TorusEmbedding(d, D, seeded_rotation(d, D, rot_rng))
    return TorusEnv(
        embedding=embedding,
        horizon=H,
        action_count=A,
        drift_const=drift_const,
        drift_sin=drift_sin,
        drift_cos=drift_cos,
        reward_const=w0 * scale,
        reward_sin=ws * scale[:, :, None, None],
        reward_cos=wc * scale[:, :, None, None],
        noise_scale=noise_scale,
        reward_noise=reward_noise,
    )


def make_target_policy(env: TorusEnv, seed: int, sharpness: float = 2.0) -> Policy:
    """Smooth state-dependent softmax policy on a torus environment.

    Per (h, a) scores are first-order trigonometric polynomials of the
    latent coordinates, so the policy depends on the observation only
    through the latents and is identical across ambient dimensions.
    """
    rng = substream(seed, 2)
    H, A, d = env.horizon, env.action_count, env.intrinsic_dim
    u0 = rng.uniform(-1.0, 1.0, size=(H, A))
    us = rng.uniform(-1.0, 1.0, size=(H, A, d))
    uc = rng.uniform(-1.0, 1.0, size=(H, A, d))

    def scores(h: int, Z: Array) -> Array:
        return (
            u0[h - 1][None, :]
            + np.sin(Z) @ us[h - 1].T
            + np.cos(Z) @ uc[h - 1].T
        )

    def batch_prob_fn(h: int, states: Array) -> Array:
        Z = env.embedding.invert_batch(states)
        g = sharpness * scores(h, Z)
        g -= g.max(axis=1, keepdims=True)
        e = np.exp(g)
        return e / e.sum(axis=1, keepdims=True)

    def prob_fn(h: int, s: Array) -> Array:
        return batch_prob_fn(h, s[None, :])[0]

    return Policy(H, A, prob_fn, batch_prob_fn, tag=f"torus-target({seed})")


@dataclass(frozen=True)
class StepDataset:
    """K transition tuples (s, a, s', r) collected at one time step."""

    h: int
    states: Array  # (K, D)
    actions: Array  # (K,)
    next_states: Array  # (K, D)
    rewards: Array  # (K,)

    def __post_init__(self) -> None:
        K = len(self.states)
        if not (len(self.actions) == len(self.next_states) == len(self.rewards) == K):
            raise ValueError("dataset arrays have mismatched lengths")
        if K and (np.any(self.rewards < 0) or np.any(self.rewards > 1)):
            raise ValueError("rewards must lie in [0, 1]")

    @property
    def size(self) -> int:
        return len(self.states)

    def permuted(self, perm: Array) -> "StepDataset":
        return StepDataset(
            self.h,
            self.states[perm],
            self.actions[perm],
            self.next_states[perm],
            self.rewards[perm],
        )


def generate_step_dataset(
    env: Environment,
    behavior: Policy,
    h: int,
    K: int,
    rng: np.random.Generator,
    chunk: int = 8192,
) -> StepDataset:
    """Roll K independent episodes to step h and keep the h-th transition.

    Episodes are generated in chunks, each on its own substream keyed by
    (root, h, chunk index), so tuples are mutually independent and the
    result is reproducible for a fixed generator state.
    """
    if not 1 <= h <= env.horizon:
        raise ValueError(f"step index {h} outside 1..{env.horizon}")
    if K < 0:
        raise ValueError(f"negative sample count {K}")
    D = env.obs_dim
    states = np.empty((K, D), dtype=float)
    actions = np.empty(K, dtype=np.int64)
    next_states = np.empty((K, D), dtype=float)
    rewards = np.empty(K, dtype=float)
    root = draw_root(rng)
    start = 0
    ci = 0
    while start < K:
        m = min(chunk, K - start)
        sub = substream(root, h, ci)
        s = env.initial_sample_batch(m, sub)
        for step in range(1, h + 1):
            a = sample_actions_batch(behavior, step, s, sub)
            r = env.reward_batch(step, s, a, sub)
            s_next = env.transition_batch(step, s, a, sub)
            if step == h:
                sl = slice(start, start + m)
                states[sl] = s
                actions[sl] = a
                next_states[sl] = s_next
                rewards[sl] = r
            s = s_next
        start += m
        ci += 1
    return StepDataset(h=h, states=states, actions=actions, next_states=next_states, rewards=rewards)


_MAGIC = b"FQDS"


def save_step_dataset(ds: StepDataset, path: str | Path) -> None:
    """Write the flat binary layout: header (h, K, D), rows (s, a, s', r)."""
    K = ds.size
    D = ds.states.shape[1] if K else 0
    rows = np.empty((K, 2 * D + 2), dtype=np.float64)
    if K:
        rows[:, 0:D] = ds.states
        rows[:, D] = ds.actions
        rows[:, D + 1 : 2 * D + 1] = ds.next_states
        rows[:, 2 * D + 1] = ds.rewards
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<qqq", ds.h, K, D))
        f.write(rows.tobytes(order="C"))


def load_step_dataset(path: str | Path) -> StepDataset:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a step-dataset file: {path}")
        h, K, D = struct.unpack("<qqq", f.read(24))
        rows = np.frombuffer(f.read(), dtype=np.float64).reshape(K, 2 * D + 2)
    return StepDataset(
        h=int(h),
        states=rows[:, 0:D].copy(),
        actions=rows[:, D].astype(np.int64),
        next_states=rows[:, D + 1 : 2 * D + 1].copy(),
        rewards=rows[:, 2 * D + 1].copy(),
    )
