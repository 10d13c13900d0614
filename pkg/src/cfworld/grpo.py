"""Group-relative policy optimisation of a Gaussian waypoint policy.

The policy perturbs a reference trajectory: waypoint k is drawn from
``N(ref_k + mu_k, diag(sigma_k^2))``.  Its log-density is closed-form, so the
score-function gradient of the RL loss and the gradient of the
behaviour-cloning anchor are both exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import stats

from .geometry import Trajectory, wrap_angle
from .oracle import ORACLES, VeridicalOracle
from .reward import COMPONENTS, RewardConfig, reward_arrays
from .scene import Scenario

LOG_SIGMA_MIN = math.log(1e-3)
LOG_SIGMA_MAX = math.log(10.0)
_LOG_2PI = math.log(2.0 * math.pi)


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, log):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True, eq=False)
class PolicyParams:
    mu: np.ndarray          # (K, 2) offsets from the reference waypoints, metres
    log_sigma: np.ndarray   # (K, 2)

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        ls = np.array(self.log_sigma, dtype=float)
        if mu.shape != ls.shape or mu.ndim != 2 or mu.shape[1] != 2:
            raise ValueError(f"mu and log_sigma must both be (K, 2); got {mu.shape}, {ls.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(ls))):
            raise ValueError("policy parameters must be finite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_sigma", ls)

    @classmethod
    def initial(cls, K: int, sigma: float = 1.0) -> "PolicyParams":
        return cls(np.zeros((K, 2)), np.full((K, 2), math.log(sigma)))

    @property
    def horizon(self) -> int:
        return len(self.mu)

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(np.clip(self.log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX))

    def clamped(self) -> "PolicyParams":
        return PolicyParams(self.mu, np.clip(self.log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.mu.ravel(), self.log_sigma.ravel()])

    @classmethod
    def from_flat(cls, v, K: int) -> "PolicyParams":
        v = np.asarray(v, dtype=float)
        return cls(v[:2 * K].reshape(K, 2), v[2 * K:].reshape(K, 2))

    def __eq__(self, other):
        return (isinstance(other, PolicyParams) and np.array_equal(self.mu, other.mu)
                and np.array_equal(self.log_sigma, other.log_sigma))

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "log_sigma": self.log_sigma.tolist()}

    @classmethod
    def from_dict(cls, d) -> "PolicyParams":
        return cls(np.asarray(d["mu"]), np.asarray(d["log_sigma"]))

    def mean_positions(self, reference: Trajectory) -> np.ndarray:
        return reference.xy + self.mu


@dataclass(frozen=True)
class TrainConfig:
    G: int = 64
    lambda_bc: float = 0.1
    learning_rate: float = 0.0125
    iterations: int = 200
    seed: int = 0
    eps_std: float = 1e-8
    sigma_init: float = 0.3
    bc_samples: int | None = None      # None -> G
    optimizer: str = "adam"
    antithetic: bool = True            # mirrored noise pairs within each group
    qmc: bool = False                  # scrambled Sobol base draws, fresh scrambling every group
    beta1: float = 0.9
    beta2: float = 0.999
    roi_half_size: float | None = 4.0
    divergence_window: int = 20
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.G < 2:
            raise ValueError("G must be >= 2")
        if not (self.lambda_bc >= 0):
            raise ValueError("lambda_bc must be >= 0")
        if not (self.learning_rate >= 0):
            raise ValueError("learning_rate must be >= 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.sigma_init <= 0:
            raise ValueError("sigma_init must be positive")
        if self.bc_samples is not None and self.bc_samples < 1:
            raise ValueError("bc_samples must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")

    @property
    def m_bc(self) -> int:
        return self.G if self.bc_samples is None else self.bc_samples

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# ---- policy density -----------------------------------------------------------------

def log_prob(params: PolicyParams, xy: np.ndarray, reference: Trajectory) -> np.ndarray:
    """Exact Gaussian log-density of waypoint sets ``xy`` (..., K, 2)."""
    sigma = params.sigma
    z = (np.asarray(xy) - reference.xy - params.mu) / sigma
    return (-0.5 * z * z - np.log(sigma) - 0.5 * _LOG_2PI).sum(axis=(-2, -1))


def score(params: PolicyParams, xy: np.ndarray, reference: Trajectory):
    """Gradient of ``log_prob`` w.r.t. (mu, log_sigma) for each sample: two (..., K, 2) arrays."""
    sigma = params.sigma
    z = (np.asarray(xy) - reference.xy - params.mu) / sigma
    inside = (params.log_sigma > LOG_SIGMA_MIN) & (params.log_sigma < LOG_SIGMA_MAX)
    return z / sigma, np.where(inside, z * z - 1.0, 0.0)


def headings(xy: np.ndarray, start_xy, start_yaw: float) -> np.ndarray:
    """Displacement-facing yaw for a batch of waypoint sets (..., K, 2)."""
    xy = np.asarray(xy, dtype=float)
    start = np.broadcast_to(np.asarray(start_xy, dtype=float), xy.shape[:-2] + (1, 2))
    d = np.diff(np.concatenate([start, xy], axis=-2), axis=-2)
    yaw = np.arctan2(d[..., 1], d[..., 0])
    still = (d ** 2).sum(-1) <= 1e-18
    prev = np.full(xy.shape[:-2], float(start_yaw))
    for k in range(xy.shape[-2]):
        yaw[..., k] = np.where(still[..., k], prev, yaw[..., k])
        prev = yaw[..., k]
    return wrap_angle(yaw)


@dataclass
class GroupRollout:
    xy: np.ndarray            # (G, K, 2)
    log_probs: np.ndarray     # (G,)
    rewards: np.ndarray | None = None
    advantages: np.ndarray | None = None
    components: dict = field(default_factory=dict)
    excluded: int = 0

    def trajectories(self, reference: Trajectory) -> list[Trajectory]:
        return [Trajectory.from_positions(x, reference.start, reference.dt, reference.t0) for x in self.xy]


def _normal_draws(rng, n: int, shape, qmc: bool) -> np.ndarray:
    if not qmc:
        return rng.standard_normal((n,) + tuple(shape))
    d = int(np.prod(shape))
    sobol = stats.qmc.Sobol(d, scramble=True, seed=rng)
    u = sobol.random_base2(int(np.log2(n))) if n & (n - 1) == 0 else sobol.random(n)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return stats.norm.ppf(u).reshape((n,) + tuple(shape))


def sample_group(params: PolicyParams, reference: Trajectory, G: int, rng: np.random.Generator,
                 antithetic: bool = False, qmc: bool = False) -> GroupRollout:
    """Draw G waypoint sets.

    ``antithetic`` pairs each draw with its mirror about the mean; ``qmc`` takes
    the base draws from a randomly scrambled Sobol sequence.  Either way every
    sample is marginally Gaussian with the policy's mean and sigma.
    """
    if G < 2:
        raise ValueError("G must be >= 2")
    n = (G + 1) // 2 if antithetic else G
    base = _normal_draws(rng, n, params.mu.shape, qmc)
    eps = np.concatenate([base, -base])[:G] if antithetic else base
    xy = reference.xy + params.mu + params.sigma * eps
    return GroupRollout(xy, log_prob(params, xy, reference))


# ---- losses and gradients --------------------------------------------------------------

def standardize_advantages(rewards, eps_std: float = 1e-8) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    if r.size < 2:
        raise ValueError("need at least two rewards")
    std = r.std()
    if std < eps_std:
        return np.zeros_like(r)
    return (r - r.mean()) / max(std, eps_std)


def loss_rl(log_probs, advantages) -> float:
    return float(-np.mean(np.asarray(log_probs) * np.asarray(advantages)))


def loss_bc(params: PolicyParams, ref_xy: np.ndarray, reference: Trajectory) -> float:
    ref_xy = np.asarray(ref_xy)
    if ref_xy.shape[0] == 0:
        raise ValueError("behaviour cloning needs at least one reference sample")
    return float(-np.mean(log_prob(params, ref_xy, reference)))


def total_loss(params, xy, advantages, ref_xy, reference, lambda_bc) -> float:
    """``L_RL + lambda * L_BC`` for fixed samples and advantages."""
    out = loss_rl(log_prob(params, xy, reference), advantages)
    if lambda_bc:
        out += lambda_bc * loss_bc(params, ref_xy, reference)
    return out


def loss_grad(params: PolicyParams, xy, advantages, ref_xy, reference: Trajectory,
              lambda_bc: float) -> PolicyParams:
    """Analytic gradient of :func:`total_loss`, returned in :class:`PolicyParams` layout."""
    A = np.asarray(advantages, dtype=float)
    g_mu, g_ls = score(params, xy, reference)
    grad_mu = -np.mean(A[:, None, None] * g_mu, axis=0)
    grad_ls = -np.mean(A[:, None, None] * g_ls, axis=0)
    if lambda_bc:
        b_mu, b_ls = score(params, ref_xy, reference)
        grad_mu = grad_mu - lambda_bc * b_mu.mean(axis=0)
        grad_ls = grad_ls - lambda_bc * b_ls.mean(axis=0)
    return PolicyParams(grad_mu, grad_ls)


# ---- rollouts ---------------------------------------------------------------------------

def _oracle(world_model, scenario, roi):
    if world_model is None:
        return VeridicalOracle(scenario, roi)
    if isinstance(world_model, str):
        if world_model not in ORACLES:
            raise ValueError(f"unknown world model {world_model!r}")
        return ORACLES[world_model](scenario, roi)
    return world_model


def evaluate(oracle, reference: Trajectory, xy: np.ndarray, cfg: RewardConfig) -> dict:
    """Reward components for a batch of waypoint sets (G, K, 2) under ``oracle``."""
    xy = np.asarray(xy, dtype=float)
    yaw = headings(xy, reference.start.xy, reference.start.yaw)
    poses = np.concatenate([xy, yaw[..., None]], axis=-1)
    times = np.broadcast_to(reference.times, yaw.shape)
    labels, instance = oracle._post(*oracle._render(poses, times))
    return reward_arrays(labels, instance, len(oracle.agent_ids), oracle.geometry, xy,
                         reference.start, reference.dt, cfg)


def rollout(params, reference, oracle, cfg: RewardConfig, G: int, rng, eps_std=1e-8,
            antithetic=False, qmc=False) -> GroupRollout:
    group = sample_group(params, reference, G, rng, antithetic, qmc)
    comps = evaluate(oracle, reference, group.xy, cfg)
    r = comps["total"]
    finite = np.isfinite(r)
    group.excluded = int((~finite).sum())
    group.rewards = r
    group.components = comps
    adv = np.zeros(G)
    if finite.sum() >= 2:
        adv[finite] = standardize_advantages(r[finite], eps_std)
    group.advantages = adv
    return group


def grad(params: PolicyParams, scenario: Scenario, world_model=None, reward_cfg: RewardConfig | None = None,
         train_cfg: TrainConfig | None = None, rng=None, reference_params: PolicyParams | None = None):
    """One stochastic gradient of the total loss; returns ``(gradient, rollout, ref_samples)``."""
    train_cfg = train_cfg or TrainConfig()
    reward_cfg = reward_cfg or RewardConfig()
    rng = rng if rng is not None else np.random.default_rng(train_cfg.seed)
    reference = scenario.original_traj
    oracle = _oracle(world_model, scenario, train_cfg.roi_half_size)
    group = rollout(params, reference, oracle, reward_cfg, train_cfg.G, rng, train_cfg.eps_std,
                    train_cfg.antithetic, train_cfg.qmc)
    ref_params = reference_params or PolicyParams.initial(reference.horizon, train_cfg.sigma_init)
    ref_xy = sample_group(ref_params, reference, max(train_cfg.m_bc, 2), rng).xy[:train_cfg.m_bc]
    keep = np.isfinite(group.rewards)
    g = loss_grad(params, group.xy[keep], group.advantages[keep], ref_xy, reference, train_cfg.lambda_bc)
    return g, group, ref_xy


# ---- training loop ------------------------------------------------------------------------

class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, theta: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, theta, g):
        return theta - self.lr * g


@dataclass
class TrainResult:
    params: PolicyParams
    log: list[dict]
    final: dict

    def mean_trajectory(self, reference: Trajectory) -> Trajectory:
        return reference.with_positions(self.params.mean_positions(reference))


def smoothed(values, window: int = 20) -> np.ndarray:
    """Trailing moving average over full windows."""
    v = np.asarray(values, dtype=float)
    if len(v) < window:
        return np.zeros(0)
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[window:] - c[:-window]) / window


def train(scenario: Scenario, world_model=None, reward_cfg: RewardConfig | None = None,
          train_cfg: TrainConfig | None = None, init: PolicyParams | None = None,
          log_fn=None) -> TrainResult:
    """Offline GRPO refinement of a Gaussian policy around ``scenario.original_traj``.

    ``log_fn`` receives each per-iteration record (e.g. to stream JSON lines).
    """
    cfg = train_cfg or TrainConfig()
    reward_cfg = reward_cfg or RewardConfig()
    reference = scenario.original_traj
    K = reference.horizon
    oracle = _oracle(world_model, scenario, cfg.roi_half_size)
    ref_params = PolicyParams.initial(K, cfg.sigma_init)
    params = init or ref_params
    if params.horizon != K:
        raise ValueError("policy horizon differs from the scenario horizon")
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0x6A0]))
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2) if cfg.optimizer == "adam" else SGD(cfg.learning_rate)
    log = []
    baseline = spread = None
    bad_streak = 0
    for it in range(cfg.iterations):
        group = rollout(params, reference, oracle, reward_cfg, cfg.G, rng, cfg.eps_std, cfg.antithetic, cfg.qmc)
        ref_xy = sample_group(ref_params, reference, max(cfg.m_bc, 2), rng).xy[:cfg.m_bc]
        keep = np.isfinite(group.rewards)
        xy, adv = group.xy[keep], group.advantages[keep]
        g = loss_grad(params, xy, adv, ref_xy, reference, cfg.lambda_bc)
        l_rl = loss_rl(log_prob(params, xy, reference), adv)
        l_bc = loss_bc(params, ref_xy, reference)
        r = group.rewards[keep]
        rec = {
            "iter": it,
            "mean_reward": float(r.mean()) if r.size else float("nan"),
            "reward_std": float(r.std()) if r.size else float("nan"),
            "loss_rl": l_rl,
            "loss_bc": l_bc,
            "loss_total": l_rl + cfg.lambda_bc * l_bc,
            "sigma_mean": float(params.sigma.mean()),
            "excluded": group.excluded,
        }
        for c in COMPONENTS:
            rec[c] = float(np.asarray(group.components[c])[keep].mean()) if r.size else float("nan")
        log.append(rec)
        if log_fn is not None:
            log_fn(rec)
        if baseline is None:
            baseline, spread = rec["mean_reward"], max(rec["reward_std"], 1e-12)
        elif rec["mean_reward"] < baseline - cfg.divergence_factor * spread:
            bad_streak += 1
            if bad_streak >= cfg.divergence_window:
                raise TrainingDivergedError(
                    f"mean reward stayed below {baseline - cfg.divergence_factor * spread:.3f} "
                    f"for {bad_streak} iterations (initial mean {baseline:.3f}, spread {spread:.3f})", log)
        else:
            bad_streak = 0
        params = PolicyParams.from_flat(opt.step(params.flat(), g.flat()), K).clamped()
    # the cropped oracle undercounts agent voxels in VC-IoU unions; score the result on the full grid
    full = _oracle(world_model, scenario, None)
    final = evaluate(full, reference, params.mean_positions(reference)[None], reward_cfg)
    final = {k: float(np.asarray(v).reshape(-1)[0]) for k, v in final.items()}
    return TrainResult(params, log, final)


def write_log(log, path) -> None:
    with open(path, "w") as fh:
        for rec in log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
