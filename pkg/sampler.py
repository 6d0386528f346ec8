"""
sampler.py - No-U-Turn Sampler with warmup adaptation, and split R-hat.

The sampler works on any differentiable unnormalized log density over R^dim.
Each chain runs independently from its own child seed of the master seed, adapts
its step size by dual averaging toward `target_accept`, and adapts a diagonal
inverse mass matrix from warmup-draw variances inside Stan-style expanding
windows. Trajectories use multinomial sampling across the tree with biased
progressive sampling at the top level.

Chains may run in parallel threads; results are identical to sequential runs
because nothing is shared between chains except the (pure) target.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import logsumexp

from config import DUAL_AVERAGING_CONFIG, SAMPLER_CONFIG
from errors import InvalidArgumentError, SamplerInitializationError, SurrogateError

logger = logging.getLogger(__name__)

ValueAndGrad = Callable[[np.ndarray], Tuple[float, np.ndarray]]


class SamplerConfig(BaseModel):
    chains: int = Field(default_factory=lambda: SAMPLER_CONFIG["chains"])
    draws: int = Field(default_factory=lambda: SAMPLER_CONFIG["draws"])
    warmup: int = Field(default_factory=lambda: SAMPLER_CONFIG["warmup"])
    seed: int = 0
    target_accept: float = Field(default_factory=lambda: SAMPLER_CONFIG["target_accept"])
    max_tree_depth: int = Field(default_factory=lambda: SAMPLER_CONFIG["max_tree_depth"])
    enable_parallel_chains: bool = Field(default_factory=lambda: SAMPLER_CONFIG["enable_parallel_chains"])

    @model_validator(mode="after")
    def _check(self):
        if self.chains < 1 or self.draws < 1 or self.warmup < 0:
            raise ValueError("need chains >= 1, draws >= 1, warmup >= 0")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be >= 1")
        return self


class ChainDiagnostics(BaseModel):
    split_rhat: List[float]
    acceptance_rate: List[float]
    divergence_count: List[int]
    step_size: List[float] = []
    max_depth_hits: List[int] = []
    mean_tree_depth: List[float] = []
    tree_depth_counts: List[List[int]] = []  # per chain, index = depth
    sampling_seconds: float = 0.0


class SampleResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    chains: np.ndarray  # (chains, draws, dim)
    diagnostics: ChainDiagnostics


# ---------------------------
# R-hat
# ---------------------------


def split_rhat(chains: np.ndarray) -> float:
    """Split Gelman-Rubin statistic for one parameter; `chains` is (n_chains, n_draws)."""
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2 or chains.shape[0] < 2 or chains.shape[1] < 4:
        raise InvalidArgumentError("split_rhat needs >= 2 chains of >= 4 draws")
    half = chains.shape[1] // 2
    halves = np.vstack([chains[:, :half], chains[:, chains.shape[1] - half:]])
    within = float(np.mean(np.var(halves, axis=1, ddof=1)))
    if within == 0.0:
        return 1.0
    n = half
    between = n * float(np.var(np.mean(halves, axis=1), ddof=1))
    var_hat = (n - 1) / n * within + between / n
    return float(np.sqrt(var_hat / within))


def summarize_rhat(draws: np.ndarray) -> np.ndarray:
    """Split R-hat for every parameter of a (chains, draws, dim) array."""
    return np.array([split_rhat(draws[:, :, j]) for j in range(draws.shape[2])])


# ---------------------------
# Hamiltonian pieces
# ---------------------------


def kinetic(p: np.ndarray, inv_mass: np.ndarray) -> float:
    return 0.5 * float(np.sum(p * p * inv_mass))


def leapfrog(
    value_and_grad: ValueAndGrad,
    q: np.ndarray,
    p: np.ndarray,
    grad: np.ndarray,
    eps: float,
    inv_mass: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    """One leapfrog step of the Hamiltonian H = -log p(q) + p^T M^-1 p / 2."""
    p_half = p + 0.5 * eps * grad
    q_new = q + eps * inv_mass * p_half
    logp_new, grad_new = value_and_grad(q_new)
    p_new = p_half + 0.5 * eps * grad_new
    return q_new, p_new, logp_new, grad_new


def _safe(value_and_grad: ValueAndGrad) -> ValueAndGrad:
    """Turn numerical failures of the target into -inf so they count as divergences."""

    def wrapped(q):
        try:
            logp, grad = value_and_grad(q)
        except (SurrogateError, FloatingPointError, OverflowError, np.linalg.LinAlgError, ValueError):
            return -np.inf, np.full(q.shape, np.nan)
        logp = float(logp)
        if not np.isfinite(logp) or not np.all(np.isfinite(grad)):
            return -np.inf, np.full(q.shape, np.nan)
        return logp, np.asarray(grad, dtype=float)

    return wrapped


def _is_turning(q_minus, q_plus, p_minus, p_plus, inv_mass) -> bool:
    dq = q_plus - q_minus
    return bool(np.dot(dq, inv_mass * p_minus) < 0.0 or np.dot(dq, inv_mass * p_plus) < 0.0)


@dataclass
class _Tree:
    q_minus: np.ndarray
    p_minus: np.ndarray
    g_minus: np.ndarray
    q_plus: np.ndarray
    p_plus: np.ndarray
    g_plus: np.ndarray
    q_prop: np.ndarray
    logp_prop: float
    g_prop: np.ndarray
    log_weight: float
    turning: bool
    divergent: bool
    accept_sum: float
    n_leapfrog: int


def _build_tree(vg, q, p, g, direction, depth, eps, inv_mass, H0, max_delta, rng) -> _Tree:
    if depth == 0:
        q1, p1, logp1, g1 = leapfrog(vg, q, p, g, direction * eps, inv_mass)
        H1 = -logp1 + kinetic(p1, inv_mass)
        delta = H1 - H0 if np.isfinite(H1) else np.inf
        divergent = bool(delta > max_delta)
        accept = math.exp(min(0.0, -delta)) if np.isfinite(delta) else 0.0
        return _Tree(q1, p1, g1, q1, p1, g1, q1, logp1, g1, -delta, False, divergent, accept, 1)

    inner = _build_tree(vg, q, p, g, direction, depth - 1, eps, inv_mass, H0, max_delta, rng)
    if inner.turning or inner.divergent:
        return inner
    if direction < 0:
        outer = _build_tree(vg, inner.q_minus, inner.p_minus, inner.g_minus, direction, depth - 1,
                            eps, inv_mass, H0, max_delta, rng)
        q_minus, p_minus, g_minus = outer.q_minus, outer.p_minus, outer.g_minus
        q_plus, p_plus, g_plus = inner.q_plus, inner.p_plus, inner.g_plus
    else:
        outer = _build_tree(vg, inner.q_plus, inner.p_plus, inner.g_plus, direction, depth - 1,
                            eps, inv_mass, H0, max_delta, rng)
        q_minus, p_minus, g_minus = inner.q_minus, inner.p_minus, inner.g_minus
        q_plus, p_plus, g_plus = outer.q_plus, outer.p_plus, outer.g_plus

    accept_sum = inner.accept_sum + outer.accept_sum
    n_leapfrog = inner.n_leapfrog + outer.n_leapfrog
    if outer.turning or outer.divergent:
        return _Tree(q_minus, p_minus, g_minus, q_plus, p_plus, g_plus, inner.q_prop, inner.logp_prop,
                     inner.g_prop, inner.log_weight, outer.turning, outer.divergent, accept_sum, n_leapfrog)

    # uniform progressive sampling inside a subtree
    log_weight = float(np.logaddexp(inner.log_weight, outer.log_weight))
    if math.log1p(-rng.uniform()) < outer.log_weight - log_weight:
        q_prop, logp_prop, g_prop = outer.q_prop, outer.logp_prop, outer.g_prop
    else:
        q_prop, logp_prop, g_prop = inner.q_prop, inner.logp_prop, inner.g_prop
    turning = _is_turning(q_minus, q_plus, p_minus, p_plus, inv_mass)
    return _Tree(q_minus, p_minus, g_minus, q_plus, p_plus, g_plus, q_prop, logp_prop, g_prop,
                 log_weight, turning, False, accept_sum, n_leapfrog)


def nuts_transition(vg, q0, logp0, g0, eps, inv_mass, max_depth, max_delta, rng):
    """
    One NUTS transition from q0.

    Returns (q, logp, grad, accept_stat, depth, divergent, hit_max_depth).
    """
    p0 = rng.standard_normal(q0.shape[0]) / np.sqrt(inv_mass)
    H0 = -logp0 + kinetic(p0, inv_mass)
    q_minus = q_plus = q0
    p_minus = p_plus = p0
    g_minus = g_plus = g0
    q, logp, g = q0, logp0, g0
    log_weight = 0.0
    accept_sum = 0.0
    n_leapfrog = 0
    divergent = False
    depth = 0
    while depth < max_depth:
        direction = -1 if rng.uniform() < 0.5 else 1
        if direction < 0:
            tree = _build_tree(vg, q_minus, p_minus, g_minus, -1, depth, eps, inv_mass, H0, max_delta, rng)
            q_minus, p_minus, g_minus = tree.q_minus, tree.p_minus, tree.g_minus
        else:
            tree = _build_tree(vg, q_plus, p_plus, g_plus, 1, depth, eps, inv_mass, H0, max_delta, rng)
            q_plus, p_plus, g_plus = tree.q_plus, tree.p_plus, tree.g_plus
        accept_sum += tree.accept_sum
        n_leapfrog += tree.n_leapfrog
        depth += 1
        if tree.divergent:
            divergent = True
            break
        if tree.turning:
            break
        # biased progressive sampling favours the new subtree
        if math.log1p(-rng.uniform()) < tree.log_weight - log_weight:
            q, logp, g = tree.q_prop, tree.logp_prop, tree.g_prop
        log_weight = float(np.logaddexp(log_weight, tree.log_weight))
        if _is_turning(q_minus, q_plus, p_minus, p_plus, inv_mass):
            break
    hit_max = depth >= max_depth and not divergent
    return q, logp, g, accept_sum / max(1, n_leapfrog), depth, divergent, hit_max


def find_reasonable_step_size(vg, q, logp, grad, inv_mass, rng, eps: float = 1.0) -> float:
    """Double or halve eps until the one-step acceptance probability crosses 1/2."""
    p = rng.standard_normal(q.shape[0]) / np.sqrt(inv_mass)
    H0 = -logp + kinetic(p, inv_mass)

    def log_accept(step):
        _, p1, logp1, _ = leapfrog(vg, q, p, grad, step, inv_mass)
        H1 = -logp1 + kinetic(p1, inv_mass)
        return H0 - H1 if np.isfinite(H1) else -np.inf

    direction = 1.0 if log_accept(eps) > math.log(0.5) else -1.0
    for _ in range(100):
        if direction > 0 and not log_accept(eps * 2.0) > math.log(0.5):
            break
        if direction < 0 and log_accept(eps) > math.log(0.5):
            break
        eps = eps * 2.0 if direction > 0 else eps * 0.5
        if eps < 1e-10 or eps > 1e7:
            break
    return float(min(max(eps, 1e-10), 1e7))


class DualAveraging:
    def __init__(self, eps: float, target: float):
        self.mu = math.log(10.0 * eps)
        self.target = target
        self.h_bar = 0.0
        self.log_eps = math.log(eps)
        self.log_eps_bar = 0.0
        self.t = 0

    def update(self, accept_stat: float) -> float:
        self.t += 1
        gamma = DUAL_AVERAGING_CONFIG["gamma"]
        t0 = DUAL_AVERAGING_CONFIG["t0"]
        kappa = DUAL_AVERAGING_CONFIG["kappa"]
        eta = 1.0 / (self.t + t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat)
        self.log_eps = self.mu - math.sqrt(self.t) / gamma * self.h_bar
        w = self.t ** (-kappa)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    def final(self) -> float:
        return math.exp(self.log_eps_bar)


class WelfordVariance:
    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, x: np.ndarray) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + delta * (x - self.mean)

    def regularized(self) -> np.ndarray:
        # shrink toward 1e-3 as in Stan's diagonal metric adaptation
        var = self.m2 / max(self.n - 1, 1)
        return (self.n / (self.n + 5.0)) * var + 1e-3 * (5.0 / (self.n + 5.0))


def warmup_windows(warmup: int) -> List[Tuple[int, int]]:
    """Expanding mass-adaptation windows [start, end) inside the warmup phase."""
    if warmup < 20:
        return []
    if warmup >= 150:
        init_buffer, term_buffer, base = 75, 50, 25
    else:
        init_buffer = max(1, int(0.15 * warmup))
        term_buffer = max(1, int(0.1 * warmup))
        base = max(1, (warmup - init_buffer - term_buffer) // 3)
    start, end_middle = init_buffer, warmup - term_buffer
    windows = []
    width = base
    while start < end_middle:
        end = start + width
        # fold a too-short tail into the current window
        if end_middle - end < 2 * width:
            end = end_middle
        windows.append((start, end))
        start = end
        width *= 2
    return windows


def _initial_point(vg, dim, rng, init_fn, retries) -> Tuple[np.ndarray, float, np.ndarray]:
    for attempt in range(retries):
        q = np.asarray(init_fn(rng), dtype=float) if init_fn else rng.standard_normal(dim)
        logp, grad = vg(q)
        if np.isfinite(logp):
            return q, logp, grad
        logger.debug("[Sampler] init attempt %d gave non-finite log density", attempt + 1)
    raise SamplerInitializationError(f"no finite initial point after {retries} draws")


def _run_chain(chain, seed_seq, vg, dim, cfg: SamplerConfig, init_fn) -> Dict:
    rng = np.random.default_rng(seed_seq)
    max_delta = SAMPLER_CONFIG["max_delta_energy"]
    q, logp, grad = _initial_point(vg, dim, rng, init_fn, SAMPLER_CONFIG["init_retries"])
    inv_mass = np.ones(dim)
    eps = find_reasonable_step_size(vg, q, logp, grad, inv_mass, rng)
    adapt = DualAveraging(eps, cfg.target_accept)
    windows = warmup_windows(cfg.warmup)
    window_ends = {end for _, end in windows}
    welford = WelfordVariance(dim)

    for t in range(cfg.warmup):
        q, logp, grad, accept, _, _, _ = nuts_transition(
            vg, q, logp, grad, eps, inv_mass, cfg.max_tree_depth, max_delta, rng
        )
        eps = adapt.update(accept)
        if any(start <= t < end for start, end in windows):
            welford.update(q)
        if (t + 1) in window_ends:
            inv_mass = welford.regularized()
            welford = WelfordVariance(dim)
            eps = find_reasonable_step_size(vg, q, logp, grad, inv_mass, rng, eps)
            adapt = DualAveraging(eps, cfg.target_accept)
    if cfg.warmup > 0:
        eps = adapt.final()
    logger.debug("[Sampler] chain %d warmup done, step size %.4g", chain, eps)

    draws = np.empty((cfg.draws, dim))
    accepts = np.empty(cfg.draws)
    depths = np.empty(cfg.draws)
    divergences = 0
    max_hits = 0
    for t in range(cfg.draws):
        q, logp, grad, accept, depth, divergent, hit_max = nuts_transition(
            vg, q, logp, grad, eps, inv_mass, cfg.max_tree_depth, max_delta, rng
        )
        draws[t] = q
        accepts[t] = accept
        depths[t] = depth
        divergences += int(divergent)
        max_hits += int(hit_max)
    logger.info(
        "[Sampler] chain %d: accept=%.3f divergences=%d max-depth hits=%d step=%.4g",
        chain, accepts.mean(), divergences, max_hits, eps,
    )
    return {
        "draws": draws,
        "accept": float(accepts.mean()),
        "divergences": divergences,
        "max_hits": max_hits,
        "step_size": float(eps),
        "mean_depth": float(depths.mean()),
        "depth_counts": np.bincount(depths.astype(int), minlength=cfg.max_tree_depth + 1).tolist(),
    }


def nuts_sample(
    logdensity: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    dim: int,
    cfg: SamplerConfig,
    init_fn: Optional[Callable[[np.random.Generator], np.ndarray]] = None,
    value_and_grad: Optional[ValueAndGrad] = None,
) -> SampleResult:
    """
    Draw cfg.chains x cfg.draws post-warmup samples.

    `value_and_grad`, when given, is used instead of separate calls to
    `logdensity` and `gradient` (they usually share a Cholesky factorization).
    `init_fn(rng)` draws initial points; standard normal by default.
    """
    if dim < 1:
        raise InvalidArgumentError("dim must be >= 1")
    if value_and_grad is None:
        def value_and_grad(q):
            return logdensity(q), gradient(q)
    vg = _safe(value_and_grad)

    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    started = time.monotonic()
    if cfg.enable_parallel_chains and cfg.chains > 1:
        logger.info("[Sampler] running %d chains in parallel (dim=%d)", cfg.chains, dim)
        with ThreadPoolExecutor(max_workers=cfg.chains) as pool:
            results = list(pool.map(lambda c: _run_chain(c, seeds[c], vg, dim, cfg, init_fn), range(cfg.chains)))
    else:
        logger.info("[Sampler] running %d chains sequentially (dim=%d)", cfg.chains, dim)
        results = [_run_chain(c, seeds[c], vg, dim, cfg, init_fn) for c in range(cfg.chains)]
    elapsed = time.monotonic() - started

    chains = np.stack([r["draws"] for r in results])
    if cfg.chains >= 2 and cfg.draws >= 4:
        rhat = summarize_rhat(chains).tolist()
    else:
        rhat = [float("nan")] * dim
    diagnostics = ChainDiagnostics(
        split_rhat=rhat,
        acceptance_rate=[r["accept"] for r in results],
        divergence_count=[r["divergences"] for r in results],
        step_size=[r["step_size"] for r in results],
        max_depth_hits=[r["max_hits"] for r in results],
        mean_tree_depth=[r["mean_depth"] for r in results],
        tree_depth_counts=[r["depth_counts"] for r in results],
        sampling_seconds=elapsed,
    )
    return SampleResult(chains=chains, diagnostics=diagnostics)


def log_mean_exp(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """log(mean(exp(values))) along an axis."""
    return logsumexp(values, axis=axis) - np.log(values.shape[axis])
