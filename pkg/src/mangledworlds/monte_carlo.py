"""Branching-worlds random walk with absorption and tilted sampling.

One simulated path follows a single lineage through N binary split events:
log-size x starts at 0 and gains ln p or ln(1-p) per event, and the lineage
dies the first time x falls to the boundary x_b(n) = n*xhat1 - eps.  Summed
over sampled paths with the right weights this estimates the number of
surviving lineages in the full 2^N world tree:

* ``tilt="none"``: children sampled uniformly (prob 1/2 each); a surviving
  path contributes 2^N.
* ``tilt="measure"``: children sampled with their measure fractions
  (p, 1-p); a surviving path contributes e^{-x_N}, the exact product of
  1/q over the chosen branches.  This walk drifts exactly along the
  boundary, so survivors stay common even when N sigma1^2 is large and the
  uniform walk's survival probability is exponentially tiny.

Both estimators are unbiased for the same count; their agreement is a
standing cross-check.  Estimates and standard errors are carried in log
space (weights like 2^3600 never materialize).

Determinism: draws come from a counter-based generator, two rounds of the
splitmix64 finalizer keyed by (seed, path index, event index), so a path's
randomness is a pure function of its index.  Paths are processed in fixed
chunks of 2^16 and the per-chunk partials are reduced in index order, which
makes results bit-identical for any worker count.  Absorbed paths are
compacted away each event, so the cost per event is proportional to the
number of still-alive paths.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .model_params import DecoherenceParams, binary_event_stats, to_diffusion
from .special_functions import LogValue, logaddexp, logsubexp

_LN2 = math.log(2.0)
CHUNK = 1 << 16
_MAX_PATHS = 1 << 31
_MAX_EVENTS = 1 << 31

BOUNDARY_RULES = ("continuum", "paper_continuum")
TILTS = ("none", "measure")

# ---------------------------------------------------------------------------
# counter-based uniforms: value = f(seed, path, event), vectorized over paths
# ---------------------------------------------------------------------------

_U = np.uint64
_GAMMA = _U(0x9E3779B97F4A7C15)
_M1 = _U(0xBF58476D1CE4E5B9)
_M2 = _U(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps mod 2^64
    z = z + _GAMMA
    z = (z ^ (z >> _U(30))) * _M1
    z = (z ^ (z >> _U(27))) * _M2
    return z ^ (z >> _U(31))


def _key_from_seed(seed: int) -> np.uint64:
    z = _mix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
    return _mix64(z)[0]


def _uniforms(key: np.uint64, path_hi: np.ndarray, event: int) -> np.ndarray:
    """U[0, 1) for every path at one event; path_hi is path_index << 32."""
    z = _mix64((path_hi | _U(event)) ^ key)
    z = _mix64(z + key)
    return (z >> _U(11)) * 2.0 ** -53


# ---------------------------------------------------------------------------
# specs and results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WalkSpec:
    """A walk configuration: discrete model, boundary offset, event count.

    ``boundary_rule`` picks between the two algebraically identical forms of
    the boundary increment per event (n*xhat1 - eps versus -(v-w)*n/r - eps);
    both are kept so the identity stays executable.  ``eps`` may be ``inf``
    to disable absorption.
    """

    dp: DecoherenceParams
    eps: float
    n_events: int
    boundary_rule: str = "continuum"
    tilt: str = "none"

    def __post_init__(self):
        if not self.eps > 0.0:
            raise DomainError(f"eps must be positive, got {self.eps!r}")
        if not 1 <= self.n_events <= _MAX_EVENTS:
            raise DomainError(f"n_events must be in [1, 2^31], got {self.n_events!r}")
        if self.boundary_rule not in BOUNDARY_RULES:
            raise DomainError(f"boundary_rule must be one of {BOUNDARY_RULES}")
        if self.tilt not in TILTS:
            raise DomainError(f"tilt must be one of {TILTS}")

    def boundary_step(self) -> float:
        """Boundary displacement per event (negative)."""
        if self.boundary_rule == "continuum":
            return binary_event_stats(self.dp.p)[0]
        eps = self.eps if math.isfinite(self.eps) else 1.0
        diff = to_diffusion(self.dp, eps)
        return -(diff.v - diff.w) / self.dp.r


def default_tilt(dp: DecoherenceParams, n_events: int) -> str:
    """Measure tilt once the diffusive budget N*sigma1^2 exceeds 4, where
    uniform-walk survival starts to decay exponentially."""
    sigma1 = binary_event_stats(dp.p)[1]
    return "measure" if n_events * sigma1 * sigma1 > 4.0 else "none"


@dataclass(frozen=True)
class PathEnsemble:
    """Accumulated estimator state of one simulation run.

    ``trace``, when requested, holds one entry per path: the event index at
    which the path was absorbed, or 0 for survivors.  It is diagnostic only
    and excluded from equality.
    """

    n_paths: int
    survivor_count: int
    log_weight_sum: float
    log_weight_sq_sum: float
    seed: int
    trace: np.ndarray | None = dataclasses.field(default=None, compare=False,
                                                 repr=False)

    def estimate(self) -> LogValue:
        """Unbiased estimate of the surviving world count."""
        if self.survivor_count == 0:
            return LogValue.zero()
        return LogValue(self.log_weight_sum - math.log(self.n_paths))

    def std_error(self) -> LogValue:
        """Standard error of :meth:`estimate`, from the sample variance."""
        if self.survivor_count == 0 or self.n_paths < 2:
            return LogValue.zero()
        n = self.n_paths
        t_sq = self.log_weight_sq_sum
        t_mean = 2.0 * self.log_weight_sum - math.log(n)
        if t_sq <= t_mean + 1e-12:  # all weights equal and all survive
            return LogValue.zero()
        log_var = logsubexp(t_sq, t_mean) - math.log(n - 1)
        return LogValue(0.5 * (log_var - math.log(n)))


@dataclass(frozen=True)
class ExactCount:
    """Result of brute-force tree enumeration."""

    count: int
    measure: float
    n_events: int


@dataclass(frozen=True)
class SurvivorHistogram:
    """Weighted histogram of surviving boundary-relative log-sizes.

    ``weights`` are relative; the estimator count in bin b is
    ``weights[b] * exp(log_offset)``.  ``normalized()`` gives the unit-mass
    shape used for density comparisons.
    """

    edges: np.ndarray
    weights: np.ndarray
    log_offset: float
    n_paths: int
    survivor_count: int
    seed: int

    @property
    def empty(self) -> bool:
        return self.survivor_count == 0 or not self.weights.sum() > 0.0

    def normalized(self) -> np.ndarray:
        """Histogram scaled to unit integral over y (density units)."""
        if self.empty:
            raise DomainError("no survivors: the histogram has no shape")
        widths = np.diff(self.edges)
        total = float((self.weights * 1.0).sum())
        return self.weights / (total * widths)

    def first_moment(self) -> float:
        if self.empty:
            raise DomainError("no survivors: the histogram has no shape")
        mids = 0.5 * (self.edges[:-1] + self.edges[1:])
        return float((mids * self.weights).sum() / self.weights.sum())


# ---------------------------------------------------------------------------
# the vectorized walker
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _RunConfig:
    log_p: float
    log_q: float
    prob_big: float       # probability of taking the larger branch
    b_step: float
    eps: float
    n_total: int
    n_split: int          # event index of the two-stage split, 0 = none
    log_F: float
    log_G: float
    tilt: str
    key: np.uint64
    hist_edges: np.ndarray | None = None
    trace: bool = False


@dataclass
class _ChunkStats:
    n_paths: int = 0
    n_survivors: int = 0
    log_sum_w: float = -math.inf
    log_sum_w2: float = -math.inf
    hist: np.ndarray | None = None
    trace: np.ndarray | None = None


def _run_chunk(cfg: _RunConfig, start: int, size: int) -> _ChunkStats:
    path_hi = np.arange(start, start + size, dtype=np.uint64) << _U(32)
    x = np.zeros(size)
    finite_eps = math.isfinite(cfg.eps)
    death = np.zeros(size, dtype=np.int64) if cfg.trace else None

    def compact(keep, event):
        nonlocal x, path_hi
        if death is not None and not keep.all():
            dead = (path_hi[~keep] >> _U(32)).astype(np.int64) - start
            death[dead] = event
        x = x[keep]
        path_hi = path_hi[keep]

    for k in range(1, cfg.n_total + 1):
        if x.size == 0:
            break
        u = _uniforms(cfg.key, path_hi, k)
        x += np.where(u < cfg.prob_big, cfg.log_p, cfg.log_q)
        b = k * cfg.b_step - cfg.eps
        if finite_eps:
            compact(x > b, k)
        if k == cfg.n_split and x.size:
            x = x + cfg.log_F
            if finite_eps and cfg.log_F != 0.0:
                compact(x > b, k)

    stats = _ChunkStats(n_paths=size, n_survivors=int(x.size), trace=death)
    if cfg.hist_edges is not None:
        stats.hist = np.zeros(len(cfg.hist_edges) - 1)
    if x.size == 0:
        return stats

    b_final = cfg.n_total * cfg.b_step - cfg.eps if finite_eps else 0.0
    if cfg.tilt == "none":
        log_w = cfg.n_total * _LN2 + cfg.log_G
        stats.log_sum_w = math.log(x.size) + log_w
        stats.log_sum_w2 = math.log(x.size) + 2.0 * log_w
        if cfg.hist_edges is not None:
            y = x - b_final
            stats.hist, _ = np.histogram(y, bins=cfg.hist_edges)
            stats.hist = stats.hist.astype(float)
    else:
        log_w = cfg.log_G + cfg.log_F - x
        m = float(log_w.max())
        stats.log_sum_w = m + math.log(float(np.exp(log_w - m).sum()))
        stats.log_sum_w2 = 2.0 * m + math.log(float(np.exp(2.0 * (log_w - m)).sum()))
        if cfg.hist_edges is not None:
            y = x - b_final
            # e^{-y} is the bounded part of the weight; the shared factor
            # e^{log_G + log_F - b_final} rides in the histogram log_offset
            stats.hist, _ = np.histogram(y, bins=cfg.hist_edges,
                                         weights=np.exp(-y))
    return stats


def _combine(chunks: list[_ChunkStats]) -> _ChunkStats:
    out = _ChunkStats()
    if chunks and chunks[0].hist is not None:
        out.hist = np.zeros_like(chunks[0].hist)
    for c in chunks:  # fixed order: bit-stable for any worker count
        out.n_paths += c.n_paths
        out.n_survivors += c.n_survivors
        out.log_sum_w = logaddexp(out.log_sum_w, c.log_sum_w)
        out.log_sum_w2 = logaddexp(out.log_sum_w2, c.log_sum_w2)
        if c.hist is not None:
            out.hist += c.hist
    if chunks and chunks[0].trace is not None:
        out.trace = np.concatenate([c.trace for c in chunks])
    return out


def _simulate(cfg: _RunConfig, n_paths: int, workers: int | None) -> _ChunkStats:
    if not 1 <= n_paths <= _MAX_PATHS:
        raise DomainError(f"n_paths must be in [1, 2^31], got {n_paths!r}")
    spans = [(lo, min(CHUNK, n_paths - lo)) for lo in range(0, n_paths, CHUNK)]
    if workers is not None and workers < 1:
        raise DomainError(f"workers must be >= 1, got {workers!r}")
    if workers == 1 or len(spans) == 1:
        chunks = [_run_chunk(cfg, lo, sz) for lo, sz in spans]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda s: _run_chunk(cfg, *s), spans))
    return _combine(chunks)


def _config_for(spec: WalkSpec, *, n_split: int = 0, n2: int = 0,
                log_F: float = 0.0, log_G: float = 0.0, seed: int = 0,
                hist_edges: np.ndarray | None = None,
                trace: bool = False) -> _RunConfig:
    p = spec.dp.p
    big, small = max(p, 1.0 - p), min(p, 1.0 - p)
    n_total = spec.n_events + n2
    if n_total > 0xFFFFFFFF:
        raise DomainError("event index must fit in 32 bits of the draw counter")
    return _RunConfig(
        log_p=math.log(big), log_q=math.log(small),
        prob_big=0.5 if spec.tilt == "none" else big,
        b_step=spec.boundary_step(), eps=spec.eps,
        n_total=n_total, n_split=n_split,
        log_F=log_F, log_G=log_G, tilt=spec.tilt,
        key=_key_from_seed(seed), hist_edges=hist_edges, trace=trace)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def simulate_survivors(spec: WalkSpec, n_paths: int, seed: int,
                       workers: int | None = None,
                       collect_trace: bool = False) -> PathEnsemble:
    """Estimate the surviving world count after spec.n_events events.

    Identical (spec, n_paths, seed) give bit-identical results regardless
    of ``workers``.  ``collect_trace`` records each path's absorption event
    (small runs only).
    """
    if collect_trace and n_paths > (1 << 20):
        raise DomainError("per-path traces are for small runs (n_paths <= 2^20)")
    cfg = _config_for(spec, seed=seed, trace=collect_trace)
    s = _simulate(cfg, n_paths, workers)
    return PathEnsemble(n_paths=s.n_paths, survivor_count=s.n_survivors,
                        log_weight_sum=s.log_sum_w,
                        log_weight_sq_sum=s.log_sum_w2, seed=seed,
                        trace=s.trace)


def enumerate_survivors(spec: WalkSpec) -> ExactCount:
    """Walk the full 2^N tree with absorption applied at every event; exact
    survivor count and surviving measure.  Refuses N > 24."""
    if spec.n_events > 24:
        raise DomainError(f"enumeration is limited to N <= 24 (2^N leaves), "
                          f"got N = {spec.n_events}")
    p = spec.dp.p
    log_p = math.log(max(p, 1.0 - p))
    log_q = math.log(min(p, 1.0 - p))
    b_step = spec.boundary_step()
    x = np.zeros(1)
    for n in range(1, spec.n_events + 1):
        x = np.concatenate([x + log_p, x + log_q])
        if math.isfinite(spec.eps):
            x = x[x > n * b_step - spec.eps]
        if x.size == 0:
            break
    return ExactCount(count=int(x.size), measure=float(np.exp(x).sum()),
                      n_events=spec.n_events)


def empirical_distribution(spec: WalkSpec, n_paths: int, seed: int,
                           bins: int | np.ndarray = 60,
                           y_max: float | None = None,
                           workers: int | None = None) -> SurvivorHistogram:
    """Weighted histogram of surviving boundary-relative log-sizes
    y = x - x_b(N); the shape comparand for the closed-form density."""
    if isinstance(bins, (int, np.integer)):
        if y_max is None:
            sigma1 = binary_event_stats(spec.dp.p)[1]
            wt = spec.n_events * sigma1 * sigma1
            y_max = (spec.eps if math.isfinite(spec.eps) else 0.0) \
                + 5.0 + 4.0 * math.sqrt(max(wt, 1.0))
        edges = np.linspace(0.0, y_max, int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=float)
    cfg = _config_for(spec, seed=seed, hist_edges=edges)
    s = _simulate(cfg, n_paths, workers)
    if spec.tilt == "none":
        log_offset = spec.n_events * _LN2 - math.log(n_paths)
    else:
        b_final = (spec.n_events * cfg.b_step - spec.eps
                   if math.isfinite(spec.eps) else 0.0)
        log_offset = -b_final - math.log(n_paths)
    return SurvivorHistogram(edges=edges, weights=s.hist,
                             log_offset=log_offset, n_paths=s.n_paths,
                             survivor_count=s.n_survivors, seed=seed)


def born_two_stage_mc(spec1: WalkSpec, F: float, G: float, spec2: WalkSpec,
                      n_paths: int, seed: int,
                      workers: int | None = None) -> PathEnsemble:
    """Two-stage protocol: after event N1 every lineage drops by |ln F| and
    the estimator gains a factor G (with an immediate absorption check),
    then continues through spec2.n_events more background events.  Returns
    the estimate of the final outcome count lambda."""
    if (spec1.dp != spec2.dp or spec1.eps != spec2.eps
            or spec1.boundary_rule != spec2.boundary_rule
            or spec1.tilt != spec2.tilt):
        raise DomainError("stage specs must agree in dp, eps, boundary_rule "
                          "and tilt")
    F = float(F)
    if not 0.0 < F <= 1.0:
        raise DomainError(f"measure fraction F must lie in (0, 1], got {F!r}")
    if G < 1:
        raise DomainError(f"child count G must be >= 1, got {G!r}")
    cfg = _config_for(spec1, n_split=spec1.n_events, n2=spec2.n_events,
                      log_F=math.log(F), log_G=math.log(G), seed=seed)
    s = _simulate(cfg, n_paths, workers)
    return PathEnsemble(n_paths=s.n_paths, survivor_count=s.n_survivors,
                        log_weight_sum=s.log_sum_w,
                        log_weight_sq_sum=s.log_sum_w2, seed=seed)
