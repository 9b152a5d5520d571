"""Test-time search orchestration: best-of-N pools and latent refinement.

A search expands a target spec into a pool of candidate designs:
candidate response curves found by latent search, times designs sampled
from the conditional decoder per curve, optionally refined in the design
latent against a manufacturability penalty, then ranked by the chosen
scorer. Every candidate carries enough provenance (init strategy, seeds)
to be regenerated exactly by rerunning the search.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, backward, ops
from .autodiff.layers import frozen
from .cavity import (
    CavityConfig,
    DesignParams,
    FrequencyGrid,
    ResponseCurve,
    Substrate,
    feasible,
)
from .curve_search import (
    SearchConfig,
    TargetSpec,
    build_mask,
    init_latents,
    latent_search_batch,
    lorentzian_target,
)
from .curve_vae import ResponseVae
from .data import DatasetRecord
from .design_cvae import DesignCvae
from .scoring import Score, ScoringConfig, Surrogate, oracle_score, surrogate_score

__all__ = [
    "PenaltyConfig",
    "ScoredCandidate",
    "SearchBudget",
    "TrainedModels",
    "optimize_design_latent",
    "optimize_design_latent_batch",
    "penalty",
    "run_search",
    "scaling_experiment",
    "summarize_experiment",
]

NUDGE_EPS = 0.05  # mm; reported feed offsets in [-eps, 0] are pushed to -eps


def penalty(design) -> float:
    """Manufacturability penalty: zero iff L >= 0, W >= 0, -L/2 <= p <= 0.

    Note the boundary convention: p = 0 costs nothing here although the
    feasibility predicate rejects it (the feed must sit strictly between
    center and edge); the search pipeline nudges such designs.
    """
    if isinstance(design, DesignParams):
        l, w, p = design.L, design.W, design.p
    else:
        l, w, p = (float(v) for v in design)
    return (
        max(-l, 0.0) ** 2
        + max(-w, 0.0) ** 2
        + max(-l / 2.0 - p, 0.0) ** 2
        + max(p, 0.0) ** 2
    )


def penalty_rows(x_mm: Tensor) -> Tensor:
    """Autodiff penalty of a (B, 3) design tensor, one value per row."""
    l = ops.narrow(x_mm, 1, 0, 1)
    w = ops.narrow(x_mm, 1, 1, 1)
    p = ops.narrow(x_mm, 1, 2, 1)
    terms = (
        ops.relu(-l) ** 2.0
        + ops.relu(-w) ** 2.0
        + ops.relu(-l * 0.5 - p) ** 2.0
        + ops.relu(p) ** 2.0
    )
    return ops.reshape(terms, (x_mm.shape[0],))


@dataclass(frozen=True)
class PenaltyConfig:
    step: float = 0.05
    iters: int = 200
    tol: float = 1e-10

    def __post_init__(self):
        if self.step <= 0.0 or self.iters < 1:
            raise ValueError("penalty optimizer needs positive step and budget")


@dataclass(frozen=True)
class SearchBudget:
    n_curves: int = 1
    n_designs_per_curve: int = 1
    init: str = "random"
    scorer: str = "surrogate"
    optimize_zx: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_curves < 1 or self.n_designs_per_curve < 1:
            raise ValueError("budget axes must be >= 1")
        if self.scorer not in ("oracle", "surrogate"):
            raise ValueError(f"unknown scorer {self.scorer!r}")

    @property
    def pool_size(self) -> int:
        return self.n_curves * self.n_designs_per_curve


@dataclass(frozen=True)
class TrainedModels:
    vae: ResponseVae
    cvae: DesignCvae
    surrogate: Surrogate | None = None


@dataclass
class ScoredCandidate:
    design: DesignParams  # as reported (after any nudge)
    raw_design: DesignParams  # as decoded
    z_y: np.ndarray
    z_x: np.ndarray
    curve: ResponseCurve  # decoded curve the design was conditioned on
    score: Score
    curve_index: int
    design_index: int
    zx_seed: int
    penalty: float
    nudged: bool = False
    optimized: bool = False


def optimize_design_latent(
    z0: np.ndarray,
    curve: ResponseCurve | np.ndarray,
    cvae: DesignCvae,
    config: PenaltyConfig | None = None,
) -> np.ndarray:
    """Refine one design latent against the manufacturability penalty."""
    return optimize_design_latent_batch(np.asarray(z0)[None, :], curve, cvae, config)[0]


def optimize_design_latent_batch(
    z0: np.ndarray,
    curve: ResponseCurve | np.ndarray,
    cvae: DesignCvae,
    config: PenaltyConfig | None = None,
) -> np.ndarray:
    """Gradient descent on penalty(decode(z, curve)) through the frozen decoder.

    Rows are independent searches sharing one conditioning curve. Returns
    the best iterate per row; rows stop contributing once their penalty
    reaches the tolerance.
    """
    config = config or PenaltyConfig()
    values = curve.values if isinstance(curve, ResponseCurve) else np.asarray(curve)
    design_scaler, curve_scaler = cvae._scalers()
    cvae.eval()
    z = np.array(z0, dtype=np.float64)
    n = z.shape[0]
    best_pen = np.full(n, np.inf)
    best_z = z.copy()
    with frozen(cvae):
        embed_const = cvae.embed_tensor(Tensor(curve_scaler.to_normalized(values)[None, :])).data
        embed = Tensor(np.repeat(embed_const, n, axis=0))
        std = Tensor(design_scaler.std[None, :])
        mean = Tensor(design_scaler.mean[None, :])
        for t in range(config.iters + 1):
            need_grad = t < config.iters
            zt = Tensor(z, requires_grad=need_grad)
            x_mm = cvae.decode_tensor(zt, embed) * std + mean
            pen_rows = penalty_rows(x_mm)
            pen_now = pen_rows.data
            if not np.all(np.isfinite(pen_now)):
                raise RuntimeError(f"non-finite penalty at iteration {t}")
            improved = pen_now < best_pen
            best_pen[improved] = pen_now[improved]
            best_z[improved] = z[improved]
            if np.all(best_pen <= config.tol):
                break
            if need_grad:
                backward(ops.sum_(pen_rows))
                z = z - config.step * zt.grad
    return best_z


def _spawn_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def run_search(
    spec: TargetSpec,
    budget: SearchBudget,
    models: TrainedModels,
    records: list[DatasetRecord],
    substrate: Substrate,
    cavity_config: CavityConfig,
    search_config: SearchConfig | None = None,
    penalty_config: PenaltyConfig | None = None,
    scoring_config: ScoringConfig | None = None,
    band_factor: float = 1.0,
    jobs: int = 1,
) -> list[ScoredCandidate]:
    """Expand a target spec into a ranked candidate pool.

    Builds the target and mask, finds ``n_curves`` candidate curves by
    latent search, samples ``n_designs_per_curve`` design latents from the
    prior per curve, optionally refines them against the penalty, scores
    the pool, and returns candidates sorted ascending by score value with
    ties broken by generation order.
    """
    if budget.scorer == "surrogate" and models.surrogate is None:
        raise ValueError("surrogate scorer requested but no surrogate model given")
    search_config = search_config or SearchConfig()
    grid = records[0].curve.grid if records else FrequencyGrid()
    y_star = lorentzian_target(spec, grid)
    mask = build_mask(spec, grid, band_factor)

    init_seed = _spawn_seed(budget.seed, 0)
    z0 = init_latents(budget.init, budget.n_curves, spec, records, models.vae, init_seed, band_factor)
    curve_results = latent_search_batch(z0, y_star, mask, models.vae, search_config)

    candidates: list[ScoredCandidate] = []
    for ci, result in enumerate(curve_results):
        zx_seeds = [_spawn_seed(budget.seed, 1, ci, di) for di in range(budget.n_designs_per_curve)]
        z_x = np.stack(
            [np.random.default_rng(s).standard_normal(models.cvae.arch.latent) for s in zx_seeds]
        )
        if budget.optimize_zx:
            z_x = optimize_design_latent_batch(z_x, result.curve, models.cvae, penalty_config)
        curve_tile = np.repeat(result.curve.values[None, :], budget.n_designs_per_curve, axis=0)
        triples = models.cvae.decode_designs(z_x, curve_tile)
        for di in range(budget.n_designs_per_curve):
            raw = DesignParams(*(float(v) for v in triples[di]))
            reported, nudged = _nudge(raw)
            candidates.append(
                ScoredCandidate(
                    design=reported,
                    raw_design=raw,
                    z_y=result.z,
                    z_x=z_x[di],
                    curve=result.curve,
                    score=Score(np.nan, budget.scorer),
                    curve_index=ci,
                    design_index=di,
                    zx_seed=zx_seeds[di],
                    penalty=penalty(raw),
                    nudged=nudged,
                    optimized=budget.optimize_zx,
                )
            )

    _score_pool(candidates, y_star, mask, models, substrate, cavity_config, budget.scorer,
                scoring_config, jobs)
    order = sorted(range(len(candidates)), key=lambda i: candidates[i].score.value)
    return [candidates[i] for i in order]


def _nudge(design: DesignParams) -> tuple[DesignParams, bool]:
    if -NUDGE_EPS <= design.p <= 0.0:
        return DesignParams(design.L, design.W, -NUDGE_EPS), True
    return design, False


def _score_pool(
    candidates: list[ScoredCandidate],
    y_star: ResponseCurve,
    mask: np.ndarray,
    models: TrainedModels,
    substrate: Substrate,
    cavity_config: CavityConfig,
    scorer: str,
    scoring_config: ScoringConfig | None,
    jobs: int,
) -> None:
    if scorer == "surrogate":
        designs = np.stack([c.design.as_array() for c in candidates])
        mean_db, var_db = models.surrogate.predict(designs)
        count = mask.sum()
        values = (mask * (mean_db - y_star.values) ** 2 / var_db).sum(axis=1) / count
        for cand, value in zip(candidates, values):
            cand.score = Score(float(value), "surrogate", feasible(cand.design))
        return

    def score_one(cand: ScoredCandidate) -> Score:
        return oracle_score(cand.design, y_star, mask, substrate, cavity_config, scoring_config)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(score_one, candidates))
    else:
        scores = [score_one(c) for c in candidates]
    for cand, score in zip(candidates, scores):
        cand.score = score


def scaling_experiment(
    targets: list[TargetSpec],
    axis: str,
    budgets: list[int],
    seeds: list[int],
    models: TrainedModels,
    records: list[DatasetRecord],
    substrate: Substrate,
    cavity_config: CavityConfig,
    search_config: SearchConfig | None = None,
    penalty_config: PenaltyConfig | None = None,
    band_factor: float = 1.0,
    jobs: int = 1,
) -> list[dict]:
    """Best surrogate score versus pool size, averaged across targets.

    ``axis="curves"`` grows the number of candidate curves (one design
    each) under random versus k-closest initialization; ``axis="designs"``
    grows designs per single curve with and without latent refinement.
    Returns one row per (budget, strategy, seed).
    """
    if axis == "curves":
        strategies = ["random", "k-closest"]
    elif axis == "designs":
        strategies = ["unoptimized", "optimized"]
    else:
        raise ValueError(f"unknown axis {axis!r}; expected 'curves' or 'designs'")
    rows = []
    for budget_size in budgets:
        for strategy in strategies:
            for seed in seeds:
                per_target = []
                for ti, spec in enumerate(targets):
                    if axis == "curves":
                        budget = SearchBudget(
                            n_curves=budget_size, n_designs_per_curve=1, init=strategy,
                            scorer="surrogate", optimize_zx=False, seed=_spawn_seed(seed, ti),
                        )
                    else:
                        budget = SearchBudget(
                            n_curves=1, n_designs_per_curve=budget_size, init="random",
                            scorer="surrogate", optimize_zx=strategy == "optimized",
                            seed=_spawn_seed(seed, ti),
                        )
                    pool = run_search(
                        spec, budget, models, records, substrate, cavity_config,
                        search_config, penalty_config, band_factor=band_factor, jobs=jobs,
                    )
                    per_target.append(pool[0].score.value)
                rows.append(
                    {
                        "budget": budget_size,
                        "strategy": strategy,
                        "seed": seed,
                        "best_score": float(np.mean(per_target)),
                    }
                )
    return rows


def summarize_experiment(rows: list[dict]) -> list[dict]:
    """Per (budget, strategy): mean, std, min, max of best scores over seeds."""
    keys = sorted({(r["budget"], r["strategy"]) for r in rows}, key=lambda k: (k[0], k[1]))
    summary = []
    for budget, strategy in keys:
        scores = np.array(
            [r["best_score"] for r in rows if r["budget"] == budget and r["strategy"] == strategy]
        )
        summary.append(
            {
                "budget": budget,
                "strategy": strategy,
                "mean": float(scores.mean()),
                "std": float(scores.std()),
                "min": float(scores.min()),
                "max": float(scores.max()),
            }
        )
    return summary
