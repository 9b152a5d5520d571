"""Command-line interface wiring dataset generation, training, and search.

Subcommands: dataset, train, design, experiment, evaluate. Every command
resolves a RunConfig (defaults, optional --config file, --seed override),
stamps its hash into all delimited outputs, and writes the resolved
configuration next to the primary outputs. Report-producing commands
render matplotlib figures alongside the CSVs.

Exit codes: 0 success, 1 validation error, 2 runtime/training failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .cavity import DesignParams, feasible, resonant_freq_tm10, s11_curve
from .config import RunConfig
from .curve_search import TargetSpec, build_mask, lorentzian_target
from .curve_vae import ResponseVae, train_vae
from .data import build_dataset, grid_sample, hull_augment, load_dataset, save_dataset, split
from .design_cvae import DesignCvae, train_cvae
from .pipeline import (
    ScoredCandidate,
    SearchBudget,
    TrainedModels,
    penalty,
    run_search,
    scaling_experiment,
    summarize_experiment,
)
from .scoring import Surrogate, oracle_score, surrogate_score, train_surrogate, write_score_table

__all__ = ["main"]

DEFAULT_EXPERIMENT_TARGETS = ["2.4:0.2:-15", "4.0:0.3:-12", "5.0:0.25:-10"]


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors (exit 1)
        raise CliError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--jobs", type=int, default=None, help="worker cap for scoring")


def _resolve_config(args) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        overrides["jobs"] = args.jobs
    return RunConfig.load(args.config, overrides)


def _write_config_sidecar(config: RunConfig, target: Path) -> None:
    sidecar = target / "run_config.txt" if target.is_dir() else target.with_suffix(".config.txt")
    sidecar.write_text(config.resolved_text())


def _write_csv(path: Path, header: list[str], rows: list[list], config_hash: str) -> None:
    lines = [f"# config_hash={config_hash}", ",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


# -- subcommands


def cmd_dataset(args) -> int:
    config = _resolve_config(args)
    bounds = config.sampling_bounds()
    counts = (config.dataset_counts_l, config.dataset_counts_w, config.dataset_counts_p)
    designs = grid_sample(bounds, counts, config.seed)
    designs += hull_augment(designs, config.dataset_target_total, config.seed)
    records = build_dataset(designs, config.substrate(), config.cavity_config(), config.grid())
    out = Path(args.out)
    save_dataset(out, records, config.grid(), config.hash)
    _write_config_sidecar(config, out)
    ls = [r.design.L for r in records]
    ws = [r.design.W for r in records]
    ps = [r.design.p for r in records]
    print(f"wrote {len(records)} records to {out} (config {config.hash})")
    print(f"  L in [{min(ls):.3g}, {max(ls):.3g}] mm")
    print(f"  W in [{min(ws):.3g}, {max(ws):.3g}] mm")
    print(f"  p in [{min(ps):.3g}, {max(ps):.3g}] mm")
    return 0


def _history_csv_and_figure(history: list[dict], out: Path, config: RunConfig, keys: list[str]) -> None:
    from .plots import training_figure

    losses_csv = out.with_suffix(".losses.csv")
    header = list(history[0].keys())
    _write_csv(losses_csv, header, [[row[k] for k in header] for row in history], config.hash)
    training_figure(out.with_suffix(".losses.png"), history, keys, config.hash)
    print(f"losses: {losses_csv} (+ .png)")


def cmd_train(args) -> int:
    config = _resolve_config(args)
    records, grid = load_dataset(args.dataset)
    if grid.n != config.grid_n:
        raise CliError(f"dataset grid has {grid.n} points but config expects {config.grid_n}")
    train_recs, val_recs = split(records, config.dataset_val_fraction, config.seed)
    out = Path(args.out)
    meta = {"seed": config.seed, "config_hash": config.hash, "dataset": str(args.dataset)}
    if args.stage == "vae":
        model, history = train_vae(train_recs, val_recs, config.vae_train_config(), config.vae_arch())
        best = min(h["val_total"] for h in history)
        meta["epoch_best"] = int(min(history, key=lambda h: h["val_total"])["epoch"])
        model.save(out, meta)
        _history_csv_and_figure(history, out, config, ["train_recon", "val_recon", "val_total"])
        print(f"stage-1 VAE saved to {out} (best val total {best:.5g})")
    elif args.stage == "cvae":
        if not args.stage1:
            raise CliError("cvae training requires --stage1 <vae checkpoint>")
        stage1, _ = ResponseVae.load(args.stage1)
        model, history = train_cvae(
            train_recs, val_recs, stage1, config.cvae_train_config(), config.cvae_arch()
        )
        best = min(h["val_recon"] for h in history)
        meta["epoch_best"] = int(min(history, key=lambda h: h["val_recon"])["epoch"])
        meta["stage1"] = str(args.stage1)
        model.save(out, meta)
        _history_csv_and_figure(history, out, config, ["train_recon", "val_recon", "train_pred"])
        print(f"design CVAE saved to {out} (best val recon {best:.5g})")
    elif args.stage == "surrogate":
        model, history = train_surrogate(
            train_recs, val_recs, config.surrogate_train_config(), config.vae_arch()
        )
        best = min(h["val_nll"] for h in history)
        meta["epoch_best"] = int(min(history, key=lambda h: h["val_nll"])["epoch"])
        model.save(out, meta)
        _history_csv_and_figure(history, out, config, ["train_nll", "val_nll"])
        print(f"surrogate saved to {out} (best val NLL {best:.5g})")
    else:  # pragma: no cover - argparse choices guard this
        raise CliError(f"unknown stage {args.stage!r}")
    _write_config_sidecar(config, out)
    return 0


def _load_models(args, need_surrogate: bool) -> TrainedModels:
    for attr in ("vae", "cvae") + (("surrogate",) if need_surrogate else ()):
        path = getattr(args, attr, None)
        if not path:
            raise CliError(f"missing --{attr} checkpoint")
        if not Path(path).exists():
            raise CliError(f"checkpoint not found: {path}")
    vae, _ = ResponseVae.load(args.vae)
    cvae, _ = DesignCvae.load(args.cvae)
    surrogate = None
    if getattr(args, "surrogate", None) and Path(args.surrogate).exists():
        surrogate, _ = Surrogate.load(args.surrogate)
    return TrainedModels(vae=vae, cvae=cvae, surrogate=surrogate)


def cmd_design(args) -> int:
    from .plots import design_comparison_figure

    config = _resolve_config(args)
    spec = TargetSpec.parse(args.notch)
    records, grid = load_dataset(args.dataset)
    spec.validate(grid)
    models = _load_models(args, need_surrogate=args.scorer == "surrogate")
    budget = SearchBudget(
        n_curves=args.curves,
        n_designs_per_curve=args.designs,
        init=args.strategy,
        scorer=args.scorer,
        optimize_zx=args.optimize_zx,
        seed=config.seed,
    )
    candidates = run_search(
        spec, budget, models, records, config.substrate(), config.cavity_config(),
        config.search_config(args.strategy), config.penalty_config(), config.scoring_config(),
        band_factor=config.search_band_factor, jobs=config.jobs,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_config_sidecar(config, out_dir)

    header = [
        "rank", "L_mm", "W_mm", "p_mm", "score", "method", "feasible",
        "curve_index", "design_index", "zx_seed", "penalty", "nudged", "optimized",
    ]
    rows = []
    for rank, cand in enumerate(candidates, start=1):
        rows.append([
            rank, cand.design.L, cand.design.W, cand.design.p,
            cand.score.value, cand.score.method, int(cand.score.feasible),
            cand.curve_index, cand.design_index, cand.zx_seed,
            cand.penalty, int(cand.nudged), int(cand.optimized),
        ])
    _write_csv(out_dir / "candidates.csv", header, rows, config.hash)
    write_score_table(
        out_dir / "scores.csv", [(c.design, c.score) for c in candidates], config.hash
    )

    y_star = lorentzian_target(spec, grid)
    _write_csv(
        out_dir / "target_curve.csv",
        ["f_ghz", "s11_db"],
        [[f, v] for f, v in zip(grid.points, y_star.values)],
        config.hash,
    )
    best = candidates[0]
    print(f"target {spec.describe()}  pool={budget.pool_size}  scorer={budget.scorer}")
    _print_table(candidates[:10])
    if feasible(best.design):
        best_curve = s11_curve(best.design, config.substrate(), config.cavity_config(), grid)
        _write_csv(
            out_dir / "best_oracle_curve.csv",
            ["f_ghz", "s11_db"],
            [[f, v] for f, v in zip(grid.points, best_curve.values)],
            config.hash,
        )
        f_r = resonant_freq_tm10(best.design, config.substrate())
        design_comparison_figure(
            out_dir / "design_comparison.png", y_star, best_curve, f_r,
            title=f"target {spec.describe()}", config_hash=config.hash,
        )
        print(f"best design: L={best.design.L:.2f} W={best.design.W:.2f} p={best.design.p:.2f} "
              f"(f_r,TM10 = {f_r:.3f} GHz)")
    else:
        print("best candidate is infeasible; no oracle curve written")
    print(f"outputs in {out_dir}")
    return 0


def _print_table(candidates: list[ScoredCandidate]) -> None:
    print(f"{'rank':>4} {'L_mm':>8} {'W_mm':>8} {'p_mm':>8} {'score':>12} {'ok':>3}")
    for rank, cand in enumerate(candidates, start=1):
        print(
            f"{rank:>4} {cand.design.L:>8.2f} {cand.design.W:>8.2f} {cand.design.p:>8.2f} "
            f"{cand.score.value:>12.5g} {int(cand.score.feasible):>3}"
        )


def cmd_experiment(args) -> int:
    from .plots import scaling_figure

    config = _resolve_config(args)
    records, grid = load_dataset(args.dataset)
    targets = [TargetSpec.parse(t.split(",")) for t in (args.target or DEFAULT_EXPERIMENT_TARGETS)]
    for spec in targets:
        spec.validate(grid)
    models = _load_models(args, need_surrogate=True)
    budgets = [int(b) for b in args.budgets.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = scaling_experiment(
        targets, args.axis, budgets, seeds, models, records,
        config.substrate(), config.cavity_config(), config.search_config(),
        config.penalty_config(), band_factor=config.search_band_factor, jobs=config.jobs,
    )
    summary = summarize_experiment(rows)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_config_sidecar(config, out_dir)
    _write_csv(
        out_dir / f"scaling_{args.axis}_raw.csv",
        ["budget", "strategy", "seed", "best_score"],
        [[r["budget"], r["strategy"], r["seed"], r["best_score"]] for r in rows],
        config.hash,
    )
    _write_csv(
        out_dir / f"scaling_{args.axis}_summary.csv",
        ["budget", "strategy", "mean", "std", "min", "max"],
        [[r["budget"], r["strategy"], r["mean"], r["std"], r["min"], r["max"]] for r in summary],
        config.hash,
    )
    axis_label = "candidate curves" if args.axis == "curves" else "designs per curve"
    scaling_figure(out_dir / f"scaling_{args.axis}.png", summary, axis_label, config.hash)
    for row in summary:
        print(
            f"budget {row['budget']:>3} {row['strategy']:<12} "
            f"mean {row['mean']:.5g} std {row['std']:.3g} range [{row['min']:.5g}, {row['max']:.5g}]"
        )
    print(f"outputs in {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    config = _resolve_config(args)
    parts = args.design.split(",")
    if len(parts) != 3:
        raise CliError(f"--design expects 'L,W,p', got {args.design!r}")
    design = DesignParams(*(float(p) for p in parts))
    substrate = config.substrate()
    grid = config.grid()
    ok = feasible(design)
    print(f"design L={design.L} W={design.W} p={design.p} (config {config.hash})")
    print(f"  feasible: {ok}")
    print(f"  penalty:  {penalty(design):.9g}")
    if design.L > 0 and design.W > 0:
        print(f"  f_r,TM10: {resonant_freq_tm10(DesignParams(design.L, design.W, -design.L / 4), substrate):.4f} GHz")
    if args.notch:
        spec = TargetSpec.parse(args.notch)
        spec.validate(grid)
        y_star = lorentzian_target(spec, grid)
        mask = build_mask(spec, grid, config.search_band_factor)
        score = oracle_score(design, y_star, mask, substrate, config.cavity_config(), config.scoring_config())
        print(f"  oracle score:    {score.value:.9g}")
        if args.surrogate:
            surrogate, _ = Surrogate.load(args.surrogate)
            s_score = surrogate_score(design, y_star, mask, surrogate)
            print(f"  surrogate score: {s_score.value:.9g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="patchkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate the (design, curve) dataset CSV")
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train a model stage")
    p.add_argument("stage", choices=["vae", "cvae", "surrogate"])
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--stage1", type=Path, default=None, help="stage-1 VAE checkpoint (cvae only)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("design", help="synthesize designs for a notch spec")
    p.add_argument("--notch", action="append", required=True, metavar="F:BW:DEPTH",
                   help="notch spec f_ghz:bw_ghz:depth_db (repeatable)")
    p.add_argument("--curves", type=int, default=10)
    p.add_argument("--designs", type=int, default=20)
    p.add_argument("--strategy", choices=["random", "k-closest"], default="random")
    p.add_argument("--scorer", choices=["oracle", "surrogate"], default="surrogate")
    p.add_argument("--optimize-zx", action="store_true")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--vae", type=Path, required=True)
    p.add_argument("--cvae", type=Path, required=True)
    p.add_argument("--surrogate", type=Path, default=None)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("experiment", help="test-time compute scaling experiments")
    p.add_argument("--axis", choices=["curves", "designs"], required=True)
    p.add_argument("--budgets", default="1,5,10,25,50")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--target", action="append", default=None,
                   help="target spec f:bw:d[,f:bw:d...] (repeatable; default trio)")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--vae", type=Path, required=True)
    p.add_argument("--cvae", type=Path, required=True)
    p.add_argument("--surrogate", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("evaluate", help="score a single design triple")
    p.add_argument("--design", required=True, metavar="L,W,P")
    p.add_argument("--notch", action="append", default=None, metavar="F:BW:DEPTH")
    p.add_argument("--surrogate", type=Path, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (CliError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, ArithmeticError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
