"""Command-line entry point.

Stages communicate through files in an output directory::

    prefsr simulate --out run/              # toy reference, rollouts, scores.csv, metrics.json
    prefsr ingest --scores run/scores.csv --manifest run/metrics.json --out run/
    prefsr curate --rewards run/rewards.jsonl --n 4 --hpo-mode both --out run/
    prefsr train --config run/train.toml
    prefsr report --trainlog run/trainlog.csv --out run/report/

Exit codes: 0 success, 1 validation error, 2 divergence / non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from fractions import Fraction

from . import artifacts, plotting
from .curation import CurationConfig, curate_rewards
from .errors import PipelineError
from .hpo import HpoMode, attach_weights
from .pipeline import ToyConfig, config_from_mapping, make_conditions, pretrain, sweep
from .reward import compute_rewards
from .scores import group_candidates, load_manifest, read_score_table, serialize_score_table
from .stats import SweepGrid
from .task import SYNTHETIC_METRICS, HeldoutEvaluator, candidate_id, generate_rollouts, rollout_seed, rollouts_score_table
from .toy import load_params, save_params
from .trainer import resolve_pairs, train

log = logging.getLogger("prefsr")

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def load_config(path) -> dict:
    with open(path, "rb") as f:
        raw = f.read()
    if str(path).endswith(".toml"):
        return tomllib.loads(raw.decode("utf-8"))
    return json.loads(raw)


def _out(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _require(path, what):
    if not os.path.exists(path):
        raise PipelineError(f"{what} not found: {path}")
    return path


def _overrides(args) -> dict:
    """Top-level experiment options given on the command line."""
    out = {}
    for key in ("schedule", "steps", "n_train", "n_heldout", "m", "n"):
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    return out


def _dpo_overrides(args) -> dict:
    out = {}
    for key in ("iterations", "seed", "beta", "learning_rate", "batch_pairs", "hpo_mode", "pair_sampling", "eval_interval"):
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    if getattr(args, "shared_noise", False):
        out["shared_noise"] = True
    if getattr(args, "unnormalized", False):
        out["normalize_weights"] = False
    return out


def _toy_config(args, raw: dict | None = None) -> ToyConfig:
    raw = dict(raw or {})
    raw.update(_overrides(args))
    dpo = dict(raw.pop("dpo", {}))
    dpo.update(_dpo_overrides(args))
    raw["dpo"] = dpo
    if getattr(args, "pretrain_steps", None) is not None:
        raw["pretrain"] = {**raw.get("pretrain", {}), "steps": args.pretrain_steps}
    return config_from_mapping(raw)


# --- subcommands ---------------------------------------------------------------------


def cmd_simulate(args):
    raw = load_config(args.config) if args.config else {}
    raw.pop("sweep", None)
    config = _toy_config(args, raw)
    reference = load_params(args.reference) if args.reference else pretrain(config)
    train_c, held_c = make_conditions(config)
    samples = generate_rollouts(reference, train_c.conds, config.m, config.schedule_obj, config.rollout_seed)

    save_params(reference, _out(args, "reference.json"), {"schedule": config.schedule, "steps": config.steps})
    cids = [candidate_id(i) for i in range(config.m)]
    seeds = [[rollout_seed(config.rollout_seed, g, i) for i in range(config.m)] for g in range(len(train_c))]
    artifacts.write_jsonl(_out(args, "rollouts.jsonl"), artifacts.rollout_rows(train_c.ids, cids, train_c.conds, samples, seeds))
    artifacts.write_jsonl(_out(args, "train_conditions.jsonl"), artifacts.condition_rows(train_c.ids, train_c.conds, train_c.targets))
    artifacts.write_jsonl(_out(args, "heldout.jsonl"), artifacts.condition_rows(held_c.ids, held_c.conds, held_c.targets))
    with open(_out(args, "scores.csv"), "w", encoding="utf-8") as f:
        f.write(serialize_score_table(rollouts_score_table(samples, train_c.targets, train_c.prefix), "csv"))
    with open(_out(args, "metrics.json"), "w", encoding="utf-8") as f:
        f.write(SYNTHETIC_METRICS.to_json() + "\n")
    print(f"simulated {len(train_c)} conditions x {config.m} rollouts ({config.schedule}) -> {args.out}")
    return 0


def cmd_ingest(args):
    metrics = load_manifest(_require(args.manifest, "metric manifest"))
    table = read_score_table(_require(args.scores, "score table"), metrics, args.format)
    rewards = compute_rewards(group_candidates(table), metrics)
    artifacts.write_jsonl(_out(args, "rewards.jsonl"), artifacts.reward_rows(rewards))
    for rv in rewards:
        print(f"{rv.group_id}: M={len(rv)} reward=[{rv.rewards.min():.4f}, {rv.rewards.max():.4f}]")
    print(f"ingested {len(table.records)} records, {len(rewards)} groups")
    return 0


def cmd_curate(args):
    groups = artifacts.read_rewards(_require(args.rewards, "rewards file"))
    dataset = curate_rewards(groups, CurationConfig(args.n, args.m, args.strict_m))
    weighted = attach_weights(dataset, args.hpo_mode)
    artifacts.write_jsonl(_out(args, "pairs.jsonl"), (p.to_dict() for p in dataset.pairs))
    artifacts.write_jsonl(_out(args, "weighted_pairs.jsonl"), (wp.to_dict() for wp in weighted.pairs))
    print(f"{len(dataset)} pairs from {len(groups)} groups (N={args.n}, hpo-mode={weighted.mode.value})")
    return 0


def _resolve(base, path):
    return path if os.path.isabs(path) else os.path.join(base, path)


def cmd_train(args):
    raw = load_config(_require(args.config, "config"))
    base = os.path.dirname(os.path.abspath(args.config))
    paths = {k: _resolve(base, raw.pop(k)) for k in ("reference", "rollouts", "pairs", "heldout") if k in raw}
    eval_m = int(raw.pop("eval_m", raw.get("m", 16)))
    out_dir = args.out or _resolve(base, raw.pop("out", "."))
    raw.pop("out", None)
    missing = [k for k in ("reference", "rollouts", "pairs") if k not in paths]
    if missing:
        raise PipelineError(f"config lacks {missing}")
    for k, p in paths.items():
        _require(p, k)

    config = _toy_config(args, raw)
    schedule = config.schedule_obj
    reference = load_params(paths["reference"])
    if reference.arch.head != config.dpo.head:
        config = replace(config, dpo=replace(config.dpo, head=reference.arch.head))
    samples, conds = artifacts.read_rollouts(paths["rollouts"])
    pairs = resolve_pairs(artifacts.read_weighted_pairs(paths["pairs"]), samples, conds)
    evaluator = None
    if "heldout" in paths:
        _, h_conds, h_targets = artifacts.read_conditions(paths["heldout"])
        evaluator = HeldoutEvaluator(h_conds, h_targets, eval_m, schedule, config.eval_seed)

    args.out = out_dir
    try:
        run = train(pairs, reference, config.dpo, schedule, evaluator)
    except PipelineError as exc:
        partial = getattr(exc, "partial", None)
        if partial is not None:
            artifacts.write_csv(_out(args, "trainlog.csv"), artifacts.TRAINLOG_COLUMNS, artifacts.trainlog_rows(partial))
        raise
    artifacts.write_csv(_out(args, "trainlog.csv"), artifacts.TRAINLOG_COLUMNS, artifacts.trainlog_rows(run))
    save_params(run.final_params, _out(args, "policy.json"), {"dpo": config.dpo.to_dict()})
    final = run.reward_stats_log[-1][1] if run.reward_stats_log else None
    msg = f"trained {config.dpo.iterations} iterations on {len(pairs)} pairs"
    if final is not None:
        msg += f"; held-out Best/Mean/Worst@{final.m} = {final.best:.4f}/{final.mean:.4f}/{final.worst:.4f}"
    print(msg)
    return 0


def _parse_ratio(text: str) -> Fraction:
    return Fraction(text.strip())


def cmd_sweep(args):
    raw = load_config(_require(args.config, "config")) if args.config else {}
    base = os.path.dirname(os.path.abspath(args.config)) if args.config else "."
    grid_raw = dict(raw.pop("sweep", {}))
    ref_path = raw.pop("reference", None)
    raw.pop("out", None)
    config = _toy_config(args, raw)
    m_values = args.m_values or grid_raw.get("m_values", [8, 32])
    ratios = args.ratios or grid_raw.get("ratios", ["1/4"])
    grid = SweepGrid(tuple(int(m) for m in m_values), tuple(_parse_ratio(str(r)) for r in ratios))
    reference = load_params(_resolve(base, ref_path)) if ref_path else None
    report = sweep(config, grid, reference)
    rows, cells = artifacts.sweep_rows(report)
    artifacts.write_csv(_out(args, "sweep.csv"), artifacts.SWEEP_COLUMNS, rows)
    artifacts.write_csv(_out(args, "sweep_cells.csv"), artifacts.SWEEP_CELL_COLUMNS, cells)
    for c in cells:
        mean = "-" if c["mean"] is None else f"{c['mean']:.4f}"
        print(f"M={c['M']:>3} N={c['N']:>3} N/M={c['ratio']:>5} {c['status']:>6} final Mean@M={mean}")
    return 0 if all(c["status"] == "ok" for c in cells) else 2


def _trainlog_summary(rows):
    evals = [r for r in rows if r["mean"] is not None]
    losses = [r["loss"] for r in rows if r["loss"] is not None]
    lines = ["# held-out reward statistics, averaged over all held-out conditions", ""]
    lines.append(f"{'iteration':>9}  {'best':>8}  {'mean':>8}  {'worst':>8}")
    for r in evals:
        lines.append(f"{r['iteration']:>9}  {r['best']:>8.4f}  {r['mean']:>8.4f}  {r['worst']:>8.4f}")
    if len(evals) >= 2:
        first, last = evals[0], evals[-1]
        lines.append("")
        lines.append(
            "gain      "
            + "  ".join(f"{last[k] - first[k]:>+8.4f}" for k in ("best", "mean", "worst"))
        )
    if losses:
        lines.append("")
        lines.append(f"loss: first {losses[0]:.6f}  last {losses[-1]:.6f}  iterations {len(losses)}")
    summary = [{"iteration": r["iteration"], "best": r["best"], "mean": r["mean"], "worst": r["worst"]} for r in evals]
    return "\n".join(lines) + "\n", ("iteration", "best", "mean", "worst"), summary


def _sweep_summary(rows):
    cells = {}
    for r in rows:
        cells.setdefault((r["M"], r["N"], r["ratio"]), []).append(r)
    lines = ["# final held-out statistics per sweep cell, averaged over all held-out conditions", ""]
    lines.append(f"{'M':>4} {'N':>4} {'N/M':>6} {'iters':>6} {'last loss':>10} {'best':>8} {'mean':>8} {'worst':>8}")
    summary = []
    for (m, n, ratio), rs in cells.items():
        losses = [r["loss"] for r in rs if r["loss"] is not None]
        evals = [r for r in rs if r["mean"] is not None]
        final = evals[-1] if evals else {"iteration": None, "best": None, "mean": None, "worst": None}
        summary.append({
            "M": m, "N": n, "ratio": ratio, "final_iteration": final["iteration"],
            "last_loss": losses[-1] if losses else None,
            "best": final["best"], "mean": final["mean"], "worst": final["worst"],
        })
        f = lambda v: "-" if v is None else f"{v:.4f}"  # noqa: E731
        lines.append(
            f"{m:>4} {n:>4} {ratio:>6} {len(losses):>6} {f(losses[-1] if losses else None):>10} "
            f"{f(final['best']):>8} {f(final['mean']):>8} {f(final['worst']):>8}"
        )
    cols = ("M", "N", "ratio", "final_iteration", "last_loss", "best", "mean", "worst")
    return "\n".join(lines) + "\n", cols, summary


def cmd_report(args):
    if bool(args.trainlog) == bool(args.sweep):
        raise PipelineError("give exactly one of --trainlog or --sweep")
    if args.trainlog:
        rows = artifacts.read_csv(_require(args.trainlog, "trainlog"))
        text, cols, summary = _trainlog_summary(rows)
        plotting.plot_trainlog(rows, _out(args, "trainlog.png"))
    else:
        rows = artifacts.read_csv(_require(args.sweep, "sweep log"))
        for r in rows:
            r["ratio"] = str(r["ratio"])
        text, cols, summary = _sweep_summary(rows)
        plotting.plot_sweep(rows, _out(args, "sweep.png"))
    with open(_out(args, "summary.txt"), "w", encoding="utf-8") as f:
        f.write(text)
    artifacts.write_csv(_out(args, "summary.csv"), cols, summary)
    sys.stdout.write(text)
    return 0


def cmd_selftest(args):
    from .checks import run_all

    results = run_all(args.seed or 0)
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
    return 0 if all(ok for _, ok, _ in results) else 1


# --- argument parsing -------------------------------------------------------------


def _add_model_flags(p):
    p.add_argument("--schedule", choices=["diffusion", "flow"])
    p.add_argument("--steps", type=int, help="sampler discretization steps")
    p.add_argument("--seed", type=int, help="training seed")


def _add_dpo_flags(p):
    p.add_argument("--iterations", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--batch-pairs", type=int)
    p.add_argument("--hpo-mode", choices=[m.value for m in HpoMode])
    p.add_argument("--pair-sampling", choices=["all_per_epoch", "uniform_per_iteration"])
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--shared-noise", action="store_true", help="use one noise draw for winner and loser")
    p.add_argument("--unnormalized", action="store_true", help="sum w*loss instead of the weighted mean")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="prefsr", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="pretrain the toy reference and write rollouts and synthetic scores")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--reference", help="reuse an existing checkpoint instead of pretraining")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-heldout", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--pretrain-steps", type=int)
    _add_model_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="score table + manifest -> rewards.jsonl")
    p.add_argument("--scores", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--format", choices=["csv", "jsonl"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("curate", help="rewards.jsonl -> pairs.jsonl + weighted_pairs.jsonl")
    p.add_argument("--rewards", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--strict-m", action="store_true")
    p.add_argument("--hpo-mode", choices=[m.value for m in HpoMode], default="both")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("train", help="preference-optimize the reference on weighted pairs")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    _add_model_flags(p)
    _add_dpo_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train one policy per (M, N/M) cell")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--m-values", type=lambda s: [int(x) for x in s.split(",")])
    p.add_argument("--ratios", type=lambda s: [x for x in s.split(",")])
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-heldout", type=int)
    p.add_argument("--pretrain-steps", type=int)
    _add_model_flags(p)
    _add_dpo_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize trainlog.csv or sweep.csv into text, CSV and figures")
    p.add_argument("--trainlog")
    p.add_argument("--sweep")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selftest", help="run the built-in invariant checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
