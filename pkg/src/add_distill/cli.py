"""``add-distill`` command line: run, eval, sweep and report verbs.

Failures print one line ``E_CODE: message`` on stderr and exit nonzero
(2 for usage errors, 1 otherwise).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import ap_csv, load_model, ordered_entries, read_records_csv, records_csv, save_model
from .config import ENV_PREFIX, RunConfig, parse_config, replace_seeds, serialize
from .errors import AddDistillError
from .harness import evaluate_student, held_out_seeds, make_teacher, run_distillation_experiment
from .losses import weight_sweep_settings


class UsageError(Exception):
    code = "E_USAGE"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_run_config(args) -> RunConfig:
    cfg = parse_config(args.config, os.environ) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace_seeds(cfg, [args.seed])
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def format_ap_table(report: dict) -> str:
    lines = [f"{'class':<12}{'difficulty':<12}{'AP_BEV':>8}{'AP_3D':>8}"]
    for (label, diff), ap in ordered_entries(report["bev"]):
        lines.append(f"{label:<12}{diff:<12}{ap:>8.3f}{report['3d'].get((label, diff), math.nan):>8.3f}")
    return "\n".join(lines)


def execute_run(cfg: RunConfig, out: Path) -> dict:
    """Train every seed, write records/checkpoints/report into ``out``; return the summary."""
    out.mkdir(parents=True, exist_ok=True)
    results = run_distillation_experiment(cfg.distill, cfg.harness, cfg.seeds)
    (out / "config.txt").write_text(serialize(cfg))
    (out / "records.csv").write_text(records_csv([r for res in results for r in res.records]))
    save_model(out / "teacher.ckpt", make_teacher(cfg.harness, cfg.distill.n_levels, cfg.distill.m_levels))
    summary = {"seeds": {}}
    for res in results:
        save_model(out / f"student_seed{res.seed}.ckpt", res.student)
        first, last = res.records[0].losses, res.records[-1].losses
        summary["seeds"][str(res.seed)] = {
            "l_feat_step0": first.l_feat,
            "l_feat_final": last.l_feat,
            "l_ed_step0": first.l_ed,
            "l_ed_final": last.l_ed,
            "baseline_ap_bev": res.baseline_ap,
            "final_ap_bev": res.final_ap,
            "timing": res.timing,
        }
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _summary_lines(summary: dict) -> list:
    return [
        f"seed {s}: L_feat {v['l_feat_step0']:.3g} -> {v['l_feat_final']:.3g}, "
        f"L_ed {v['l_ed_step0']:.3g} -> {v['l_ed_final']:.3g}, "
        f"AP_BEV {v['baseline_ap_bev']:.3f} -> {v['final_ap_bev']:.3f}"
        for s, v in summary["seeds"].items()
    ]


def cmd_run(args) -> int:
    cfg = load_run_config(args)
    summary = execute_run(cfg, Path(cfg.out_dir))
    print("\n".join(_summary_lines(summary)))
    print(f"wrote {cfg.out_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_run_config(args)
    for name, dcfg in weight_sweep_settings(cfg.distill):
        summary = execute_run(replace(cfg, distill=dcfg), Path(cfg.out_dir) / name)
        aps = [v["final_ap_bev"] for v in summary["seeds"].values()]
        print(f"{name}: alpha_i={dcfg.alpha_i:g} beta_i={dcfg.beta_i:g} alpha_v={dcfg.alpha_v:g} "
              f"beta_v={dcfg.beta_v:g} mean AP_BEV {sum(aps) / len(aps):.3f}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    elif args.seed is not None:
        seeds = [args.seed]
    else:
        seeds = held_out_seeds(model.cfg.eval_scenes)
    cfg = model.cfg
    if args.noiseless:
        cfg = replace(cfg, noise_sigma=0.0, noise_bias=0.0)
    report = evaluate_student(model, seeds, cfg)
    print(format_ap_table(report))
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    (out / f"eval_{Path(args.checkpoint).stem}.csv").write_text(ap_csv(report))
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.out or RunConfig().out_dir)
    rows = read_records_csv(run_dir / "records.csv")
    by_seed = {}
    for r in rows:
        by_seed.setdefault(r["seed"], []).append(r)
    for seed, rs in by_seed.items():
        first, last = rs[0], rs[-1]
        aps = " ".join(f"{r['step']}:{r['ap_bev']:.3f}" for r in rs if not math.isnan(r["ap_bev"]))
        print(f"seed {seed}: steps {last['step']}, L_feat {first['l_feat']:.3g} -> {last['l_feat']:.3g}, "
              f"L_ed {first['l_ed']:.3g} -> {last['l_ed']:.3g}, AP_BEV {aps}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="add-distill", description="Depth-guided distillation on synthetic stand-in scenes.",
                epilog=f"Config keys can be overridden by {ENV_PREFIX}<SECTION>__<KEY> environment variables.")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, help="run a single seed instead of run.seeds")
        sp.add_argument("--out", help="output directory (overrides run.out_dir)")

    common(sub.add_parser("run", help="train, then write records, checkpoints and a report"))
    common(sub.add_parser("sweep", help="run the eight feature/response weight settings"))
    ev = sub.add_parser("eval", help="AP table of a checkpoint on synthetic scenes")
    common(ev)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--seeds", help="comma-separated scene seeds (default: held-out set)")
    ev.add_argument("--noiseless", action="store_true", help="zero the student depth noise")
    common(sub.add_parser("report", help="summarise the records.csv in --out"))
    return p


VERBS = {"run": cmd_run, "sweep": cmd_sweep, "eval": cmd_eval, "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return VERBS[args.verb](args)
    except UsageError as exc:
        print(f"E_USAGE: {exc}", file=sys.stderr)
        return 2
    except AddDistillError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"E_IO: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
