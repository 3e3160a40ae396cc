"""``vitalconv`` command line: synth, train-apx, train-ref, train-uni, convert, evaluate, ablate, report.

Every command exits 0 only when its outputs were written; failures print an
``error:`` line to stderr and exit 1 (2 for bad usage).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import ablation, evaluation
from .blob import FormatError
from .config import DESK_CONFIG, ConfigError, dump_config, load_config, parse_config
from .evaluation import EvaluationError
from .plots import comparison_chart
from .refine import linearize_pi
from .signals import UnitError
from .synth import DatasetError, build_synthetic, read_dataset, write_dataset
from .training import KIND_NAMES, TrainingError, load_approx, load_refine, parse_direction, train_apx, train_ref, train_uni

log = logging.getLogger("vitalconv")

DATA_ENV = "VITALCONV_DATA"
APX_CKPT = "apx.ckpt"
REF_CKPT = "ref.ckpt"
PRETRAIN_CKPT = "ref_pretrain.ckpt"


class CommandError(RuntimeError):
    pass


def _data(args):
    path = args.data or os.environ.get(DATA_ENV)
    if not path:
        raise CommandError(f"no dataset given: pass --data DIR or set {DATA_ENV}")
    return read_dataset(path)


def _config(args) -> dict:
    return load_config(args.config) if args.config else parse_config(DESK_CONFIG, "<desk defaults>")


def _run_cfg(cfg: dict, stage: str, seed: int | None):
    run = cfg["run"].replace(stage=stage)
    return run.replace(seed=seed) if seed is not None else run


def _need(path: Path, what: str) -> Path:
    if not path.is_file():
        raise CommandError(f"checkpoint missing: {path} ({what}); train it first")
    return path


def _save_config(cfg: dict, out: Path, name: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}_config.ini").write_text(dump_config(cfg))


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> None:
    ds = build_synthetic(args.patients, args.segments_per_patient, args.seed, segment_len_s=args.segment_seconds,
                         noise=args.noise, pi_available=not args.no_pi, min_patients=args.min_patients)
    write_dataset(args.out, ds.records, ds.manifest, ds.profiles)
    print(f"wrote {len(ds)} segments from {len(ds.profiles)} patients to {args.out}")


def cmd_train_apx(args) -> None:
    ds, cfg = _data(args), _config(args)
    res = train_apx(_run_cfg(cfg, "apx", args.seed), ds, cfg["approx"])
    out = Path(args.out)
    _save_config(cfg, out, "apx")
    res.save(out, "apx")
    print(f"apx: best val {res.history.best_val:.6g} at step {res.history.best_step} ({res.history.stop_reason})")


def cmd_train_uni(args) -> None:
    ds, cfg = _data(args), _config(args)
    i, j = parse_direction(args.direction)
    res = train_uni(_run_cfg(cfg, "uni", args.seed), ds, (i, j), cfg["approx"])
    name = f"uni_{KIND_NAMES[i]}-{KIND_NAMES[j]}"
    out = Path(args.out)
    _save_config(cfg, out, name)
    res.save(out, name)
    print(f"{name}: best val {res.history.best_val:.6g} at step {res.history.best_step}")


def cmd_train_ref(args) -> None:
    ds, cfg = _data(args), _config(args)
    out = Path(args.out)
    stage = f"ref-{args.stage}"
    run = _run_cfg(cfg, stage, args.seed)
    init = None
    if args.stage == "finetune":
        if args.init:
            init = _need(Path(args.init), "pretrained refinement")
        elif (out / PRETRAIN_CKPT).is_file():
            init = out / PRETRAIN_CKPT
        elif run.require_pretrain:
            raise CommandError(f"checkpoint missing: {out / PRETRAIN_CKPT}; run `train-ref --stage pretrain` first "
                               "or set require_pretrain = false")
    res = train_ref(run, ds, init, cfg["refine"], cfg["wcl"])
    name = "ref_pretrain" if args.stage == "pretrain" else "ref"
    _save_config(cfg, out, name)
    res.save(out, name)
    extra = " ".join(f"{k}={v:.3f}" for k, v in res.history.extra.items())
    print(f"{stage}: best val {res.history.best_val:.6g} at step {res.history.best_step} {extra}".rstrip())


def cmd_convert(args) -> None:
    ds = _data(args)
    i, j = parse_direction(f"{args.source}:{args.target}")
    apx = load_approx(_need(Path(args.checkpoint), "approximation"))
    records = ds.split(args.split)
    x = ds.model_inputs(records)[:, i]
    y = evaluation.convert(apx, x, j)
    unit = "local-norm"
    if args.refine:
        if j != 2:
            raise CommandError("--refine only applies to ABP targets")
        ref = load_refine(_need(Path(args.refine), "refinement"))
        texts = [linearize_pi(ds.profiles[r.patient_id]) for r in records] if ds.manifest.pi_available else None
        y = evaluation.refine_abp(ref, y, x, KIND_NAMES[i], texts, ds).abp_mmHg
        unit = "mmHg"
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write(f"# {KIND_NAMES[i]}->{KIND_NAMES[j]} unit={unit} fs={ds.fs:g}\n")
        fh.write("segment_id," + ",".join(f"t{k}" for k in range(y.shape[1])) + "\n")
        for r, row in zip(records, y):
            fh.write(f"{r.segment_id}," + ",".join(f"{v:.6g}" for v in row) + "\n")
    print(f"wrote {len(records)} converted segments ({unit}) to {out}")


def _load_run(run: Path, directions) -> tuple:
    apx = load_approx(_need(run / APX_CKPT, "approximation"))
    ref = None
    if any(j == 2 for _, j in directions):
        ref = load_refine(_need(run / REF_CKPT, "finetuned refinement; needed for ABP targets"))
    return apx, ref


def cmd_evaluate(args) -> None:
    ds = _data(args)
    dirs = evaluation.parse_directions(args.directions)
    runs = [Path(r) for r in args.run]
    for r in runs:  # fail before any work if a run is incomplete
        _need(r / APX_CKPT, "approximation")
        if any(j == 2 for _, j in dirs):
            _need(r / REF_CKPT, "finetuned refinement; needed for ABP targets")
    out = Path(args.out)
    reports = []
    for k, r in enumerate(runs):
        apx, ref = _load_run(r, dirs)
        rep = evaluation.evaluate(apx, ds, dirs, ref)
        seed = json.loads((r / "apx_summary.json").read_text()).get("seed") if (r / "apx_summary.json").exists() else None
        rep.seeds = [seed if seed is not None else k]
        reports.append(rep)
        evaluation.write_report(rep, out if len(runs) == 1 else out / f"run{k}", charts=not args.no_charts)
    if len(runs) > 1:
        evaluation.write_aggregate(evaluation.aggregate(reports), out)
    print(render_report(out if len(runs) == 1 else out / "run0"))
    print(f"report written to {out}")


def cmd_ablate(args) -> None:
    ds, cfg = _data(args), _config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    run = cfg["run"]
    if args.mode == "multi-vs-uni":
        if len(seeds) < 3:
            log.warning("fewer than 3 seeds: SD estimates will be rough")
        table = ablation.multi_vs_uni(ds, run.replace(stage="apx"), seeds, cfg["approx"],
                                      (args.pretrain_steps, args.finetune_steps if args.refine else 0), cfg["refine"])
        table.write(out, "multi_vs_uni")
        comparison_chart(table.rows, out / "multi_vs_uni.svg")
    else:
        if args.run:
            apx = load_approx(_need(Path(args.run) / APX_CKPT, "approximation"))
        else:
            apx = train_apx(run.replace(stage="apx"), ds, cfg["approx"]).model
        table = ablation.wcl_pi(ds, run, apx, seeds, args.pretrain_steps, args.finetune_steps, cfg["refine"], cfg["wcl"])
        table.write(out, "wcl_pi")
        comparison_chart({c: {k: v[c] for k, v in table.rows.items()} for c in table.columns}, out / "wcl_pi.svg",
                         ylabel="MAE (mmHg)")
    print(table.text(), end="")


def render_report(report_dir) -> str:
    """Plain-text rendering of an ``evaluate`` output directory."""
    p = Path(report_dir) / "report.json"
    if not p.is_file():
        raise CommandError(f"{p} not found; run `evaluate` first")
    doc = json.loads(p.read_text())
    lines = [f"dataset {doc['dataset']}", ""]
    lines.append(f"{'direction':<10} {'unit':<11} {'n':>4} {'MAE':>9} {'PC':>7}  standards")
    for name, d in doc["directions"].items():
        std = ""
        if "aami" in d:
            std = f"AAMI {d['aami']['verdict']} ({d['aami']['subjects']} subjects)  BHS {d['bhs']['overall']}"
        lines.append(f"{name:<10} {d['unit']:<11} {d['n']:>4} {d['mae']:>9.4f} {d['pc']:>7.3f}  {std}".rstrip())
    lines.append("")
    lines.append("feature fidelity (mean relative error by subgroup)")
    for name, d in doc["directions"].items():
        for feat, groups in d["feature_summary"].items():
            cells = ", ".join(f"{g} {s['mean_relative_error']:.3f} (n={s['n']})" for g, s in groups.items())
            lines.append(f"  {name:<10} {feat:<6} {cells}")
    return "\n".join(lines)


def cmd_report(args) -> None:
    print(render_report(args.report))


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vitalconv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    def data(sp):
        sp.add_argument("--data", help=f"dataset directory (default: ${DATA_ENV})")

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--patients", type=int, required=True)
    s.add_argument("--segments-per-patient", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-pi", action="store_true", help="blank patient demographics")
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--segment-seconds", type=float, default=4.096)
    s.add_argument("--min-patients", type=int, default=3, help="smallest cohort accepted for splitting")
    s.set_defaults(func=cmd_synth)

    for name, fn in (("train-apx", cmd_train_apx), ("train-uni", cmd_train_uni), ("train-ref", cmd_train_ref)):
        t = sub.add_parser(name)
        data(t)
        t.add_argument("--config", help="run-config file ([run], [approx], [refine], [wcl]); default: desk preset")
        t.add_argument("--out", required=True, help="run directory")
        t.add_argument("--seed", type=int, help="overrides [run] seed")
        if name == "train-uni":
            t.add_argument("--direction", required=True, help="e.g. ECG:ABP")
        if name == "train-ref":
            t.add_argument("--stage", choices=("pretrain", "finetune"), required=True)
            t.add_argument("--init", help="pretrained refinement checkpoint (default: RUNDIR/ref_pretrain.ckpt)")
        t.set_defaults(func=fn)

    c = sub.add_parser("convert", help="convert one split's waveforms")
    data(c)
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--source", required=True, choices=KIND_NAMES)
    c.add_argument("--target", required=True, choices=KIND_NAMES)
    c.add_argument("--refine", help="refinement checkpoint: write ABP in mmHg")
    c.add_argument("--split", default="apx-test")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_convert)

    e = sub.add_parser("evaluate", help="similarity, features, AAMI and BHS on the test split")
    data(e)
    e.add_argument("--run", required=True, nargs="+", help="run directories (several = per-seed aggregation)")
    e.add_argument("--directions", default="all")
    e.add_argument("--out", required=True)
    e.add_argument("--no-charts", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="multi- vs uni-directional, or WCL x PI comparison")
    data(a)
    a.add_argument("--mode", required=True, choices=("multi-vs-uni", "wcl-pi"))
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--run", help="wcl-pi: reuse RUNDIR/apx.ckpt instead of training one")
    a.add_argument("--pretrain-steps", type=int, default=200)
    a.add_argument("--finetune-steps", type=int, default=600)
    a.add_argument("--refine", action="store_true", help="multi-vs-uni: score ABP rows in mmHg")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="print an evaluate output directory as text")
    r.add_argument("report", help="evaluate --out directory")
    r.set_defaults(func=cmd_report)
    return p


ERRORS = (CommandError, ConfigError, DatasetError, EvaluationError, FormatError, TrainingError, UnitError,
          FileNotFoundError, ValueError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
