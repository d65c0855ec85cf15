"""Command-line harness: config loading, pipeline runs, sweeps, ablations,
bound verification, and plot-data extraction.

Configs are flat ``section.key=value`` text files (see README for the full
schema).  Every command writes its CSV artifacts plus a manifest under
--out-dir; the manifest embeds a byte-identical snapshot of the executed
config, and ``run`` accepts a manifest in place of a config to reproduce a
run exactly.  Exit codes: 0 ok, 2 config error, 3 pipeline stage failure.
"""

import argparse
import csv
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from .cgen import GanTrainConfig
from .m3_distill import (ABLATION_VARIANTS, PipelineConfig, StageError,
                         run_ablation, run_pipeline)
from .nncore import TrainConfig
from .synthdata import BlobsConfig, RingConfig
from .theory import standard_setup, verify_bound

MANIFEST_HEADER = "cgankd-manifest v1"

RUN_COLUMNS = ("task", "n_real", "n_fake", "m_fake", "rho", "theta",
               "teacher_metric", "student_nokd_metric",
               "student_cgankd_metric", "consistency_before",
               "consistency_after", "seed")
SWEEP_COLUMNS = ("param", "value", "seed", "teacher_metric",
                 "student_nokd_metric", "student_cgankd_metric", "m_fake",
                 "theta")
ABLATION_COLUMNS = ("variant", "seed", "metric")
BOUND_COLUMNS = ("trial", "lhs", "rhs", "holds", "holds_fraction")
PLOT_COLUMNS = ("x", "series", "mean", "stddev")

SWEEP_PARAMS = ("mg", "rho", "teacher-epochs")


class ConfigError(Exception):
    pass


def parse_config_text(text: str) -> dict:
    """Flat key=value lines; '#' comments and blank lines are skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path):
    """Returns (key-value dict, raw snapshot text, embedded seed or None).

    A manifest file is accepted in place of a config; its snapshot section
    and recorded seed are used, reproducing the original run.
    """
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if text.startswith(MANIFEST_HEADER):
        head, sep, snapshot = text.partition("\n---\n")
        if not sep:
            raise ConfigError("manifest has no config snapshot section")
        meta = parse_config_text(head.split("\n", 1)[1])
        seed = int(meta["seed"]) if "seed" in meta else None
        return parse_config_text(snapshot), snapshot, seed
    return parse_config_text(text), text, None


class _Reader:
    """Typed accessor over the flat key-value dict, tracking unused keys."""

    def __init__(self, kv):
        self.kv = dict(kv)
        self.used = set()

    def get(self, key, cast, default=None, required=False):
        if key not in self.kv:
            if required:
                raise ConfigError(f"missing required key {key!r}")
            return default
        self.used.add(key)
        raw = self.kv[key]
        try:
            return cast(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc

    def finish(self):
        unknown = sorted(set(self.kv) - self.used)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")


def _int_tuple(raw):
    return tuple(int(v) for v in raw.split(",") if v.strip())


def _train_config(r: _Reader, prefix: str, defaults) -> TrainConfig:
    return TrainConfig(
        epochs=r.get(f"{prefix}.epochs", int, defaults["epochs"]),
        batch_size=r.get(f"{prefix}.batch_size", int, 64),
        lr=r.get(f"{prefix}.lr", float, defaults["lr"]),
        lr_decay_epochs=r.get(f"{prefix}.lr_decay_epochs", _int_tuple, ()),
        momentum=r.get(f"{prefix}.momentum", float, 0.9),
        weight_decay=r.get(f"{prefix}.weight_decay", float, 0.0))


def build_pipeline_config(kv: dict, seed_override=None) -> PipelineConfig:
    r = _Reader(kv)
    task = r.get("task", str, required=True)
    if task == "classification":
        data = BlobsConfig(
            n_classes=r.get("data.classes", int, required=True),
            separation=r.get("data.separation", float, required=True),
            noise_std=r.get("data.noise_std", float, required=True),
            n=r.get("data.n", int, required=True))
        default_rho = 0.9
    elif task == "regression":
        data = RingConfig(
            radius_base=r.get("data.radius_base", float, 2.0),
            radius_slope=r.get("data.radius_slope", float, 1.5),
            noise_std=r.get("data.noise_std", float, required=True),
            n=r.get("data.n", int, required=True))
        default_rho = 0.7
    else:
        raise ConfigError(f"unknown task {task!r}")

    generator = r.get("generator", str, "oracle")
    gan = None
    if generator == "cgan":
        gan = GanTrainConfig(
            iterations=r.get("gan.iterations", int, required=True),
            batch_size=r.get("gan.batch_size", int, 64),
            lr_g=r.get("gan.lr_g", float, 0.02),
            lr_d=r.get("gan.lr_d", float, 0.05),
            noise_dim=r.get("gan.noise_dim", int, 4))

    seed = r.get("seed", int, 0)
    if seed_override is not None:
        seed = seed_override
    try:
        config = PipelineConfig(
            data=data,
            train_fraction=r.get("train_fraction", float, 0.5),
            generator_kind=generator,
            oracle_flip=r.get("oracle.flip", float, 0.0),
            oracle_label_std=r.get("oracle.label_std", float, 0.0),
            oracle_junk=r.get("oracle.junk", float, 0.0),
            oracle_junk_spread=r.get("oracle.junk_spread", float, 0.0),
            gan=gan,
            teacher_hidden=r.get("teacher.hidden", _int_tuple, (64, 64)),
            teacher_train=_train_config(r, "teacher",
                                        {"epochs": 100, "lr": 0.05}),
            student_hidden=r.get("student.hidden", _int_tuple, (8,)),
            student_train=_train_config(r, "student",
                                        {"epochs": 100, "lr": 0.05}),
            student_loss=r.get("student.loss", str, "plain"),
            lam_kd=r.get("student.lam_kd", float, 0.5),
            temperature=r.get("student.temperature", float, 5.0),
            dr_hidden=r.get("dr.hidden", _int_tuple, (32,)),
            dr_train=_train_config(r, "dr", {"epochs": 60, "lr": 0.05}),
            dr_gamma=r.get("dr.gamma", float, 1.2),
            n_fake=r.get("n_fake", int, required=True),
            rho=r.get("rho", float, default_rho),
            fake_cap=r.get("fake_cap", int, 0),
            master_seed=seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    r.finish()
    return config


def build_bound_setup(kv: dict):
    r = _Reader(kv)
    if r.get("kind", str, required=True) != "bound":
        raise ConfigError("bound setups need kind=bound")
    try:
        setup = standard_setup(
            n_real=r.get("n_real", int, 100),
            n_fake=r.get("n_fake", int, 300),
            rho=r.get("rho", float, 0.9),
            m1_mode=r.get("m1_mode", str, "none"),
            real_label_noise=r.get("real_label_noise", float, 0.15),
            gen_label_noise=r.get("gen_label_noise", float, 0.35),
            gen_skew=r.get("gen_skew", float, 0.7))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    extras = {
        "trials": r.get("trials", int, 200),
        "delta": r.get("delta", float, 0.1),
        "seed": r.get("seed", int, 0),
        "n_mc": r.get("n_mc", int, 2000),
    }
    r.finish()
    return setup, extras


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ConfigError(f"empty CSV {path}")
    return rows[0], rows[1:]


def write_manifest(out_dir, command, config_path, snapshot, seed, artifacts):
    lines = [MANIFEST_HEADER,
             f"command={command}",
             f"config_path={config_path}",
             f"seed={seed}",
             f"timestamp={time.strftime('%Y-%m-%dT%H:%M:%S')}"]
    lines.extend(f"artifact={a}" for a in artifacts)
    path = f"{out_dir}/manifest.txt"
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n---\n" + snapshot)
    return path


def _report_row(config, report):
    fr = report.filter_report
    return (config.data.task.kind, report.n_real, report.n_fake,
            report.m_fake, config.rho, report.theta,
            report.teacher.primary, report.student_nokd.primary,
            report.student_cgankd.primary, fr.consistency_before,
            fr.consistency_after, config.master_seed)


def cmd_run(args) -> int:
    kv, snapshot, manifest_seed = load_config(args.config)
    seed = args.seed if args.seed is not None else manifest_seed
    config = build_pipeline_config(kv, seed_override=seed)
    report = run_pipeline(config, checkpoint_dir=args.out_dir)
    path = f"{args.out_dir}/report.csv"
    write_csv(path, RUN_COLUMNS, [_report_row(config, report)])
    write_manifest(args.out_dir, "run", args.config, snapshot,
                   config.master_seed, ["report.csv"])
    print(path)
    return 0


def _sweep_variant(config: PipelineConfig, param: str, value):
    if param == "rho":
        return replace(config, rho=float(value))
    if param == "mg":
        cap = int(value)
        if cap == 0:
            return replace(config, rho=0.0)
        return replace(config, fake_cap=cap)
    if param == "teacher-epochs":
        return replace(config,
                       teacher_train=replace(config.teacher_train,
                                             epochs=int(value)))
    raise ConfigError(f"unknown sweep parameter {param!r}")


def _mean_std(values):
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


def _run_cells(cells, jobs):
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(lambda c: run_pipeline(c), cells))


def cmd_sweep(args) -> int:
    kv, snapshot, _ = load_config(args.config)
    base = build_pipeline_config(kv)
    if args.param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter {args.param!r}")
    try:
        values = sorted(float(v) if args.param == "rho" else int(v)
                        for v in args.values.split(","))
        seeds = [int(s) for s in args.seeds.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values/seeds: {exc}") from exc
    cells = [(value, seed,
              _sweep_variant(replace(base, master_seed=seed), args.param,
                             value))
             for value in values for seed in sorted(seeds)]
    reports = _run_cells([c for _, _, c in cells], args.jobs)

    rows = []
    for value in values:
        group = [(seed, rep) for (v, seed, _), rep in zip(cells, reports)
                 if v == value]
        per_seed = []
        for seed, rep in group:
            per_seed.append((rep.teacher.primary, rep.student_nokd.primary,
                             rep.student_cgankd.primary, rep.m_fake,
                             rep.theta))
            rows.append((args.param, value, seed) + per_seed[-1])
        for name, picker in (("mean", 0), ("stddev", 1)):
            stats = [_mean_std([s[i] for s in per_seed])[picker]
                     for i in range(5)]
            rows.append((args.param, value, name) + tuple(stats))
    path = f"{args.out_dir}/sweep.csv"
    write_csv(path, SWEEP_COLUMNS, rows)
    write_manifest(args.out_dir, "sweep", args.config, snapshot,
                   base.master_seed, ["sweep.csv"])
    print(path)
    return 0


def cmd_ablation(args) -> int:
    kv, snapshot, _ = load_config(args.config)
    base = build_pipeline_config(kv)
    try:
        seeds = sorted(int(s) for s in args.seeds.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad seeds: {exc}") from exc
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        tables = list(pool.map(
            lambda s: run_ablation(replace(base, master_seed=s)), seeds))
    rows = []
    for variant in ABLATION_VARIANTS:
        values = []
        for seed, table in zip(seeds, tables):
            values.append(table[variant].primary)
            rows.append((variant, seed, values[-1]))
        mean, std = _mean_std(values)
        rows.append((variant, "mean", mean))
        rows.append((variant, "stddev", std))
    path = f"{args.out_dir}/ablation.csv"
    write_csv(path, ABLATION_COLUMNS, rows)
    write_manifest(args.out_dir, "ablation", args.config, snapshot,
                   base.master_seed, ["ablation.csv"])
    print(path)
    return 0


def cmd_verify_bound(args) -> int:
    kv, snapshot, _ = load_config(args.setup)
    setup, extras = build_bound_setup(kv)
    trials = args.trials if args.trials is not None else extras["trials"]
    delta = args.delta if args.delta is not None else extras["delta"]
    try:
        report = verify_bound(setup, trials=trials, delta=delta,
                              seed=extras["seed"], n_mc=extras["n_mc"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    frac = report.holds_fraction
    rows = [(t, lhs, report.bound.rhs, held, frac)
            for t, (lhs, held) in enumerate(zip(report.lhs_values,
                                                report.holds_flags))]
    path = f"{args.out_dir}/bound.csv"
    write_csv(path, BOUND_COLUMNS, rows)
    write_manifest(args.out_dir, "verify-bound", args.setup, snapshot,
                   extras["seed"], ["bound.csv"])
    print(f"{path} holds_fraction={frac!r}")
    return 0


def _plot_rows_sweep(header, rows):
    idx = {name: header.index(name) for name in SWEEP_COLUMNS}
    series_cols = ("teacher_metric", "student_nokd_metric",
                   "student_cgankd_metric")
    by_value = {}
    for row in rows:
        if row[idx["seed"]] in ("mean", "stddev"):
            continue
        by_value.setdefault(row[idx["value"]], []).append(row)
    out = []
    for value in sorted(by_value, key=float):
        for col in series_cols:
            vals = [float(r[idx[col]]) for r in by_value[value]]
            mean, std = _mean_std(vals)
            out.append((value, col, mean, std))
    return out


def _plot_rows_ablation(header, rows):
    idx = {name: header.index(name) for name in ABLATION_COLUMNS}
    by_variant = {}
    order = []
    for row in rows:
        if row[idx["seed"]] in ("mean", "stddev"):
            continue
        variant = row[idx["variant"]]
        if variant not in by_variant:
            order.append(variant)
        by_variant.setdefault(variant, []).append(float(row[idx["metric"]]))
    out = []
    for variant in order:
        mean, std = _mean_std(by_variant[variant])
        out.append((variant, "metric", mean, std))
    return out


def cmd_plotdata(args) -> int:
    try:
        header, rows = read_csv(args.report)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.report}: {exc}") from exc
    try:
        if args.kind == "sweep":
            out = _plot_rows_sweep(header, rows)
        else:
            out = _plot_rows_ablation(header, rows)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"unrecognized {args.kind} schema: {exc}") from exc
    path = f"{args.out_dir}/plot.csv"
    write_csv(path, PLOT_COLUMNS, out)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cgankd",
        description="Generated-sample knowledge distillation experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out-dir", default=".")
        sp.add_argument("--jobs", type=int, default=1)

    run = sub.add_parser("run", help="execute one pipeline run")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None)
    common(run)
    run.set_defaults(fn=cmd_run)

    sweep = sub.add_parser("sweep", help="sensitivity sweep over a parameter")
    sweep.add_argument("config")
    sweep.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sweep.add_argument("--values", required=True)
    sweep.add_argument("--seeds", required=True)
    common(sweep)
    sweep.set_defaults(fn=cmd_sweep)

    abl = sub.add_parser("ablation", help="four-variant module ablation")
    abl.add_argument("config")
    abl.add_argument("--seeds", required=True)
    common(abl)
    abl.set_defaults(fn=cmd_ablation)

    vb = sub.add_parser("verify-bound", help="numerical bound verification")
    vb.add_argument("setup")
    vb.add_argument("--trials", type=int, default=None)
    vb.add_argument("--delta", type=float, default=None)
    common(vb)
    vb.set_defaults(fn=cmd_verify_bound)

    plot = sub.add_parser("plotdata", help="tidy plot-ready aggregation")
    plot.add_argument("report")
    plot.add_argument("--kind", required=True, choices=("sweep", "ablation"))
    common(plot)
    plot.set_defaults(fn=cmd_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
