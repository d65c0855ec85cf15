"""End-to-end pipeline: generate fakes, clean them up, augment the real
training set, and train teacher plus students.

A run executes data generation, teacher training, generator preparation,
density-ratio subsampling, quantile filtering with optional label
replacement, augmentation, student training, and evaluation.  Every stage
draws its randomness from a key derived from (master seed, stage name), so
two runs with the same config are bit-identical and the student stage is
shared between the NOKD baseline and the augmented student: with no
surviving fakes the two students coincide exactly.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import cgen, m1_subsample, m2_labeladjust, modelio, nncore, rng
from .cgen import GanTrainConfig
from .m1_subsample import SubsampleConfig
from .m2_labeladjust import FilterReport
from .nncore import Loss, Metrics, NetParams, NetSpec, TrainConfig
from .synthdata import (Dataset, SynthConfig, concat, make_dataset, split,
                        write_dataset)

STUDENT_LOSS_MODES = ("plain", "blkd")
GENERATOR_KINDS = ("oracle", "cgan")


@dataclass(frozen=True)
class PipelineConfig:
    data: SynthConfig            # total pool size in data.n; data.seed is ignored
    teacher_hidden: tuple
    teacher_train: TrainConfig
    student_hidden: tuple
    student_train: TrainConfig
    n_fake: int                  # accepted count produced by subsampling
    rho: float
    train_fraction: float = 0.5
    generator_kind: str = "oracle"
    oracle_flip: float = 0.0
    oracle_label_std: float = 0.0
    oracle_junk: float = 0.0
    oracle_junk_spread: float = 0.0
    gan: GanTrainConfig = None
    dr_hidden: tuple = (32,)
    dr_train: TrainConfig = TrainConfig(60, 64, 0.05)
    dr_gamma: float = 1.2
    fake_cap: int = 0            # 0: keep everything surviving the filter
    student_loss: str = "plain"
    lam_kd: float = 0.5
    temperature: float = 5.0
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "teacher_hidden", tuple(self.teacher_hidden))
        object.__setattr__(self, "student_hidden", tuple(self.student_hidden))
        object.__setattr__(self, "dr_hidden", tuple(self.dr_hidden))
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.n_fake <= 0:
            raise ValueError("n_fake must be positive")
        if self.generator_kind not in GENERATOR_KINDS:
            raise ValueError(f"unknown generator kind {self.generator_kind!r}")
        if self.student_loss not in STUDENT_LOSS_MODES:
            raise ValueError(f"unknown student loss {self.student_loss!r}")
        if self.generator_kind == "cgan" and self.gan is None:
            raise ValueError("cgan generator requires a GanTrainConfig")
        if self.fake_cap < 0:
            raise ValueError("fake_cap must be nonnegative")


@dataclass
class PipelineReport:
    teacher: Metrics
    student_nokd: Metrics
    student_cgankd: Metrics
    filter_report: FilterReport
    n_real: int
    n_fake: int
    m_fake: int                  # fakes surviving the filter (and cap)
    theta: float
    timings: dict = field(default_factory=dict)


class StageError(RuntimeError):
    """A pipeline stage failed; .stage names the culprit."""

    def __init__(self, stage, cause):
        super().__init__(f"pipeline stage {stage!r} failed: {cause}")
        self.stage = stage


def _stage(name, timings, fn):
    start = time.perf_counter()
    try:
        out = fn()
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    timings[name] = time.perf_counter() - start
    return out


def _head(task):
    if task.kind == "classification":
        return "logits", task.n_classes
    return "nonneg_scalar", 1


def _train_net(hidden, train_cfg, dataset, seed, teacher=None):
    kind, n_out = _head(dataset.task)
    spec = NetSpec(dataset.dim, hidden, kind, n_out)
    cfg = replace(train_cfg, seed=seed)
    if teacher is None:
        plain = Loss("plain_ce" if dataset.task.kind == "classification"
                     else "plain_se")
        cfg = replace(cfg, loss=plain)
    params, _ = nncore.train(nncore.init_params(spec, seed), dataset, cfg,
                             teacher=teacher)
    return params


def augment(real: Dataset, fakes: Dataset) -> Dataset:
    """Union of the real training set and processed fakes."""
    if fakes.n == 0:
        return real
    if real.task != fakes.task or real.dim != fakes.dim:
        raise ValueError("real and fake sets disagree on task or dimension")
    return concat(real, fakes)


def train_student(d_aug: Dataset, hidden, train_cfg: TrainConfig, mode: str,
                  seed: int, teacher: NetParams = None,
                  lam_kd: float = 0.5, temperature: float = 5.0) -> NetParams:
    """Train the student on the (augmented) set, plain loss or distillation."""
    if mode not in STUDENT_LOSS_MODES:
        raise ValueError(f"unknown student loss {mode!r}")
    if mode == "blkd":
        if teacher is None:
            raise ValueError("distillation mode requires a teacher")
        if d_aug.task.kind != "classification":
            raise ValueError("distillation loss applies to classification only")
        loss = Loss("blkd", lam=lam_kd, temperature=temperature)
        return _train_net(hidden, replace(train_cfg, loss=loss), d_aug, seed,
                          teacher=teacher)
    base = Loss("plain_ce" if d_aug.task.kind == "classification"
                else "plain_se")
    return _train_net(hidden, replace(train_cfg, loss=base), d_aug, seed)


def _prepare_generator(config: PipelineConfig, real_train: Dataset, seed: int):
    if config.generator_kind == "oracle":
        return cgen.make_oracle(
            config.data, flip_prob=config.oracle_flip,
            label_gauss_std=config.oracle_label_std,
            junk_prob=config.oracle_junk,
            junk_spread=config.oracle_junk_spread)
    return cgen.train_cgan(real_train, replace(config.gan, seed=seed))


def _subsample_fakes(config: PipelineConfig, generator, real_train: Dataset,
                     seed_of) -> Dataset:
    """Module M1: density-ratio rejection until n_fake accepted."""
    fake_labels = cgen.sample_labels(real_train, real_train.n,
                                     seed=seed_of("m1-fake-labels"))
    fake_train = cgen.sample(generator, fake_labels, seed=seed_of("m1-fakes"))
    scfg = SubsampleConfig(
        dr_train=replace(config.dr_train, seed=seed_of("m1-dr")),
        n_target=config.n_fake, dr_hidden=config.dr_hidden,
        gamma=config.dr_gamma, seed=seed_of("m1"))
    model = m1_subsample.train_dr(real_train, fake_train, scfg)
    ratio_fn = m1_subsample.model_ratio_fn(model)
    task = real_train.task
    if task.kind == "classification":
        if config.n_fake < task.n_classes:
            raise ValueError("n_fake must cover every class at least once")
        budgets = np.full(task.n_classes, config.n_fake // task.n_classes)
        budgets[: config.n_fake % task.n_classes] += 1
        parts = [m1_subsample.rejection_sample(
            generator, ratio_fn, model.m_max,
            m1_subsample.constant_labels(c), int(budgets[c]),
            seed=seed_of("m1-reject", c)) for c in range(task.n_classes)]
        out = parts[0]
        for part in parts[1:]:
            out = concat(out, part)
        return out
    labels = m1_subsample.empirical_labels(real_train,
                                           seed=seed_of("m1-labels"))
    return m1_subsample.rejection_sample(generator, ratio_fn, model.m_max,
                                         labels, config.n_fake,
                                         seed=seed_of("m1-reject"))


def _cap_fakes(fakes: Dataset, cap: int, seed: int) -> Dataset:
    if cap <= 0 or fakes.n <= cap:
        return fakes
    g = rng.generator(seed)
    idx = np.sort(g.permutation(fakes.n)[:cap])
    return fakes.subset(idx)


def run_pipeline(config: PipelineConfig, checkpoint_dir=None) -> PipelineReport:
    """Execute the full run; optionally checkpoint artifacts per stage."""
    timings = {}

    def seed_of(*parts):
        return rng.derive_key(config.master_seed, *parts)

    def save(name, writer):
        if checkpoint_dir is not None:
            writer(f"{checkpoint_dir}/{name}")

    def data_stage():
        full = make_dataset(replace(config.data, seed=seed_of("data")))
        return split(full, config.train_fraction, seed_of("split"))

    real_train, eval_set = _stage("data", timings, data_stage)
    save("train.txt", lambda p: write_dataset(real_train, p))
    save("eval.txt", lambda p: write_dataset(eval_set, p))

    teacher = _stage("teacher", timings, lambda: _train_net(
        config.teacher_hidden, config.teacher_train, real_train,
        seed_of("teacher")))
    save("teacher.txt", lambda p: modelio.write_netparams(teacher, p))

    student_nokd = _stage("student-nokd", timings, lambda: train_student(
        real_train, config.student_hidden, config.student_train, "plain",
        seed_of("student")))
    save("student_nokd.txt",
         lambda p: modelio.write_netparams(student_nokd, p))

    generator = _stage("generator", timings, lambda: _prepare_generator(
        config, real_train, seed_of("generator")))
    save("generator.txt", lambda p: cgen.save_generator(generator, p))

    d_m1 = _stage("m1", timings, lambda: _subsample_fakes(
        config, generator, real_train, seed_of))
    save("fakes_m1.txt", lambda p: write_dataset(d_m1, p))

    d_m2, filter_report = _stage("m2", timings, lambda: m2_labeladjust.run_m2(
        teacher, d_m1, config.rho))
    d_m2 = _cap_fakes(d_m2, config.fake_cap, seed_of("fake-cap"))
    if d_m2.n:
        save("fakes_m2.txt", lambda p: write_dataset(d_m2, p))

    def student_stage():
        d_aug = augment(real_train, d_m2)
        return train_student(d_aug, config.student_hidden,
                             config.student_train, config.student_loss,
                             seed_of("student"), teacher=teacher
                             if config.student_loss == "blkd" else None,
                             lam_kd=config.lam_kd,
                             temperature=config.temperature)

    student = _stage("student", timings, student_stage)
    save("student.txt", lambda p: modelio.write_netparams(student, p))

    def eval_stage():
        return (nncore.evaluate(teacher, eval_set),
                nncore.evaluate(student_nokd, eval_set),
                nncore.evaluate(student, eval_set))

    t_metrics, nokd_metrics, student_metrics = _stage("evaluate", timings,
                                                      eval_stage)
    return PipelineReport(
        teacher=t_metrics, student_nokd=nokd_metrics,
        student_cgankd=student_metrics, filter_report=filter_report,
        n_real=real_train.n, n_fake=config.n_fake, m_fake=d_m2.n,
        theta=real_train.n / (real_train.n + d_m2.n), timings=timings)


ABLATION_VARIANTS = ("raw", "m1", "m1m2", "full")


def run_ablation(config: PipelineConfig) -> dict:
    """Metrics for four fake-processing variants under shared seeds.

    raw: unprocessed fakes; m1: subsampled; m1m2: subsampled + filtered;
    full: m1m2 plus label replacement (regression; identical to m1m2 for
    classification, where no replacement step exists).
    """
    timings = {}

    def seed_of(*parts):
        return rng.derive_key(config.master_seed, *parts)

    full = make_dataset(replace(config.data, seed=seed_of("data")))
    real_train, eval_set = split(full, config.train_fraction, seed_of("split"))
    teacher = _train_net(config.teacher_hidden, config.teacher_train,
                         real_train, seed_of("teacher"))
    generator = _prepare_generator(config, real_train, seed_of("generator"))

    raw_labels = cgen.sample_labels(real_train, config.n_fake,
                                    seed=seed_of("raw-labels"))
    d_raw = cgen.sample(generator, raw_labels, seed=seed_of("raw-fakes"))
    d_m1 = _subsample_fakes(config, generator, real_train, seed_of)
    d_filtered, _ = (m2_labeladjust.filter_classification(teacher, d_m1,
                                                          config.rho)
                     if real_train.task.kind == "classification"
                     else m2_labeladjust.filter_regression(teacher, d_m1,
                                                           config.rho))
    if real_train.task.kind == "regression" and d_filtered.n:
        d_full = m2_labeladjust.replace_labels(teacher, d_filtered)
    else:
        d_full = d_filtered
    variants = {"raw": d_raw, "m1": d_m1, "m1m2": d_filtered, "full": d_full}

    out = {}
    for name in ABLATION_VARIANTS:
        student = train_student(augment(real_train, variants[name]),
                                config.student_hidden, config.student_train,
                                "plain", seed_of("student"))
        out[name] = nncore.evaluate(student, eval_set)
    return out
