"""Minibatch training of the two adapters, staged according to a strategy."""
import enum
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import adapter as adapter_mod
from .adapter import DEFAULT_HIDDEN, DEFAULT_OUT, init_adapter, params_hash, save_checkpoint
from .data_model import Split, union
from .errors import InvalidConfig, InvalidDataset, NumericalFailure
from .losses import DEFAULT_TEMPERATURE, LOSSES, BatchEmbeddings, PairMiningPolicy
from .optim import AdamState, Decision, EarlyStopper, PlateauScheduler, adam_step, scheduler_epoch_end
from .retrieval_eval import AudioIndex, map_from_ranks, relevant_ranks

log = logging.getLogger(__name__)

STRATEGIES = ("ATAE", "ATAE-ET", "ATAE-EP-F", "ATAE-NP-F")


class StageKind(str, enum.Enum):
    TRAIN = "train"
    PRETRAIN = "pretrain"
    FINETUNE = "finetune"


@dataclass(frozen=True)
class StageConfig:
    train_datasets: tuple
    kind: StageKind = StageKind.TRAIN
    inherit: bool = False

    def __post_init__(self):
        object.__setattr__(self, "train_datasets", tuple(self.train_datasets))
        object.__setattr__(self, "kind", StageKind(self.kind))
        if not self.train_datasets:
            raise InvalidConfig("a stage needs at least one training dataset")
        if self.kind is StageKind.FINETUNE and not self.inherit:
            raise InvalidConfig("finetune stages must inherit the previous stage's adapters")


@dataclass(frozen=True)
class TrainConfig:
    stages: tuple
    loss: str = "contrastive"
    mining: PairMiningPolicy = PairMiningPolicy.ALL_PAIRS
    temperature: float = DEFAULT_TEMPERATURE
    batch_size: int = 32
    seed: int = 0
    lr0: float = 1e-4
    max_epochs: int = 100
    hidden: int = DEFAULT_HIDDEN
    out_dim: int = DEFAULT_OUT
    plateau_patience: int = 5
    lr_factor: float = 10.0
    stop_patience: int = 10

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "mining", PairMiningPolicy(self.mining))
        if self.loss not in LOSSES:
            raise InvalidConfig(f"unknown loss {self.loss!r}; expected one of {sorted(LOSSES)}")
        if not self.stages:
            raise InvalidConfig("training needs at least one stage")
        if self.stages[0].inherit:
            raise InvalidConfig("the first stage has nothing to inherit from")
        if self.batch_size < 2:
            raise InvalidConfig(f"batch_size must be >= 2, got {self.batch_size}")
        if self.max_epochs < 1:
            raise InvalidConfig(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not (self.lr0 > 0 and math.isfinite(self.lr0)):
            raise InvalidConfig(f"lr0 must be positive, got {self.lr0}")
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise InvalidConfig(f"temperature must be positive, got {self.temperature}")

    def to_dict(self):
        d = asdict(self)
        d["mining"] = self.mining.value
        d["stages"] = [{"train_datasets": list(s.train_datasets), "kind": s.kind.value, "inherit": s.inherit}
                       for s in self.stages]
        return d

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def configure_strategy(name, clean="clean", noisy="noisy"):
    """Stage list for one of the four data strategies."""
    if name == "ATAE":
        return (StageConfig((clean,), StageKind.TRAIN),)
    if name == "ATAE-ET":
        return (StageConfig((clean, noisy), StageKind.TRAIN),)
    if name == "ATAE-EP-F":
        return (StageConfig((clean, noisy), StageKind.PRETRAIN),
                StageConfig((clean,), StageKind.FINETUNE, inherit=True))
    if name == "ATAE-NP-F":
        return (StageConfig((noisy,), StageKind.PRETRAIN),
                StageConfig((clean,), StageKind.FINETUNE, inherit=True))
    raise InvalidConfig(f"unknown strategy {name!r}; expected one of {', '.join(STRATEGIES)}")


def sample_epoch_batches(n_pairs, batch_size, rng):
    """Shuffle ``range(n_pairs)`` and cut it into consecutive batches.

    A trailing batch with fewer than 2 pairs is dropped since it has no
    negatives.
    """
    n_pairs = n_pairs if isinstance(n_pairs, int) else len(n_pairs)
    if n_pairs < 2:
        raise InvalidDataset(f"need at least 2 training pairs, got {n_pairs}")
    perm = rng.permutation(n_pairs)
    batches = [perm[i:i + batch_size] for i in range(0, n_pairs, batch_size)]
    if len(batches[-1]) < 2:
        batches.pop()
    return batches


def epoch_rng(seed, stage, epoch):
    return np.random.default_rng([seed, stage, epoch])


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_map10: float
    lr: float
    decision: str
    skipped_steps: int = 0


@dataclass
class StageReport:
    stage: int
    kind: str
    datasets: list
    n_pairs: int
    dropped_per_epoch: int
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = -math.inf
    init_hash: str = ""
    best_hash: str = ""
    stopped_early: bool = False
    wall_time: float = 0.0


class Validator:
    """mAP@10 of text-to-audio retrieval on a fixed validation split."""

    def __init__(self, dataset, k=10):
        if len(dataset) == 0:
            raise InvalidDataset("validation split is empty")
        first = {}
        for i, ex in enumerate(dataset.examples):
            first.setdefault(ex.label, i)
        self.audio_rows = np.array(list(first.values()), dtype=np.int64)
        self.audio_ids = list(first)
        self.labels = [ex.label for ex in dataset.examples]
        self.pooled_audio = dataset.pooled_audio[self.audio_rows]
        self.pooled_text = dataset.pooled_text
        self.k = k

    def __call__(self, adapters):
        audio, _ = adapter_mod.forward_pooled(adapters["audio"], self.pooled_audio)
        text, _ = adapter_mod.forward_pooled(adapters["text"], self.pooled_text)
        index = AudioIndex(self.audio_ids, audio)
        return map_from_ranks(relevant_ranks(index, text, self.labels), self.k)


def _stage_data(stage, datasets):
    missing = [n for n in stage.train_datasets if n not in datasets]
    if missing:
        raise InvalidConfig(f"stage references unknown datasets {missing}")
    parts = [datasets[n] for n in stage.train_datasets]
    data = parts[0] if len(parts) == 1 else union("+".join(stage.train_datasets), parts)
    train = data.split(Split.TRAIN)
    if len(train) < 2:
        raise InvalidDataset(f"train split of {data.name} has {len(train)} pairs, need >= 2")
    return train


def train_epoch(adapters, train, config, adam, rng, loss_fn):
    """One pass over ``train``; returns (mean batch loss, skipped step count)."""
    labels = [ex.label for ex in train.examples]
    losses = []
    skipped = 0
    for idx in sample_epoch_batches(len(train), config.batch_size, rng):
        ya, ca = adapter_mod.forward_pooled(adapters["audio"], train.pooled_audio[idx])
        yt, ct = adapter_mod.forward_pooled(adapters["text"], train.pooled_text[idx])
        batch = BatchEmbeddings(ya, yt, [labels[i] for i in idx])
        out = loss_fn(batch)
        if not math.isfinite(out.value):
            raise NumericalFailure("non-finite training loss")
        losses.append(out.value)
        if out.active_pair_count == 0:
            skipped += 1
            continue
        ga = adapter_mod.backward(adapters["audio"], ca, out.audio_grad)
        gt = adapter_mod.backward(adapters["text"], ct, out.text_grad)
        adam_step(adam, adapters["audio"].params() + adapters["text"].params(), ga.as_list() + gt.as_list())
        adapters["audio"].mark_updated()
        adapters["text"].mark_updated()
    return float(np.mean(losses)), skipped


def _make_loss(config):
    if config.loss == "nt_xent":
        return lambda b: LOSSES["nt_xent"](b, config.mining, config.temperature)
    return lambda b: LOSSES[config.loss](b, config.mining)


def run_training(config, datasets, clean_validation, checkpoint_dir=None, adapters=None):
    """Train all stages in order; returns ``(best adapters, [StageReport, ...])``.

    Every stage restarts Adam and the schedules from scratch. Validation always
    uses the validation split of ``clean_validation``. When a stage stops (or
    runs out of epochs) its weights revert to the best validation epoch, and
    the next stage inherits those. With ``checkpoint_dir`` each stage-best
    checkpoint and a final ``best.xmck`` are written there.
    """
    validate = Validator(clean_validation.split(Split.VALIDATION))
    loss_fn = _make_loss(config)
    cfg_hash = config.config_hash()
    reports = []
    for s, stage in enumerate(config.stages):
        t0 = time.perf_counter()
        train = _stage_data(stage, datasets)
        if adapters is None or not stage.inherit:
            adapters = {
                "audio": init_adapter(train.audio_dim, config.hidden, config.out_dim, seed=[config.seed, s, 0]),
                "text": init_adapter(train.text_dim, config.hidden, config.out_dim, seed=[config.seed, s, 1]),
            }
        report = StageReport(s, stage.kind.value, list(stage.train_datasets), len(train), 0,
                             init_hash=params_hash(adapters))
        report.dropped_per_epoch = 1 if len(train) % config.batch_size == 1 else 0

        sched = PlateauScheduler(config.lr0, config.plateau_patience, config.lr_factor)
        stopper = EarlyStopper(config.stop_patience)
        adam = AdamState(lr=sched.lr)
        best = {k: a.copy() for k, a in adapters.items()}
        for epoch in range(1, config.max_epochs + 1):
            lr = adam.lr
            try:
                loss, skipped = train_epoch(adapters, train, config, adam, epoch_rng(config.seed, s, epoch), loss_fn)
            except NumericalFailure as exc:
                raise NumericalFailure(f"stage {s} ({stage.kind.value}) epoch {epoch}: {exc}") from None
            score = validate(adapters)
            decision = scheduler_epoch_end(sched, stopper, score)
            adam.lr = sched.lr
            if stopper.improved:
                best = {k: a.copy() for k, a in adapters.items()}
            report.epochs.append(EpochRecord(epoch, loss, score, lr, decision.value, skipped))
            log.info("stage %d epoch %d loss %.6f val mAP@10 %.4f lr %.1e %s",
                     s, epoch, loss, score, lr, decision.value)
            if decision is Decision.STOP:
                report.stopped_early = True
                break
        adapters = best
        report.best_epoch = stopper.best_epoch
        report.best_score = stopper.best_score
        report.best_hash = params_hash(adapters)
        report.wall_time = time.perf_counter() - t0
        if checkpoint_dir is not None:
            meta = {"epoch": report.best_epoch, "score": report.best_score, "config_hash": cfg_hash,
                    "stage": s, "kind": stage.kind.value, "init_hash": report.init_hash,
                    "params_hash": report.best_hash}
            save_checkpoint(os.path.join(checkpoint_dir, stage_checkpoint_name(s, stage.kind.value)), adapters, meta)
        reports.append(report)
    if checkpoint_dir is not None:
        last = reports[-1]
        meta = {"epoch": last.best_epoch, "score": last.best_score, "config_hash": cfg_hash,
                "stage": last.stage, "kind": last.kind, "init_hash": last.init_hash, "params_hash": last.best_hash}
        save_checkpoint(os.path.join(checkpoint_dir, "best.xmck"), adapters, meta)
    return adapters, reports


def stage_checkpoint_name(stage, kind):
    return f"stage{stage}_{kind}_best.xmck"


def format_epoch_report(reports):
    """Tab-separated per-epoch log. Floats use repr so reruns compare byte for byte."""
    lines = ["stage\tkind\tepoch\ttrain_loss\tval_map10\tlr\tdecision\tskipped_steps"]
    for r in reports:
        for e in r.epochs:
            lines.append(f"{r.stage}\t{r.kind}\t{e.epoch}\t{e.train_loss!r}\t{e.val_map10!r}\t"
                         f"{e.lr!r}\t{e.decision}\t{e.skipped_steps}")
    return "\n".join(lines) + "\n"
