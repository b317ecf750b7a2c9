"""Accuracy reports, ROUGE-L, relearning attacks and the accuracy gap."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .numerics import NumericError, Rng, softmax_cross_entropy
from .synthbench import SPLITS, DatasetError, Sample, SplitDatasets, subsample
from .toy_mllm import COMPONENTS, Batch, ToyMLLM, apply_update, backward, clone_frozen, forward

REPORT_COLUMNS = ("label", "seed") + SPLITS


def accuracy(model: ToyMLLM, samples: Sequence[Sample]) -> float | None:
    """Fraction of samples whose argmax answer is correct (ties -> lowest id)."""
    if not samples:
        return None
    batch = Batch.from_samples(samples)
    logits, _ = forward(model, batch)
    return float((np.argmax(logits, axis=1) == batch.answers).mean())


@dataclass
class RunReport:
    accuracies: dict[str, float | None]
    wall_seconds: float = 0.0
    config: dict = field(default_factory=dict)
    label: str = ""
    seed: int | None = None

    def __post_init__(self):
        for split, acc in self.accuracies.items():
            if acc is not None and not 0.0 <= acc <= 1.0:
                raise ValueError(f"accuracy for {split} outside [0, 1]")

    def to_dict(self, timing: bool = False) -> dict:
        out = {"label": self.label, "seed": self.seed,
               "accuracies": {s: self.accuracies.get(s) for s in SPLITS},
               "config": self.config}
        if timing:
            out["wall_seconds"] = self.wall_seconds
        return out

    def csv_row(self) -> list:
        return [self.label, self.seed] + [format_cell(self.accuracies.get(s)) for s in SPLITS]


def format_cell(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def evaluate(model: ToyMLLM, data: SplitDatasets, *, label: str = "", seed: int | None = None,
             config: dict | None = None) -> RunReport:
    start = time.perf_counter()
    accs = {name: accuracy(model, samples) for name, samples in data.items()}
    return RunReport(accs, time.perf_counter() - start, dict(config or {}), label, seed)


def rouge_l(reference: Sequence, generated: Sequence) -> float:
    """LCS-based F-measure: recall over the reference, precision over the output."""
    if len(reference) == 0 or len(generated) == 0:
        return 0.0
    vocab: dict = {}
    ref = [vocab.setdefault(t, len(vocab)) for t in reference]
    gen = [vocab.setdefault(t, len(vocab)) for t in generated]
    lcs = _kernels.lcs_length(ref, gen)
    if lcs == 0:
        return 0.0
    recall = lcs / len(reference)
    precision = lcs / len(generated)
    return 2 * recall * precision / (recall + precision)


@dataclass
class AttackCurve:
    pre_attack: float
    per_epoch: list[float]
    fraction: float | None = None
    scope: list[str] = field(default_factory=list)
    n_attack_samples: int = 0

    @property
    def accuracy_gap(self):
        return accuracy_gap(self)

    def to_dict(self) -> dict:
        return {"pre_attack": self.pre_attack, "per_epoch": list(self.per_epoch),
                "accuracy_gap": self.accuracy_gap, "fraction": self.fraction,
                "scope": list(self.scope), "n_attack_samples": self.n_attack_samples}


def accuracy_gap(curve: AttackCurve, magnitude: bool = False):
    """Final-epoch accuracy minus pre-attack accuracy.

    ``magnitude=True`` returns the absolute difference instead. Plain
    subtraction, so ``Decimal`` inputs give exact decimal results.
    """
    if not curve.per_epoch:
        raise ValueError("attack curve has no epochs")
    gap = curve.per_epoch[-1] - curve.pre_attack
    return abs(gap) if magnitude else gap


def relearn_attack(unlearned: ToyMLLM, forget_vqa: Sequence[Sample], fraction: float, epochs: int,
                   lr: float, scope: Sequence[str], rng: Rng, batch_size: int = 8) -> AttackCurve:
    """Fine-tune on a subsample of the forget set and track full forget-set accuracy."""
    if epochs < 1:
        raise ValueError("an attack needs at least one epoch")
    if not forget_vqa:
        raise DatasetError("empty forget set")
    attack_set = subsample(list(forget_vqa), fraction, rng)
    scope = tuple(c for c in COMPONENTS if c in set(scope))
    model = clone_frozen(unlearned, set(COMPONENTS) - set(scope))
    train = Batch.from_samples(attack_set)
    pre = accuracy(model, forget_vqa)
    curve = []
    for _ in range(epochs):
        order = rng.permutation(len(train))
        for start in range(0, len(train), batch_size):
            b = train.take(order[start:start + batch_size])
            logits, trace = forward(model, b)
            loss, dl = softmax_cross_entropy(logits, b.answers)
            if not np.isfinite(loss):
                raise NumericError("non-finite loss during relearning")
            apply_update(model, backward(model, trace, dl), lr, None, scope)
        curve.append(accuracy(model, forget_vqa))
    return AttackCurve(pre, curve, fraction, list(scope), len(attack_set))


def report_csv(reports: Sequence[RunReport], config: dict | None = None) -> str:
    buf = io.StringIO()
    if config is not None:
        buf.write("# config=" + json.dumps(config, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in reports:
        writer.writerow(r.csv_row())
    return buf.getvalue()


def attack_columns(epochs: int) -> list[str]:
    return (["method", "fraction", "seed", "scope", "pre_attack"]
            + [f"epoch{i}" for i in range(1, epochs + 1)] + ["accuracy_gap"])


def attack_csv(rows: Sequence[tuple[str, int, AttackCurve]], epochs: int,
               config: dict | None = None) -> str:
    buf = io.StringIO()
    if config is not None:
        buf.write("# config=" + json.dumps(config, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(attack_columns(epochs))
    for method, seed, c in rows:
        writer.writerow([method, repr(c.fraction), seed, "+".join(c.scope), repr(c.pre_attack)]
                        + [repr(v) for v in c.per_epoch] + [repr(c.accuracy_gap)])
    return buf.getvalue()
