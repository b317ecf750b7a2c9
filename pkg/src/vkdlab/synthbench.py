"""Synthetic entity benchmark with forget / retain / real-world splits.

Each entity owns a Gaussian visual signature and one closed-vocabulary answer
per attribute. VQA samples pair a noisy view of the signature with an
attribute question; QA samples ask the same question by entity name only.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Rng, ceil_count

VQA = "vqa"
QA = "qa"
SPLITS = ("forget_vqa", "forget_qa", "retain_vqa", "retain_qa", "realworld_vqa", "realworld_qa")

_REALWORLD_STREAM = 0x5EA1_30B1D
_MAX_REJECTIONS = 10_000


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Entity:
    name_id: int
    signature: tuple[float, ...]
    attributes: tuple[tuple[int, int], ...]  # (attribute_id, answer_id)


@dataclass(frozen=True)
class Sample:
    kind: str
    entity: int
    attr: int
    answer: int
    image: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in (VQA, QA):
            raise DatasetError(f"unknown sample kind {self.kind!r}")
        if (self.kind == VQA) != (self.image is not None):
            raise DatasetError("VQA samples need an image and QA samples must not have one")


@dataclass
class SplitDatasets:
    forget_vqa: list[Sample] = field(default_factory=list)
    forget_qa: list[Sample] = field(default_factory=list)
    retain_vqa: list[Sample] = field(default_factory=list)
    retain_qa: list[Sample] = field(default_factory=list)
    realworld_vqa: list[Sample] = field(default_factory=list)
    realworld_qa: list[Sample] = field(default_factory=list)
    entities: list[Entity] = field(default_factory=list, compare=False, repr=False)

    def split(self, name: str) -> list[Sample]:
        if name not in SPLITS:
            raise KeyError(name)
        return getattr(self, name)

    def items(self):
        return [(name, getattr(self, name)) for name in SPLITS]

    def all_samples(self) -> list[Sample]:
        return [s for _, samples in self.items() for s in samples]

    def entity_ids(self, prefix: str) -> set[int]:
        return {s.entity for s in self.split(f"{prefix}_vqa") + self.split(f"{prefix}_qa")}

    def entity_images(self) -> dict[int, np.ndarray]:
        """Mean VQA view per entity; equals the signature when views are noise-free."""
        sums: dict[int, np.ndarray] = {}
        counts: dict[int, int] = {}
        seen: set[tuple[int, tuple[float, ...]]] = set()
        for s in self.all_samples():
            if s.kind != VQA or (s.entity, s.image) in seen:
                continue
            seen.add((s.entity, s.image))
            img = np.asarray(s.image)
            sums[s.entity] = sums.get(s.entity, 0.0) + img
            counts[s.entity] = counts.get(s.entity, 0) + 1
        return {e: sums[e] / counts[e] for e in sorted(sums)}

    def dims(self) -> dict[str, int]:
        samples = self.all_samples()
        if not samples:
            raise DatasetError("dataset is empty")
        image_dim = next((len(s.image) for s in samples if s.image is not None), 0)
        return {
            "image_dim": image_dim,
            "n_entities": max(s.entity for s in samples) + 1,
            "n_attributes": max(s.attr for s in samples) + 1,
        }


def _draw_signatures(rng: Rng, count: int, image_dim: int, min_dist: float,
                     existing: list[np.ndarray]) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    attempts = 0
    while len(out) < count:
        cand = rng.normal(image_dim)
        attempts += 1
        if all(np.linalg.norm(cand - other) >= min_dist for other in existing + out):
            out.append(cand)
            attempts = 0
        elif attempts >= _MAX_REJECTIONS:
            raise DatasetError(
                f"could not place signature {len(out)} at separation {min_dist:.3g} "
                f"after {_MAX_REJECTIONS} attempts"
            )
    return out


def _entity_samples(rng: Rng, ent: Entity, views: int, noise_sigma: float):
    sig = np.asarray(ent.signature)
    vqa = []
    for _ in range(views):
        img = sig + noise_sigma * rng.normal(sig.size) if noise_sigma > 0 else sig.copy()
        img_t = tuple(float(v) for v in img)
        for attr, ans in ent.attributes:
            vqa.append(Sample(VQA, ent.name_id, attr, ans, img_t))
    qa = [Sample(QA, ent.name_id, attr, ans) for attr, ans in ent.attributes]
    return vqa, qa


def generate(seed: int, n_entities: int = 40, n_attributes: int = 4, forget_ratio: float = 0.05,
             views_per_entity: int = 6, noise_sigma: float = 0.1, *, image_dim: int = 32,
             n_answers: int = 8, n_realworld: int = 10) -> SplitDatasets:
    """Build a deterministic benchmark.

    Fictitious entities take ids ``0..n_entities-1``; real-world entities follow
    and are drawn from a separate stream so they never depend on the fictitious
    draw count.
    """
    if not 0 < forget_ratio < 1:
        raise DatasetError("forget_ratio must lie strictly between 0 and 1")
    if noise_sigma < 0:
        raise DatasetError("noise_sigma must be non-negative")
    if n_entities < 2 or n_attributes < 1 or views_per_entity < 1 or n_realworld < 0:
        raise DatasetError("need at least two entities, one attribute and one view")
    n_forget = ceil_count(forget_ratio, n_entities)
    if n_forget >= n_entities:
        raise DatasetError("forget split would leave no retain entities")

    min_dist = 4.0 * noise_sigma * np.sqrt(image_dim)
    rng = Rng(seed)
    rw_rng = Rng(seed).spawn(_REALWORLD_STREAM)

    def make(stream: Rng, ids: range, existing: list[np.ndarray]) -> list[Entity]:
        sigs = _draw_signatures(stream, len(ids), image_dim, min_dist, existing)
        existing.extend(sigs)
        answers = stream.integers(n_answers, (len(ids), n_attributes))
        return [
            Entity(i, tuple(float(v) for v in sig),
                   tuple((a, int(answers[k, a])) for a in range(n_attributes)))
            for k, (i, sig) in enumerate(zip(ids, sigs))
        ]

    placed: list[np.ndarray] = []
    fictitious = make(rng, range(n_entities), placed)
    forget_ids = set(int(i) for i in rng.permutation(n_entities)[:n_forget])
    realworld = make(rw_rng, range(n_entities, n_entities + n_realworld), placed)

    data = SplitDatasets(entities=fictitious + realworld)
    for ent in fictitious:
        prefix = "forget" if ent.name_id in forget_ids else "retain"
        vqa, qa = _entity_samples(rng, ent, views_per_entity, noise_sigma)
        data.split(f"{prefix}_vqa").extend(vqa)
        data.split(f"{prefix}_qa").extend(qa)
    for ent in realworld:
        vqa, qa = _entity_samples(rw_rng, ent, views_per_entity, noise_sigma)
        data.realworld_vqa.extend(vqa)
        data.realworld_qa.extend(qa)
    return data


def _sample_record(split: str, s: Sample) -> str:
    return json.dumps({
        "split": split,
        "kind": s.kind,
        "entity": s.entity,
        "attr": s.attr,
        "answer": s.answer,
        "image": None if s.image is None else list(s.image),
    })


def save(data: SplitDatasets, path, meta: dict | None = None) -> None:
    """Write JSON Lines. An optional leading ``{"meta": ...}`` record carries
    provenance (config, seed) and is skipped by ``load``."""
    path = Path(path)
    lines = [] if meta is None else [json.dumps({"meta": meta}, sort_keys=True)]
    lines += [_sample_record(name, s) for name, samples in data.items() for s in samples]
    text = "".join(line + "\n" for line in lines)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def load(path) -> SplitDatasets:
    data = SplitDatasets()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if lineno == 1 and isinstance(rec, dict) and set(rec) == {"meta"}:
                    continue
                image = rec["image"]
                sample = Sample(rec["kind"], int(rec["entity"]), int(rec["attr"]), int(rec["answer"]),
                                None if image is None else tuple(float(v) for v in image))
                data.split(rec["split"]).append(sample)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed sample line ({exc})") from exc
    return data


def subsample(split: list[Sample], fraction: float, rng: Rng) -> list[Sample]:
    """Uniform draw without replacement of ``ceil(fraction * n)`` samples."""
    if not split:
        raise DatasetError("cannot subsample an empty split")
    if not 0 < fraction <= 1:
        raise DatasetError("fraction must be in (0, 1]")
    k = ceil_count(fraction, len(split))
    order = rng.permutation(len(split))[:k]
    return [split[i] for i in order]
