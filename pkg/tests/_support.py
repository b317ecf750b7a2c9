"""Shared builders for the test-suite: tiny models, random loss instances and
cached vanilla pipelines (training is the slow part, so it runs once per seed)."""

from __future__ import annotations

import functools

import numpy as np

from vkdlab import synthbench as sb
from vkdlab import toy_mllm as tm
from vkdlab.numerics import Rng
from vkdlab.synthbench import QA, VQA
from vkdlab.toy_mllm import Batch, Dims, ToyMLLM

TINY = Dims(image_dim=5, h1=6, h2=5, d_model=4, fusion=6, n_answers=3, n_entities=4, n_attributes=2)

VANILLA_EPOCHS = 150
VANILLA_LR = 0.05
ACCEPTANCE_SEEDS = tuple(range(10))


def random_batch(rng: Rng, dims: Dims, kind: str, n: int) -> Batch:
    entities = rng.integers(dims.n_entities, n)
    attrs = rng.integers(dims.n_attributes, n)
    answers = rng.integers(dims.n_answers, n)
    images = rng.normal((n, dims.image_dim)) if kind == VQA else None
    return Batch(kind, entities, attrs, answers, images)


def random_batches(rng: Rng, dims: Dims = TINY) -> dict[str, Batch]:
    return {
        "f_vqa": random_batch(rng, dims, VQA, 3),
        "f_qa": random_batch(rng, dims, QA, 2),
        "r_vqa": random_batch(rng, dims, VQA, 3),
        "r_qa": random_batch(rng, dims, QA, 2),
    }


def perturbed(model: ToyMLLM, rng: Rng, scale: float, components=("V", "P")) -> ToyMLLM:
    out = model.copy()
    for name in out.names(components):
        out.params[name] = out.params[name] + scale * rng.normal(out.params[name].shape)
    return out


def live_margin(model: ToyMLLM, batches) -> float:
    """Smallest |pre-activation| over every live ReLU unit the batches reach.

    Finite differences straddle the ReLU kink when this is below the step size;
    pruned units sit exactly on it by construction and are excluded.
    """
    pruned = set(model.pruned)
    margin = np.inf
    for b in batches.values():
        _, trace = tm.forward(model, b)
        a = trace.acts
        zs = []
        if b.kind == VQA:
            for li, key in enumerate(("z1", "z2")):
                live = [j for j in range(a[key].shape[1]) if (li, j) not in pruned]
                zs.append(a[key][:, live])
        for name, x in (("W.fuse1", a["cat"]), ("W.fuse2", a["g1"])):
            lay = model.layer(name)
            zs.append(x @ lay.weight.T + lay.bias)
        margin = min(margin, min(float(np.abs(z).min()) for z in zs if z.size))
    return margin


@functools.lru_cache(maxsize=None)
def vanilla_pipeline(seed: int) -> tuple[sb.SplitDatasets, ToyMLLM]:
    """Dataset and vanilla model for ``seed`` at the library defaults."""
    data = sb.generate(seed)
    root = Rng(seed)
    base = ToyMLLM.init(Dims(), root.spawn(1))
    model, _ = tm.train_vanilla(base, data.all_samples(), VANILLA_EPOCHS, VANILLA_LR, root.spawn(2))
    return data, model


def unlearn_rng(seed: int) -> Rng:
    return Rng(seed).spawn(3)


def attack_rng(seed: int) -> Rng:
    return Rng(seed).spawn(4)
