"""Vision-side unlearning: feature distillation, neuron pruning, Fisher masking,
and the baseline unlearners they are compared against."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from .numerics import NumericError, Rng, ceil_count, log_softmax, softmax_cross_entropy
from .synthbench import QA, VQA, DatasetError, Sample, SplitDatasets
from .toy_mllm import (
    COMPONENTS,
    VISION_LAYERS,
    Batch,
    ToyMLLM,
    apply_update,
    backward,
    clone_frozen,
    forward,
    vision_preactivations,
    visual_embedding,
)

STRATEGIES = (
    "prune_then_finetune",
    "finetune_then_prune",
    "mask_union",
    "mask_intersection",
    "prune_only",
    "finetune_only",
)
BASELINES = ("GA", "GA_Diff", "KL_Min", "NPO", "PruneOnly")
TERMS = ("f_vqa", "f_qa", "r_vqa", "r_qa")
SCOPES = {"vision": ("V", "P"), "full": COMPONENTS}


class ConfigError(ValueError):
    pass


@dataclass
class UnlearnConfig:
    alpha: float = 1.25
    beta: float = 0.3
    d_F: float = 1.0
    prune_ratio: float | None = 0.02
    d_I: float | None = None
    lr: float = 0.01
    epochs: int = 8
    batch_size: int = 16
    retain_batch_size: int | None = None  # defaults to batch_size
    scope: tuple[str, ...] = ("V", "P")
    strategy: str = "prune_then_finetune"
    eps: float = 1e-8
    use_mask: bool = True
    mask_target: str = "update"  # or "forget_term"
    prune_layers: str = "deepest"  # or "all"
    qa_probe: str = "signature"  # or "drop"
    npo_beta: float = 0.1
    max_grad_norm: float | None = 1.0  # global clip on the gated step
    allow_llm_update: bool = False  # full-model ablation rows only

    def __post_init__(self):
        self.scope = tuple(c for c in COMPONENTS if c in set(self.scope))
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if self.beta < 0:
            raise ConfigError("beta must be non-negative")
        if (self.prune_ratio is None) == (self.d_I is None):
            raise ConfigError("set exactly one of prune_ratio / d_I")
        if self.prune_ratio is not None and not 0 <= self.prune_ratio <= 1:
            raise ConfigError("prune_ratio must lie in [0, 1]")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.mask_target not in ("update", "forget_term"):
            raise ConfigError(f"unknown mask_target {self.mask_target!r}")
        if self.prune_layers not in ("deepest", "all"):
            raise ConfigError(f"unknown prune_layers {self.prune_layers!r}")
        if self.qa_probe not in ("signature", "drop"):
            raise ConfigError(f"unknown qa_probe {self.qa_probe!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0 or self.eps < 0:
            raise ConfigError("epochs, batch_size, lr and eps must be non-negative (batch_size >= 1)")
        if not self.npo_beta > 0:
            raise ConfigError("npo_beta must be positive")
        if self.max_grad_norm is not None and not self.max_grad_norm > 0:
            raise ConfigError("max_grad_norm must be positive")


def baseline_defaults(**overrides) -> UnlearnConfig:
    """Baseline hyperparameters. Plain ascent barely moves a confident model at
    lr 0.01, so baselines run hotter; at these values GA reaches roughly the
    forget accuracy of the default vision-side run."""
    return UnlearnConfig(**{"lr": 0.05, "epochs": 10, **overrides})


@dataclass
class SaliencyMask:
    """Boolean update gate keyed by parameter name."""

    masks: dict[str, np.ndarray]

    def count(self) -> int:
        return int(sum(m.sum() for m in self.masks.values()))

    def size(self) -> int:
        return int(sum(m.size for m in self.masks.values()))

    def counts(self) -> dict[str, int]:
        return {k: int(m.sum()) for k, m in self.masks.items()}

    @classmethod
    def full(cls, model: ToyMLLM, components: Iterable[str], value: bool = True) -> "SaliencyMask":
        comps = set(components) - set(model.frozen)
        return cls({n: np.full(p.shape, value and model.component_of(n) in comps)
                    for n, p in model.params.items() if model.component_of(n) in set(components)})


PruneSet = list  # of (vision layer index, neuron index)


# losses -------------------------------------------------------------------


def feature_distance(student: np.ndarray, teacher: np.ndarray) -> float:
    """Batch mean of squared Euclidean distance between feature rows."""
    student = np.atleast_2d(student)
    teacher = np.atleast_2d(teacher)
    if student.shape != teacher.shape:
        raise ValueError(f"feature shapes differ: {student.shape} vs {teacher.shape}")
    return float(((student - teacher) ** 2).sum(axis=1).mean())


def vkd_loss(student: ToyMLLM, teacher: ToyMLLM, batch: Batch) -> float:
    if student.dims != teacher.dims:
        raise ValueError("student and teacher dimensions differ")
    if batch.kind != VQA or len(batch) == 0:
        raise DatasetError("distillation needs a non-empty VQA batch")
    return feature_distance(visual_embedding(student, batch.images),
                            visual_embedding(teacher, batch.images))


def kl_to_reference(logits: np.ndarray, ref_logits: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch mean of KL(p || p_ref) and its gradient w.r.t. ``logits``."""
    logp = log_softmax(logits)
    logq = log_softmax(ref_logits)
    p = np.exp(logp)
    diff = logp - logq
    kl = (p * diff).sum(axis=1)
    grad = p * (diff - kl[:, None])
    return float(kl.mean()), grad / len(logits)


def npo_loss(logits: np.ndarray, ref_logits: np.ndarray, labels: np.ndarray, beta: float
             ) -> tuple[float, np.ndarray]:
    """``(2/beta) * mean log(1 + (p/p_ref)^beta)`` on the labelled answers."""
    n = len(labels)
    rows = np.arange(n)
    logp = log_softmax(logits)
    delta = logp[rows, labels] - log_softmax(ref_logits)[rows, labels]
    loss = (2.0 / beta) * np.logaddexp(0.0, beta * delta).mean()
    weight = 2.0 / (1.0 + np.exp(-beta * delta))  # 2 * sigmoid(beta * delta)
    dlogp = -np.exp(logp)
    dlogp[rows, labels] += 1.0
    return float(loss), weight[:, None] * dlogp / n


@dataclass
class LossTerms:
    value: float
    parts: dict[str, float]
    grad_forget: dict
    grad_rest: dict

    def grad(self) -> dict:
        out = {k: v.copy() for k, v in self.grad_rest.items()}
        for k, v in self.grad_forget.items():
            out[k] = out[k] + v if k in out else v.copy()
        return out


def _require(batches: Mapping[str, Batch], names: Sequence[str]) -> None:
    for name in names:
        if name not in batches or len(batches[name]) == 0:
            raise DatasetError(f"batch {name!r} is empty")


def _objective(model: ToyMLLM, batches: Mapping[str, Batch], alpha: float,
               teacher: ToyMLLM | None = None, beta: float = 0.0) -> LossTerms:
    """-alpha CE(f_vqa) + CE(f_qa) + CE(r_vqa) + CE(r_qa) + beta * VKD(r_vqa)."""
    if not alpha > 0:
        raise ConfigError("alpha must be positive")
    _require(batches, TERMS)
    parts: dict[str, float] = {}
    g_forget: dict = {}
    g_rest: dict = {}
    traces = {}
    for name in TERMS:
        b = batches[name]
        logits, trace = forward(model, b)
        traces[name] = trace
        ce, dlogits = softmax_cross_entropy(logits, b.answers)
        parts[f"ce_{name}"] = ce
        if name == "f_vqa":
            backward(model, trace, -alpha * dlogits, grads=g_forget)
        elif name == "r_vqa" and teacher is not None and beta > 0:
            t_feat = visual_embedding(teacher, b.images)
            s_feat = trace.acts["visual"]
            parts["vkd"] = feature_distance(s_feat, t_feat)
            dvis = beta * 2.0 * (s_feat - t_feat) / len(b)
            backward(model, trace, dlogits, dvisual=dvis, grads=g_rest)
        else:
            backward(model, trace, dlogits, grads=g_rest)
    output = -alpha * parts["ce_f_vqa"] + parts["ce_f_qa"] + parts["ce_r_vqa"] + parts["ce_r_qa"]
    parts["output"] = output
    if teacher is not None and "vkd" not in parts:
        parts["vkd"] = vkd_loss(model, teacher, batches["r_vqa"])
    value = output + (beta * parts["vkd"] if teacher is not None else 0.0)
    parts["total"] = value
    return LossTerms(value, parts, g_forget, g_rest)


def output_loss(model: ToyMLLM, batches: Mapping[str, Batch], alpha: float
                ) -> tuple[float, dict]:
    terms = _objective(model, batches, alpha)
    return terms.value, terms.grad()


def total_loss(model: ToyMLLM, teacher: ToyMLLM, batches: Mapping[str, Batch],
               cfg: UnlearnConfig) -> tuple[float, dict]:
    terms = _objective(model, batches, cfg.alpha, teacher, cfg.beta)
    return terms.value, terms.grad()


# neuron importance and pruning ----------------------------------------------


def activation_importance(model: ToyMLLM, images) -> list[np.ndarray]:
    """Mean absolute pre-activation of every vision-encoder neuron, per layer."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 2 or len(images) == 0:
        raise DatasetError("importance needs a non-empty image batch")
    return [np.abs(z).mean(axis=0) for z in vision_preactivations(model, images)]


def probe_images(samples: Sequence[Sample], entity_images: Mapping[int, np.ndarray]) -> np.ndarray:
    """VQA samples contribute their own view; QA samples the entity's reference image."""
    if not samples:
        raise DatasetError("empty probe split")
    rows = []
    for s in samples:
        if s.kind == VQA:
            rows.append(s.image)
        else:
            if s.entity not in entity_images:
                raise DatasetError(f"no reference image for entity {s.entity}")
            rows.append(entity_images[s.entity])
    return np.asarray(rows, dtype=np.float64)


def importance_ratio(forget_vqa: Sequence[np.ndarray], others: Sequence[Sequence[np.ndarray]],
                     eps: float) -> list[np.ndarray]:
    out = []
    for layer, num in enumerate(forget_vqa):
        den = sum(o[layer] for o in others) if others else np.zeros_like(num)
        out.append(num / (den + eps))
    return out


def unlearn_importance(model: ToyMLLM, data: SplitDatasets, eps: float = 1e-8,
                       qa_probe: str = "signature") -> list[np.ndarray]:
    """Forget-VQA importance over the summed retain-side importances, per layer."""
    refs = data.entity_images()
    num = activation_importance(model, probe_images(data.forget_vqa, refs))
    denom_splits = [data.retain_vqa]
    if qa_probe == "signature":
        denom_splits = [data.forget_qa, data.retain_vqa, data.retain_qa]
    others = [activation_importance(model, probe_images(s, refs)) for s in denom_splits]
    return importance_ratio(num, others, eps)


def eligible_layers(n_layers: int, prune_layers: str) -> list[int]:
    return [n_layers - 1] if prune_layers == "deepest" else list(range(n_layers))


def select_prune(importance: Sequence[np.ndarray], cfg: UnlearnConfig) -> PruneSet:
    layers = eligible_layers(len(importance), cfg.prune_layers)
    cand = [(layer, j) for layer in layers for j in range(len(importance[layer]))]
    scores = np.array([importance[layer][j] for layer, j in cand], dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise NumericError("importance scores must be finite")
    if cfg.d_I is not None:
        return [c for c, s in zip(cand, scores) if s >= cfg.d_I]
    if cfg.prune_ratio > 1:
        raise ConfigError("prune_ratio above 1")
    k = ceil_count(cfg.prune_ratio, len(cand))
    # stable sort on -score keeps ascending candidate order among ties
    order = np.argsort(-scores, kind="stable")[:k]
    return sorted(cand[i] for i in order)


def apply_prune(model: ToyMLLM, prune_set: Iterable[tuple[int, int]]) -> ToyMLLM:
    prune_set = [tuple(p) for p in prune_set]
    widths = [model.params[f"{name}.bias"].size for name in VISION_LAYERS]
    for layer, neuron in prune_set:
        if not (0 <= layer < len(VISION_LAYERS) and 0 <= neuron < widths[layer]):
            raise IndexError(f"no neuron {neuron} in vision layer {layer}")
    out = model.copy()
    out.pruned = model.pruned | frozenset(prune_set)
    for name, dead in out.dead_entries().items():
        out.params[name][dead] = 0.0
    return out


def prune_mask(model: ToyMLLM, prune_set: Iterable[tuple[int, int]],
               components: Sequence[str] = ("V", "P")) -> SaliencyMask:
    """Entries a prune set would zero, expressed as an update mask."""
    probe = ToyMLLM(model.dims, model.params, frozenset(), frozenset(tuple(p) for p in prune_set))
    dead = probe.dead_entries()
    return SaliencyMask({n: dead.get(n, np.zeros(p.shape, dtype=bool)).copy()
                         for n, p in model.params.items()
                         if model.component_of(n) in set(components)})


# Fisher saliency ------------------------------------------------------------


def _per_sample_sq_grads(model: ToyMLLM, batch: Batch, components: set[str]) -> dict:
    """Sum over samples of squared per-sample CE gradients (not yet averaged)."""
    logits, trace = forward(model, batch)
    n = len(batch)
    _, dlogits = softmax_cross_entropy(logits, batch.answers)
    dlogits = dlogits * n  # per-sample, not batch-mean
    a = trace.acts
    out: dict = {}

    def layer(name, x, up, relu):
        lay = model.layer(name)
        z = x @ lay.weight.T + lay.bias
        delta = up * (z > 0) if relu else up
        if model.component_of(name) in components:
            out[f"{name}.weight"] = _kernels.fisher_accumulate(delta, x)
            out[f"{name}.bias"] = (delta * delta).sum(axis=0)
        return delta @ lay.weight

    dg2 = layer("W.out", a["g2"], dlogits, False)
    dg1 = layer("W.fuse2", a["g1"], dg2, True)
    dcat = layer("W.fuse1", a["cat"], dg1, True)
    dname, dattr, dvis = np.split(dcat, 3, axis=1)
    if "W" in components:
        d = model.dims
        gname = np.zeros_like(model.params["W.name_emb.table"])
        rows = np.full(n, d.n_entities) if batch.kind == VQA else batch.entities
        np.add.at(gname, rows, dname * dname)
        out["W.name_emb.table"] = gname
        gattr = np.zeros_like(model.params["W.attr_emb.table"])
        np.add.at(gattr, batch.attrs, dattr * dattr)
        out["W.attr_emb.table"] = gattr
        out["W.noimg.vector"] = ((dvis * dvis).sum(axis=0) if batch.kind == QA
                                 else np.zeros(d.d_model))
    if batch.kind == VQA:
        dh2 = layer("P.proj", a["h2"], dvis, False)
        dh1 = layer("V.l2", a["h1"], dh2, True)
        layer("V.l1", a["images"], dh1, True)
    return out


def fisher_diag(model: ToyMLLM, batches: Sequence[Batch],
                components: Sequence[str] = ("V", "P")) -> dict[str, np.ndarray]:
    """Diagonal Fisher scores: mean squared per-sample gradient, summed over
    the given batches (one batch per loss term of the selected objective)."""
    comps = set(components)
    scores = {n: np.zeros_like(p) for n, p in model.params.items() if model.component_of(n) in comps}
    if not batches:
        raise DatasetError("fisher_diag needs at least one batch")
    for b in batches:
        if len(b) == 0:
            raise DatasetError("empty batch in fisher_diag")
        sq = _per_sample_sq_grads(model, b, comps)
        for name in scores:
            if name in sq:
                scores[name] += sq[name] / len(b)
    return scores


def fisher_ratio_mask(forget_scores: Mapping[str, np.ndarray], retain_scores: Mapping[str, np.ndarray],
                      d_F: float, eps: float) -> SaliencyMask:
    return SaliencyMask({n: forget_scores[n] / (retain_scores[n] + eps) >= d_F for n in forget_scores})


def fisher_mask(model: ToyMLLM, batches: Mapping[str, Batch], d_F: float, eps: float = 1e-8,
                components: Sequence[str] = ("V", "P")) -> SaliencyMask:
    forget = fisher_diag(model, [batches["f_vqa"]], components)
    retain = fisher_diag(model, [batches[k] for k in ("f_qa", "r_vqa", "r_qa")], components)
    mask = fisher_ratio_mask(forget, retain, d_F, eps)
    for name in mask.masks:
        if model.component_of(name) in model.frozen:
            mask.masks[name][...] = False
    return mask


def mask_combine(a: SaliencyMask, b: SaliencyMask, op: str) -> SaliencyMask:
    if a.masks.keys() != b.masks.keys() or any(a.masks[k].shape != b.masks[k].shape for k in a.masks):
        raise ValueError("masks cover different parameter registries")
    if op == "union":
        return SaliencyMask({k: a.masks[k] | b.masks[k] for k in a.masks})
    if op == "intersection":
        return SaliencyMask({k: a.masks[k] & b.masks[k] for k in a.masks})
    raise ValueError(f"unknown mask operation {op!r}")


# pipelines ------------------------------------------------------------------


def full_batches(data: SplitDatasets) -> dict[str, Batch]:
    return {
        "f_vqa": Batch.from_samples(data.forget_vqa),
        "f_qa": Batch.from_samples(data.forget_qa),
        "r_vqa": Batch.from_samples(data.retain_vqa),
        "r_qa": Batch.from_samples(data.retain_qa),
    }


def _minibatches(full: Mapping[str, Batch], batch_size: int, rng: Rng,
                 retain_batch_size: int | None = None):
    """One epoch: the forget-VQA set is swept once; the other terms are drawn
    afresh (without replacement) for every step."""
    n_forget = len(full["f_vqa"])
    order = rng.permutation(n_forget)
    for start in range(0, n_forget, batch_size):
        step = {"f_vqa": full["f_vqa"].take(order[start:start + batch_size])}
        for name in ("f_qa", "r_vqa", "r_qa"):
            size = min(retain_batch_size or batch_size, len(full[name]))
            step[name] = full[name].take(rng.permutation(len(full[name]))[:size])
        yield step


@dataclass
class Audit:
    method: str
    strategy: str | None
    scope: list[str]
    prune_set: list[list[int]] = field(default_factory=list)
    mask_counts: dict[str, int] = field(default_factory=dict)
    mask_total: int | None = None
    epochs: list[dict[str, float]] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _gate(model: ToyMLLM, mask: SaliencyMask | None, scope) -> dict | None:
    if mask is None:
        return None
    gate = dict(mask.masks)
    for name, p in model.params.items():
        if model.component_of(name) in scope and name not in gate:
            gate[name] = np.ones(p.shape, dtype=bool)
    return gate


def _finetune(model: ToyMLLM, teacher: ToyMLLM, full: Mapping[str, Batch], cfg: UnlearnConfig,
              mask: SaliencyMask | None, rng: Rng, audit: Audit) -> None:
    gate = _gate(model, mask, cfg.scope)
    for _ in range(cfg.epochs):
        sums: dict[str, float] = {}
        steps = 0
        for step in _minibatches(full, cfg.batch_size, rng, cfg.retain_batch_size):
            terms = _objective(model, step, cfg.alpha, teacher, cfg.beta)
            if not np.isfinite(terms.value):
                raise NumericError("non-finite unlearning loss")
            if gate is not None and cfg.mask_target == "forget_term":
                grads = {k: v.copy() for k, v in terms.grad_rest.items()}
                for k, g in terms.grad_forget.items():
                    gated = np.where(gate[k], g, 0.0) if k in gate else g
                    grads[k] = grads[k] + gated if k in grads else gated
                apply_update(model, grads, cfg.lr, None, cfg.scope, cfg.max_grad_norm)
            else:
                apply_update(model, terms.grad(), cfg.lr, gate, cfg.scope, cfg.max_grad_norm)
            for k, v in terms.parts.items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
        audit.epochs.append({k: v / steps for k, v in sums.items()})


def _freeze_outside(model: ToyMLLM, scope: Sequence[str]) -> ToyMLLM:
    return clone_frozen(model, set(model.frozen) | (set(COMPONENTS) - set(scope)))


def unlearn_vkd(vanilla: ToyMLLM, data: SplitDatasets, cfg: UnlearnConfig | None = None,
                rng: Rng | None = None) -> tuple[ToyMLLM, Audit]:
    """Prune / mask / distil pipeline on the scoped components of ``vanilla``.

    Returns the unlearned model (components outside ``cfg.scope`` frozen) and an
    audit of the prune set, mask sizes and per-epoch loss terms.
    """
    cfg = cfg or UnlearnConfig()
    rng = rng or Rng(0)
    if "W" in cfg.scope and not cfg.allow_llm_update:
        raise ConfigError("the language head must stay frozen; set allow_llm_update for ablations")
    teacher = clone_frozen(vanilla, COMPONENTS)
    model = _freeze_outside(vanilla, cfg.scope)
    full = full_batches(data)
    mask_comps = [c for c in cfg.scope]
    audit = Audit("vkd", cfg.strategy, list(cfg.scope), config=asdict(cfg))

    def saliency(m: ToyMLLM) -> SaliencyMask:
        return fisher_mask(m, full, cfg.d_F, cfg.eps, mask_comps)

    def prune_set_of(m: ToyMLLM) -> PruneSet:
        return select_prune(unlearn_importance(m, data, cfg.eps, cfg.qa_probe), cfg)

    s = cfg.strategy
    mask: SaliencyMask | None = None
    if s in ("prune_then_finetune", "prune_only"):
        nP = prune_set_of(model)
        model = apply_prune(model, nP)
        audit.prune_set = [list(p) for p in nP]
        if s == "prune_then_finetune" and cfg.use_mask:
            mask = saliency(model)
    elif s in ("mask_union", "mask_intersection"):
        nP = prune_set_of(model)
        audit.prune_set = [list(p) for p in nP]
        op = "union" if s == "mask_union" else "intersection"
        mask = mask_combine(prune_mask(model, nP, mask_comps), saliency(model), op)
    elif cfg.use_mask:  # finetune_only, finetune_then_prune
        mask = saliency(model)

    if mask is None and s != "prune_only":
        mask = SaliencyMask.full(model, mask_comps)
    if mask is not None:
        audit.mask_counts = mask.counts()
        audit.mask_total = mask.count()
    if s != "prune_only":
        _finetune(model, teacher, full, cfg, mask, rng, audit)
    if s == "finetune_then_prune":
        nP = prune_set_of(model)
        model = apply_prune(model, nP)
        audit.prune_set = [list(p) for p in nP]
    return model, audit


def _baseline_objective(method: str, model: ToyMLLM, ref: ToyMLLM, step: Mapping[str, Batch],
                        npo_beta: float) -> tuple[float, dict, dict]:
    grads: dict = {}
    parts: dict[str, float] = {}

    def ce(name, sign):
        b = step[name]
        logits, trace = forward(model, b)
        loss, dl = softmax_cross_entropy(logits, b.answers)
        backward(model, trace, sign * dl, grads=grads)
        parts[f"ce_{name}"] = loss
        return sign * loss

    if method == "GA":
        total = ce("f_vqa", -1.0)
    elif method == "GA_Diff":
        total = ce("f_vqa", -1.0) + ce("r_vqa", 1.0) + ce("r_qa", 1.0)
    elif method == "KL_Min":
        total = ce("f_vqa", -1.0)
        n = len(step["r_vqa"]) + len(step["r_qa"])
        kl_total = 0.0
        for name in ("r_vqa", "r_qa"):
            b = step[name]
            logits, trace = forward(model, b)
            ref_logits, _ = forward(ref, b)
            kl, dl = kl_to_reference(logits, ref_logits)
            share = len(b) / n
            kl_total += share * kl
            backward(model, trace, share * dl, grads=grads)
        parts["kl_retain"] = kl_total
        total += kl_total
    elif method == "NPO":
        b = step["f_vqa"]
        logits, trace = forward(model, b)
        ref_logits, _ = forward(ref, b)
        total, dl = npo_loss(logits, ref_logits, b.answers, npo_beta)
        backward(model, trace, dl, grads=grads)
        parts["npo"] = total
    else:
        raise ConfigError(f"unknown baseline {method!r}")
    parts["total"] = total
    return total, grads, parts


def unlearn_baseline(vanilla: ToyMLLM, data: SplitDatasets, method: str,
                     scope: str | Sequence[str] = "full", hyper: UnlearnConfig | None = None,
                     rng: Rng | None = None) -> tuple[ToyMLLM, Audit]:
    if method not in BASELINES:
        raise ConfigError(f"unknown baseline {method!r}; expected one of {BASELINES}")
    if isinstance(scope, str) and scope not in SCOPES:
        raise ConfigError(f"unknown scope {scope!r}; expected one of {sorted(SCOPES)}")
    comps = SCOPES[scope] if isinstance(scope, str) else tuple(scope)
    if isinstance(scope, str) and scope not in SCOPES:
        raise ConfigError(f"unknown scope {scope!r}")
    hyper = hyper or baseline_defaults()
    rng = rng or Rng(0)
    ref = clone_frozen(vanilla, COMPONENTS)
    model = _freeze_outside(vanilla, comps)
    audit = Audit(method, None, list(comps), config=asdict(hyper))
    if method == "PruneOnly":
        nP = select_prune(unlearn_importance(model, data, hyper.eps, hyper.qa_probe), hyper)
        audit.prune_set = [list(p) for p in nP]
        return apply_prune(model, nP), audit
    full = full_batches(data)
    for _ in range(hyper.epochs):
        sums: dict[str, float] = {}
        steps = 0
        for step in _minibatches(full, hyper.batch_size, rng, hyper.retain_batch_size):
            total, grads, parts = _baseline_objective(method, model, ref, step, hyper.npo_beta)
            if not math.isfinite(total):
                raise NumericError(f"non-finite {method} loss")
            apply_update(model, grads, hyper.lr, None, comps, hyper.max_grad_norm)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
        audit.epochs.append({k: v / steps for k, v in sums.items()})
    return model, audit
