"""Cascaded toy multimodal model: vision encoder (V) -> projector (P) -> language head (W).

Parameters live in one flat registry keyed ``"<component>.<layer>.<tensor>"``.
The component prefix decides freezing; QA inputs never touch V or P.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numerics import (
    IDENTITY,
    RELU,
    MlpLayer,
    NumericError,
    Rng,
    ShapeError,
    mlp_backward,
    mlp_forward,
    softmax_cross_entropy,
)
from .synthbench import QA, VQA, DatasetError, Sample

COMPONENTS = ("V", "P", "W")
VISION_LAYERS = ("V.l1", "V.l2")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Dims:
    image_dim: int = 32
    h1: int = 64
    h2: int = 64
    d_model: int = 32
    fusion: int = 64
    n_answers: int = 8
    n_entities: int = 50
    n_attributes: int = 4


@dataclass
class Batch:
    """Array view of same-kind samples."""

    kind: str
    entities: np.ndarray
    attrs: np.ndarray
    answers: np.ndarray
    images: np.ndarray | None = None

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Batch":
        if not samples:
            raise DatasetError("empty batch")
        kinds = {s.kind for s in samples}
        if len(kinds) != 1:
            raise DatasetError("a batch must hold a single sample kind")
        kind = kinds.pop()
        images = np.array([s.image for s in samples], dtype=np.float64) if kind == VQA else None
        return cls(
            kind,
            np.array([s.entity for s in samples], dtype=np.int64),
            np.array([s.attr for s in samples], dtype=np.int64),
            np.array([s.answer for s in samples], dtype=np.int64),
            images,
        )

    def __len__(self) -> int:
        return len(self.answers)

    def take(self, idx) -> "Batch":
        return Batch(self.kind, self.entities[idx], self.attrs[idx], self.answers[idx],
                     None if self.images is None else self.images[idx])


def split_by_kind(samples: Sequence[Sample]) -> list[Batch]:
    out = []
    for kind in (VQA, QA):
        part = [s for s in samples if s.kind == kind]
        if part:
            out.append(Batch.from_samples(part))
    return out


@dataclass
class ToyMLLM:
    dims: Dims
    params: dict[str, np.ndarray]
    frozen: frozenset[str] = frozenset()
    pruned: frozenset[tuple[int, int]] = frozenset()  # (vision layer index, neuron)

    @classmethod
    def init(cls, dims: Dims, rng: Rng) -> "ToyMLLM":
        d = dims
        layers = {
            "V.l1": MlpLayer.init(d.image_dim, d.h1, rng, RELU),
            "V.l2": MlpLayer.init(d.h1, d.h2, rng, RELU),
            "P.proj": MlpLayer.init(d.h2, d.d_model, rng, IDENTITY),
        }
        params: dict[str, np.ndarray] = {}
        for name, layer in layers.items():
            params[f"{name}.weight"] = layer.weight
            params[f"{name}.bias"] = layer.bias
        emb_scale = 1.0 / np.sqrt(d.d_model)
        params["W.name_emb.table"] = rng.normal((d.n_entities + 1, d.d_model)) * emb_scale
        params["W.attr_emb.table"] = rng.normal((d.n_attributes, d.d_model)) * emb_scale
        params["W.noimg.vector"] = rng.normal(d.d_model) * emb_scale
        for name, layer in {
            "W.fuse1": MlpLayer.init(3 * d.d_model, d.fusion, rng, RELU),
            "W.fuse2": MlpLayer.init(d.fusion, d.fusion, rng, RELU),
            "W.out": MlpLayer.init(d.fusion, d.n_answers, rng, IDENTITY),
        }.items():
            params[f"{name}.weight"] = layer.weight
            params[f"{name}.bias"] = layer.bias
        return cls(d, params)

    # registry -----------------------------------------------------------

    @staticmethod
    def component_of(name: str) -> str:
        return name.split(".", 1)[0]

    def names(self, components: Iterable[str] = COMPONENTS) -> list[str]:
        comps = set(components)
        return [n for n in self.params if self.component_of(n) in comps]

    def count(self, components: Iterable[str] = COMPONENTS) -> int:
        return sum(self.params[n].size for n in self.names(components))

    def flat(self, components: Iterable[str] = COMPONENTS) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in self.names(components)])

    def set_flat(self, vec: np.ndarray, components: Iterable[str] = COMPONENTS) -> None:
        pos = 0
        for n in self.names(components):
            size = self.params[n].size
            self.params[n][...] = vec[pos:pos + size].reshape(self.params[n].shape)
            pos += size

    def layer(self, name: str) -> MlpLayer:
        act = RELU if name in ("V.l1", "V.l2", "W.fuse1", "W.fuse2") else IDENTITY
        return MlpLayer(self.params[f"{name}.weight"], self.params[f"{name}.bias"], act)

    def copy(self) -> "ToyMLLM":
        return ToyMLLM(self.dims, {k: v.copy() for k, v in self.params.items()},
                       self.frozen, self.pruned)

    def dead_entries(self) -> dict[str, np.ndarray]:
        """Boolean masks of entries zeroed by pruning; never updated afterwards."""
        dead = {}
        for layer_idx, neuron in self.pruned:
            lname = VISION_LAYERS[layer_idx]
            nxt = VISION_LAYERS[layer_idx + 1] if layer_idx + 1 < len(VISION_LAYERS) else "P.proj"
            for key, sel in (
                (f"{lname}.weight", (neuron, slice(None))),
                (f"{lname}.bias", (neuron,)),
                (f"{nxt}.weight", (slice(None), neuron)),
            ):
                m = dead.setdefault(key, np.zeros(self.params[key].shape, dtype=bool))
                m[sel] = True
        return dead


def clone_frozen(model: ToyMLLM, freeze: Iterable[str]) -> ToyMLLM:
    freeze = frozenset(freeze)
    if not freeze <= set(COMPONENTS):
        raise ModelError(f"unknown components in {sorted(freeze)}")
    out = model.copy()
    out.frozen = freeze
    return out


# forward / backward ----------------------------------------------------------


@dataclass
class Trace:
    batch: Batch
    acts: dict[str, np.ndarray] = field(default_factory=dict)


def _vision(model: ToyMLLM, images: np.ndarray, acts: dict | None = None) -> np.ndarray:
    h1, z1 = mlp_forward(model.layer("V.l1"), images)
    h2, z2 = mlp_forward(model.layer("V.l2"), h1)
    v, _ = mlp_forward(model.layer("P.proj"), h2)
    if acts is not None:
        acts.update(images=images, h1=h1, z1=z1, h2=h2, z2=z2, visual=v)
    return v


def vision_preactivations(model: ToyMLLM, images: np.ndarray) -> list[np.ndarray]:
    """Pre-activations of each vision-encoder layer, one ``(n, width)`` array per layer."""
    acts: dict = {}
    _vision(model, np.atleast_2d(np.asarray(images, dtype=np.float64)), acts)
    return [acts["z1"], acts["z2"]]


def visual_embedding(model: ToyMLLM, image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape[-1] != model.dims.image_dim:
        raise ShapeError(f"image length {image.shape[-1]} != {model.dims.image_dim}")
    return _vision(model, image)


def forward(model: ToyMLLM, batch: Batch) -> tuple[np.ndarray, Trace]:
    d = model.dims
    p = model.params
    if batch.attrs.size and (batch.attrs.min() < 0 or batch.attrs.max() >= d.n_attributes):
        raise ModelError("attribute id out of range")
    trace = Trace(batch)
    n = len(batch)
    if batch.kind == VQA:
        visual = _vision(model, batch.images, trace.acts)
        name = np.broadcast_to(p["W.name_emb.table"][d.n_entities], (n, d.d_model))
    else:
        if batch.entities.size and (batch.entities.min() < 0 or batch.entities.max() >= d.n_entities):
            raise ModelError("entity id out of range")
        visual = np.broadcast_to(p["W.noimg.vector"], (n, d.d_model))
        name = p["W.name_emb.table"][batch.entities]
    cat = np.concatenate([name, p["W.attr_emb.table"][batch.attrs], visual], axis=1)
    g1, _ = mlp_forward(model.layer("W.fuse1"), cat)
    g2, _ = mlp_forward(model.layer("W.fuse2"), g1)
    logits, _ = mlp_forward(model.layer("W.out"), g2)
    trace.acts.update(cat=cat, g1=g1, g2=g2)
    return logits, trace


def _accumulate(grads: dict, key: str, value: np.ndarray) -> None:
    if key in grads:
        grads[key] += value
    else:
        grads[key] = value.copy() if isinstance(value, np.ndarray) else value


def _layer_backward(model, grads, name, x, upstream):
    gw, gb, gx = mlp_backward(model.layer(name), x, upstream)
    _accumulate(grads, f"{name}.weight", gw)
    _accumulate(grads, f"{name}.bias", gb)
    return gx


def vision_backward(model: ToyMLLM, trace: Trace, dvisual: np.ndarray, grads: dict) -> dict:
    a = trace.acts
    dh2 = _layer_backward(model, grads, "P.proj", a["h2"], dvisual)
    dh1 = _layer_backward(model, grads, "V.l2", a["h1"], dh2)
    _layer_backward(model, grads, "V.l1", a["images"], dh1)
    return grads


def backward(model: ToyMLLM, trace: Trace, dlogits: np.ndarray | None,
             dvisual: np.ndarray | None = None, grads: dict | None = None) -> dict:
    """Accumulate parameter gradients for ``sum(dlogits * logits)`` plus an
    optional direct gradient on the visual embedding (VQA only)."""
    grads = {} if grads is None else grads
    d = model.dims
    batch = trace.batch
    a = trace.acts
    dvis = None
    if dlogits is not None:
        dg2 = _layer_backward(model, grads, "W.out", a["g2"], dlogits)
        dg1 = _layer_backward(model, grads, "W.fuse2", a["g1"], dg2)
        dcat = _layer_backward(model, grads, "W.fuse1", a["cat"], dg1)
        dname, dattr, dvis = np.split(dcat, 3, axis=1)
        gname = np.zeros_like(model.params["W.name_emb.table"])
        if batch.kind == VQA:
            gname[d.n_entities] = dname.sum(axis=0)
        else:
            np.add.at(gname, batch.entities, dname)
            _accumulate(grads, "W.noimg.vector", dvis.sum(axis=0))
        _accumulate(grads, "W.name_emb.table", gname)
        gattr = np.zeros_like(model.params["W.attr_emb.table"])
        np.add.at(gattr, batch.attrs, dattr)
        _accumulate(grads, "W.attr_emb.table", gattr)
    if batch.kind == VQA:
        total = None
        if dlogits is not None:
            total = dvis
        if dvisual is not None:
            total = dvisual if total is None else total + dvisual
        if total is not None:
            vision_backward(model, trace, total, grads)
    elif dvisual is not None:
        raise ModelError("QA batches carry no visual embedding")
    return grads


def forward_vqa(model: ToyMLLM, image, question: int) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (model.dims.image_dim,):
        raise ShapeError(f"image shape {image.shape}")
    batch = Batch(VQA, np.array([-1]), np.array([question]), np.array([0]), image[None, :])
    return forward(model, batch)[0][0]


def forward_qa(model: ToyMLLM, entity: int, question: int) -> np.ndarray:
    batch = Batch(QA, np.array([entity]), np.array([question]), np.array([0]))
    return forward(model, batch)[0][0]


def zero_grads(model: ToyMLLM) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in model.params.items()}


def apply_update(model: ToyMLLM, grads: dict, lr: float, gate: dict | None = None,
                 scope: Iterable[str] = COMPONENTS, max_norm: float | None = None) -> float:
    """``theta <- theta - lr * gate * grad`` over non-frozen components in ``scope``.

    ``gate`` maps parameter names to boolean arrays; names absent from a given
    gate are not updated. Entries zeroed by pruning are never updated. With
    ``max_norm`` the gated gradient is rescaled to at most that global L2 norm.
    Returns the gated gradient norm before clipping.
    """
    scope = set(scope) - set(model.frozen)
    dead = model.dead_entries()
    effective = {}
    for name in model.params:
        if model.component_of(name) not in scope or name not in grads:
            continue
        g = grads[name]
        if gate is not None:
            if name not in gate:
                continue
            g = np.where(gate[name], g, 0.0)
        if name in dead:
            g = np.where(dead[name], 0.0, g)
        effective[name] = g
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in effective.values())))
    if not np.isfinite(norm):
        raise NumericError("non-finite gradient")
    scale = lr
    if max_norm is not None and norm > max_norm:
        scale = lr * max_norm / norm
    for name, g in effective.items():
        model.params[name] -= scale * g
    return norm


def ce_loss_and_grad(model: ToyMLLM, batches: Sequence[Batch], weight: float = 1.0
                     ) -> tuple[float, dict]:
    """Mean cross-entropy over the union of ``batches`` (scaled by ``weight``)."""
    n = sum(len(b) for b in batches)
    grads: dict = {}
    total = 0.0
    for b in batches:
        logits, trace = forward(model, b)
        loss, dlogits = softmax_cross_entropy(logits, b.answers)
        share = len(b) / n
        total += share * loss
        backward(model, trace, dlogits * share * weight, grads=grads)
    return weight * total, grads


def train_vanilla(base: ToyMLLM, samples: Sequence[Sample], epochs: int, lr: float, rng: Rng,
                  batch_size: int = 32) -> tuple[ToyMLLM, list[float]]:
    """Mini-batch gradient descent on mean cross-entropy over every sample.

    Returns the trained copy and the mean training loss of each epoch.
    """
    if base.frozen:
        raise ModelError("vanilla training expects no frozen components")
    if not samples:
        raise DatasetError("cannot train on an empty dataset")
    model = base.copy()
    vqa = [i for i, s in enumerate(samples) if s.kind == VQA]
    qa = [i for i, s in enumerate(samples) if s.kind == QA]
    full = {VQA: Batch.from_samples([samples[i] for i in vqa]) if vqa else None,
            QA: Batch.from_samples([samples[i] for i in qa]) if qa else None}
    # position of each sample inside its kind-specific array
    where = np.empty(len(samples), dtype=np.int64)
    where[vqa] = np.arange(len(vqa))
    where[qa] = np.arange(len(qa))
    is_vqa = np.zeros(len(samples), dtype=bool)
    is_vqa[vqa] = True

    history = []
    for _ in range(epochs):
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            parts = []
            for kind, mask in ((VQA, is_vqa[idx]), (QA, ~is_vqa[idx])):
                if mask.any():
                    parts.append(full[kind].take(where[idx[mask]]))
            loss, grads = ce_loss_and_grad(model, parts)
            if not np.isfinite(loss):
                raise NumericError("non-finite training loss")
            apply_update(model, grads, lr)
            epoch_loss += loss * len(idx)
        history.append(epoch_loss / len(samples))
    return model, history


# checkpoints ----------------------------------------------------------------


def _fmt(values: np.ndarray) -> str:
    if not np.all(np.isfinite(values)):
        raise NumericError("refusing to serialise non-finite parameters")
    return "[" + ",".join(f"{v:.17g}" for v in values.ravel()) + "]"


def checkpoint_text(model: ToyMLLM, seed: int | None = None, extra: dict | None = None) -> str:
    meta = {
        "dims": asdict(model.dims),
        "seed": seed,
        "frozen": sorted(model.frozen),
        "pruned": sorted([list(p) for p in model.pruned]),
    }
    if extra:
        meta.update(extra)
    tree: dict = {}
    arrays: dict[str, str] = {}
    for i, (name, arr) in enumerate(model.params.items()):
        comp, layer, tensor = name.split(".")
        token = f"@@array{i}@@"
        tree.setdefault(comp, {}).setdefault(layer, {})[tensor] = token
        arrays[token] = _fmt(arr)
    text = json.dumps({"meta": meta, "params": tree}, indent=1, sort_keys=False)
    for token, payload in arrays.items():
        text = text.replace(f'"{token}"', payload)
    return text + "\n"


def save_checkpoint(model: ToyMLLM, path, seed: int | None = None, extra: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(checkpoint_text(model, seed, extra))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ToyMLLM, dict]:
    doc = json.loads(Path(path).read_text())
    meta = doc["meta"]
    dims = Dims(**meta["dims"])
    shapes = ToyMLLM.init(dims, Rng(0)).params
    params = {}
    for comp, layers in doc["params"].items():
        for layer, tensors in layers.items():
            for tensor, values in tensors.items():
                name = f"{comp}.{layer}.{tensor}"
                if name not in shapes:
                    raise ModelError(f"unexpected parameter {name} in checkpoint")
                params[name] = np.array(values, dtype=np.float64).reshape(shapes[name].shape)
    missing = set(shapes) - set(params)
    if missing:
        raise ModelError(f"checkpoint lacks {sorted(missing)}")
    params = {k: params[k] for k in shapes}
    model = ToyMLLM(dims, params, frozenset(meta.get("frozen", [])),
                    frozenset(tuple(p) for p in meta.get("pruned", [])))
    return model, meta
