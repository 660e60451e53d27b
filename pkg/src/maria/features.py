"""Scenario-adaptive feature transforms over a concatenated field vector.

The assembled input is a single (batch, width) vector made of five fields
(behavior summary, user, target item, trigger, context). A FieldLayout maps
byte-for-byte where each field and each feature element (one id embedding,
one attribute embedding, ...) lives, so the transforms below can address
individual elements:

* feature scaling: one learned multiplier per feature element, conditioned
  on a frozen view of the input plus user/item/scenario embeddings;
* field refinement: per field, a bank of compressing refiners with a
  scenario-conditioned selector (Gumbel-softmax sampled during training,
  argmax one-hot at evaluation);
* field correlation: fields projected to a shared width, all pairwise dot
  products appended as explicit interaction features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Value
from .layers import Fcn

FIELD_NAMES = ("behavior", "user", "item", "trigger", "context")


@dataclass(frozen=True)
class ElementSpan:
    offset: int
    width: int


@dataclass(frozen=True)
class FieldSpec:
    name: str
    offset: int
    width: int
    elements: tuple[ElementSpan, ...]


@dataclass(frozen=True)
class FieldLayout:
    """Byte map of the concatenated vector: fields partition it, elements partition fields."""

    fields: tuple[FieldSpec, ...]

    def __post_init__(self):
        cursor = 0
        for f in self.fields:
            if f.offset != cursor or f.width <= 0:
                raise ValueError(f"field {f.name!r}: fields must be contiguous and non-empty")
            inner = f.offset
            for el in f.elements:
                if el.offset != inner or el.width <= 0:
                    raise ValueError(f"field {f.name!r}: elements must partition the field")
                inner += el.width
            if inner != f.offset + f.width:
                raise ValueError(f"field {f.name!r}: element widths do not cover the field")
            cursor += f.width

    @property
    def width(self) -> int:
        last = self.fields[-1]
        return last.offset + last.width

    @property
    def element_count(self) -> int:
        return sum(len(f.elements) for f in self.fields)

    def element_spans(self) -> list[ElementSpan]:
        return [el for f in self.fields for el in f.elements]

    def field(self, name: str) -> FieldSpec:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)


def assemble_fields(parts: Sequence[tuple[str, Value, Sequence[int]]]) -> tuple[Value, FieldLayout]:
    """Concatenate named field vectors and build the matching layout.

    Each part is (name, value, element_widths); the widths must sum to the
    value's last-axis width.
    """
    specs = []
    cursor = 0
    for name, value, widths in parts:
        if sum(widths) != value.shape[-1]:
            raise ValueError(
                f"field {name!r}: element widths {list(widths)} sum to {sum(widths)}, "
                f"value width is {value.shape[-1]}"
            )
        elements = []
        inner = cursor
        for w in widths:
            elements.append(ElementSpan(inner, w))
            inner += w
        specs.append(FieldSpec(name, cursor, value.shape[-1], tuple(elements)))
        cursor = inner
    combined = ad.concat([value for _, value, _ in parts], axis=-1)
    return combined, FieldLayout(tuple(specs))


class FeatureScaling:
    """Per-element multiplicative scaling, bounded by a configurable ceiling.

    The scale network sees a gradient-frozen copy of the assembled vector
    (so scaling cannot reshape the representation it conditions on) next to
    the live user, target-item and scenario embeddings. Each multiplier is
    ceiling * sigmoid(net output), hence in (0, ceiling).
    """

    def __init__(
        self,
        graph: Graph,
        rng: np.random.Generator,
        layout: FieldLayout,
        user_dim: int,
        item_dim: int,
        scenario_dim: int,
        hidden: int,
        ceiling: float = 2.0,
        name: str = "fs",
    ):
        if ceiling <= 0:
            raise ValueError("feature scaling: ceiling must be positive")
        self.ceiling = float(ceiling)
        in_dim = layout.width + user_dim + item_dim + scenario_dim
        self.net = Fcn(graph, rng, in_dim, [hidden, layout.element_count], ["relu", "linear"], f"{name}.net")

    def forward(self, q: Value, layout: FieldLayout, e_u: Value, e_x: Value, e_s: Value) -> tuple[Value, Value]:
        net_in = ad.concat([ad.stop_gradient(q), e_u, e_x, e_s], axis=-1)
        alpha = ad.scale(ad.sigmoid(self.net.forward(net_in)), self.ceiling)
        scaled = []
        for j, el in enumerate(layout.element_spans()):
            piece = ad.slice_last(q, el.offset, el.offset + el.width)
            scaled.append(ad.mul(piece, ad.slice_last(alpha, j, j + 1)))
        return ad.concat(scaled, axis=-1), alpha

    def parameters(self):
        return self.net.parameters()

    def parameter_count(self) -> int:
        return self.net.parameter_count()


def feature_scale(
    q: Value, layout: FieldLayout, e_u: Value, e_x: Value, e_s: Value, fs: FeatureScaling
) -> tuple[Value, Value]:
    return fs.forward(q, layout, e_u, e_x, e_s)


def refiner_width(field_width: int, compression: float) -> int:
    return max(1, math.ceil(field_width * compression))


class FieldRefinement:
    """Per-field refiner banks with scenario-conditioned hard selection.

    Each refiner compresses its field through one affine+relu layer. A
    selector scores the refiners from [field || scenario embedding]; the
    sigmoid of those scores feeds the Gumbel-softmax directly. Training uses
    the sampled soft weights; evaluation picks argmax deterministically, so
    the slots of unselected refiners are exactly zero.
    """

    def __init__(
        self,
        graph: Graph,
        rng: np.random.Generator,
        layout: FieldLayout,
        scenario_dim: int,
        refiner_counts: dict[str, int],
        compression: float = 0.5,
        temperature: float = 0.01,
        use_gumbel: bool = True,
        name: str = "fr",
    ):
        if temperature <= 0:
            raise ValueError("field refinement: temperature must be positive")
        if not (0 < compression <= 1):
            raise ValueError("field refinement: compression must lie in (0, 1]")
        self.temperature = float(temperature)
        self.use_gumbel = use_gumbel
        self.counts: dict[str, int] = {}
        self.selectors: dict[str, Fcn] = {}
        self.refiners: dict[str, list[Fcn]] = {}
        self.out_widths: dict[str, int] = {}
        for f in layout.fields:
            n = int(refiner_counts.get(f.name, 1))
            if n < 1:
                raise ValueError(f"field refinement: refiner count for {f.name!r} must be >= 1")
            rw = refiner_width(f.width, compression)
            self.counts[f.name] = n
            self.selectors[f.name] = Fcn(
                graph, rng, f.width + scenario_dim, [n], ["linear"], f"{name}.{f.name}.selector"
            )
            self.refiners[f.name] = [
                Fcn(graph, rng, f.width, [rw], ["relu"], f"{name}.{f.name}.refiner{k}") for k in range(n)
            ]
            self.out_widths[f.name] = n * rw

    @property
    def out_width(self) -> int:
        return sum(self.out_widths.values())

    def refine_field(
        self,
        field_name: str,
        field_value: Value,
        e_s: Value,
        mode: str,
        trace: dict | None = None,
    ) -> Value:
        selector = self.selectors[field_name]
        scores = ad.sigmoid(selector.forward(ad.concat([field_value, e_s], axis=-1)))
        if not self.use_gumbel:
            beta = ad.softmax_last(scores)
        elif mode == "train":
            beta = ad.gumbel_softmax(scores, self.temperature)
        else:
            beta = ad.argmax_one_hot(scores)
        if trace is not None and mode == "eval":
            trace.setdefault("refiner_choice", {})[field_name] = beta.data.argmax(axis=-1)
        slots = []
        for k, refiner in enumerate(self.refiners[field_name]):
            slots.append(ad.mul(refiner.forward(field_value), ad.slice_last(beta, k, k + 1)))
        return ad.concat(slots, axis=-1)

    def forward(self, q_s: Value, layout: FieldLayout, e_s: Value, mode: str, trace: dict | None = None) -> Value:
        refined = []
        for f in layout.fields:
            piece = ad.slice_last(q_s, f.offset, f.offset + f.width)
            refined.append(self.refine_field(f.name, piece, e_s, mode, trace))
        return ad.concat(refined, axis=-1)

    def parameters(self):
        out = []
        for name in self.counts:
            out.extend(self.selectors[name].parameters())
            for refiner in self.refiners[name]:
                out.extend(refiner.parameters())
        return out

    def parameter_count(self) -> int:
        return sum(v.size for _, v in self.parameters())


def refine_all(
    q_s: Value, layout: FieldLayout, e_s: Value, fr: FieldRefinement, mode: str, trace: dict | None = None
) -> Value:
    return fr.forward(q_s, layout, e_s, mode, trace)


class FieldCorrelation:
    """Pairwise dot products between fields projected to a common width."""

    def __init__(
        self,
        graph: Graph,
        rng: np.random.Generator,
        layout: FieldLayout,
        projection_dim: int,
        name: str = "fcm",
    ):
        if projection_dim <= 0:
            raise ValueError("field correlation: projection_dim must be positive")
        self.projection_dim = projection_dim
        self.projections: dict[str, Fcn] = {
            f.name: Fcn(graph, rng, f.width, [projection_dim], ["linear"], f"{name}.{f.name}")
            for f in layout.fields
        }
        n = len(layout.fields)
        self.out_width = n * (n - 1) // 2

    def forward(self, q_s: Value, layout: FieldLayout) -> Value:
        projected = []
        for f in layout.fields:
            piece = ad.slice_last(q_s, f.offset, f.offset + f.width)
            projected.append(self.projections[f.name].forward(piece))
        pairs = []
        for i in range(len(projected)):
            for j in range(i + 1, len(projected)):
                pairs.append(ad.dot_last(projected[i], projected[j]))
        return ad.concat(pairs, axis=-1)

    def parameters(self):
        out = []
        for name in self.projections:
            out.extend(self.projections[name].parameters())
        return out

    def parameter_count(self) -> int:
        return sum(v.size for _, v in self.parameters())


def correlate_fields(q_s: Value, layout: FieldLayout, fcm: FieldCorrelation) -> Value:
    return fcm.forward(q_s, layout)


def adaptive_features(
    q: Value,
    layout: FieldLayout,
    e_u: Value,
    e_x: Value,
    e_s: Value,
    fs: FeatureScaling | None,
    fr: FieldRefinement | None,
    fcm: FieldCorrelation | None,
    mode: str,
    trace: dict | None = None,
) -> tuple[Value, Value | None]:
    """Compose scaling, refinement and correlation; any stage may be disabled.

    Returns the fused feature vector and the scale multipliers (None when
    scaling is off). Correlation reads the scaled fields, not the refined
    ones, so the two branches stay parallel.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"adaptive_features: mode must be 'train' or 'eval', got {mode!r}")
    alpha = None
    q_s = q
    if fs is not None:
        q_s, alpha = fs.forward(q, layout, e_u, e_x, e_s)
    q_r = fr.forward(q_s, layout, e_s, mode, trace) if fr is not None else q_s
    if fcm is not None:
        q_c = fcm.forward(q_s, layout)
        return ad.concat([q_r, q_c], axis=-1), alpha
    return q_r, alpha
