"""Multi-scenario ranking model.

A shared encoder bottom turns one mini-batch of instances into the
concatenated per-field vector: transformer-encoded behaviors pooled by
trigger attention, then user, target item, trigger, and context fields.
On top sit the adaptive feature stages (scaling, refinement, correlation),
a scenario-gated expert mixture, and per-scenario towers fused with a
shared tower whose weight comes from scenario-embedding similarity.

Baselines (hard sharing, shared bottom, expert mixture) reuse the same
bottom so that comparisons isolate the head architecture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import features as ft
from .autodiff import Graph, Value
from .config import (
    AblationFlags,
    EmbedDims,
    FeatureSchema,
    ModelSettings,
    RunConfig,
    VocabSizes,
)
from .datagen import Instance, TriggerImage, TriggerProduct
from .layers import EmbeddingTable, Fcn, SequenceEncoder, trigger_attention

BASELINE_KINDS = ("hard_sharing", "shared_bottom", "mmoe")
MODEL_KINDS = ("maria",) + BASELINE_KINDS


@dataclass
class Batch:
    """Numpy index arrays for one mini-batch; graph-free and reusable."""

    size: int
    scenario: np.ndarray          # (B,)
    user: np.ndarray              # (B,)
    user_attrs: np.ndarray        # (B, L)
    beh_items: np.ndarray         # (B, m) left-padded with the reserved row
    beh_attrs: np.ndarray         # (B, m, P)
    valid: np.ndarray             # (B, m) 0/1 floats
    target: np.ndarray            # (B,)
    target_attrs: np.ndarray      # (B, P)
    is_image: np.ndarray          # (B,) bools; all False outside image scenarios
    image_vecs: np.ndarray        # (B, image_dim) zeros for non-image rows
    trig_items: np.ndarray        # (B,) zeros for non-product rows
    trig_attrs: np.ndarray        # (B, O) padded for image rows
    context: np.ndarray           # (B, N_c)
    labels: np.ndarray            # (B,) floats


def make_batch(instances: list[Instance], vocab: VocabSizes, schema: FeatureSchema, trigger_mode: str) -> Batch:
    b = len(instances)
    m = schema.max_behavior_len
    big_l, big_p, big_o = schema.user_attr_count, schema.item_attr_count, schema.trigger_attr_count
    pad_item, pad_item_attr, pad_trig_attr = vocab.items, vocab.item_attrs, vocab.trigger_attrs

    scenario = np.empty(b, dtype=np.int64)
    user = np.empty(b, dtype=np.int64)
    user_attrs = np.empty((b, big_l), dtype=np.int64)
    beh_items = np.full((b, m), pad_item, dtype=np.int64)
    beh_attrs = np.full((b, m, big_p), pad_item_attr, dtype=np.int64)
    valid = np.zeros((b, m), dtype=np.float64)
    target = np.empty(b, dtype=np.int64)
    target_attrs = np.empty((b, big_p), dtype=np.int64)
    is_image = np.zeros(b, dtype=bool)
    image_vecs = np.zeros((b, schema.image_dim), dtype=np.float64)
    trig_items = np.zeros(b, dtype=np.int64)
    trig_attrs = np.full((b, big_o), pad_trig_attr, dtype=np.int64)
    context = np.empty((b, schema.context_attr_count), dtype=np.int64)
    labels = np.empty(b, dtype=np.float64)

    for i, inst in enumerate(instances):
        scenario[i] = inst.scenario
        user[i] = inst.user
        user_attrs[i] = inst.user_attrs
        length = len(inst.behavior)
        if not (1 <= length <= m):
            raise ValueError(f"instance {i}: behavior length {length} outside [1, {m}]")
        for k, (item, attrs) in enumerate(inst.behavior):
            col = m - length + k
            beh_items[i, col] = item
            beh_attrs[i, col] = attrs
            valid[i, col] = 1.0
        target[i] = inst.target_item
        target_attrs[i] = inst.target_attrs
        context[i] = inst.context
        labels[i] = inst.label
        if trigger_mode == "recommendation":
            if inst.trigger is not None:
                raise ValueError(f"instance {i}: trigger present in a trigger-free model")
        elif isinstance(inst.trigger, TriggerImage):
            is_image[i] = True
            image_vecs[i] = inst.trigger.vec
        elif isinstance(inst.trigger, TriggerProduct):
            trig_items[i] = inst.trigger.item
            trig_attrs[i] = inst.trigger.attrs
        else:
            raise ValueError(f"instance {i}: missing trigger in a trigger-driven model")

    return Batch(
        size=b, scenario=scenario, user=user, user_attrs=user_attrs,
        beh_items=beh_items, beh_attrs=beh_attrs, valid=valid,
        target=target, target_attrs=target_attrs,
        is_image=is_image, image_vecs=image_vecs, trig_items=trig_items, trig_attrs=trig_attrs,
        context=context, labels=labels,
    )


@dataclass
class BottomOutput:
    q: Value
    layout: ft.FieldLayout
    e_user: Value
    e_item: Value
    e_scenario: Value


class EncoderBottom:
    """Embedding tables, behavior encoder, and trigger pooling shared by all model kinds."""

    def __init__(
        self,
        graph: Graph,
        rng: np.random.Generator,
        vocab: VocabSizes,
        schema: FeatureSchema,
        dims: EmbedDims,
        settings: ModelSettings,
        trigger_mode: str,
        name: str = "bottom",
    ):
        if trigger_mode not in ("search", "recommendation"):
            raise ValueError(f"trigger_mode must be 'search' or 'recommendation', got {trigger_mode!r}")
        if trigger_mode == "recommendation" and schema.trigger_attr_count != 0:
            raise ValueError("trigger-free models cannot carry trigger attribute slots")
        self.graph = graph
        self.vocab, self.schema, self.dims = vocab, schema, dims
        self.trigger_mode = trigger_mode
        self.item_width = dims.item + schema.item_attr_count * dims.attr
        t = f"{name}.tables"
        # +1 rows reserve a padding id for tables that appear in padded slots
        self.users = EmbeddingTable(graph, rng, vocab.users, dims.user, f"{t}.user")
        self.items = EmbeddingTable(graph, rng, vocab.items + 1, dims.item, f"{t}.item")
        self.user_attr_tab = (
            EmbeddingTable(graph, rng, vocab.user_attrs, dims.attr, f"{t}.user_attr")
            if schema.user_attr_count else None
        )
        self.item_attr_tab = (
            EmbeddingTable(graph, rng, vocab.item_attrs + 1, dims.attr, f"{t}.item_attr")
            if schema.item_attr_count else None
        )
        self.trigger_attr_tab = (
            EmbeddingTable(graph, rng, vocab.trigger_attrs + 1, dims.attr, f"{t}.trigger_attr")
            if schema.trigger_attr_count else None
        )
        self.context_tab = (
            EmbeddingTable(graph, rng, vocab.context_attrs, dims.context, f"{t}.context")
            if schema.context_attr_count else None
        )
        self.scenario_tab = EmbeddingTable(graph, rng, vocab.scenarios, dims.scenario, f"{t}.scenario")
        self.encoder = SequenceEncoder(
            graph, rng, self.item_width, schema.max_behavior_len,
            settings.attention_heads, settings.encoder_layers, settings.ffn_multiplier,
            f"{name}.encoder",
        )
        if trigger_mode == "search":
            self.trigger_head_width = dims.trigger
            proj_in = dims.item + schema.trigger_attr_count * dims.attr
            self.trigger_proj = Fcn(graph, rng, proj_in, [dims.trigger], ["linear"], f"{name}.trigger_proj")
        else:
            self.trigger_head_width = self.item_width
            self.trigger_proj = None
        self.sim_net = Fcn(
            graph, rng, self.trigger_head_width + self.item_width, [1], ["linear"], f"{name}.trigger_sim"
        )

    def field_parts_widths(self) -> list[tuple[str, list[int]]]:
        d = self.dims
        s = self.schema
        if self.trigger_mode == "search":
            trig = [d.trigger] + [d.attr] * s.trigger_attr_count
        else:
            trig = [self.item_width]
        parts = [
            ("behavior", [self.item_width]),
            ("user", [d.user] + [d.attr] * s.user_attr_count),
            ("item", [d.item] + [d.attr] * s.item_attr_count),
            ("trigger", trig),
        ]
        if s.context_attr_count:
            parts.append(("context", [d.context] * s.context_attr_count))
        return parts

    def static_layout(self) -> ft.FieldLayout:
        specs = []
        cursor = 0
        for fname, widths in self.field_parts_widths():
            elements = []
            inner = cursor
            for w in widths:
                elements.append(ft.ElementSpan(inner, w))
                inner += w
            specs.append(ft.FieldSpec(fname, cursor, sum(widths), tuple(elements)))
            cursor = inner
        return ft.FieldLayout(tuple(specs))

    def _flat_attr(self, table: EmbeddingTable, ids: np.ndarray, count: int, width: int) -> Value:
        emb = table.lookup(ids)
        return ad.reshape(emb, ids.shape[:-1] + (count * width,))

    def _trigger_head(self, batch: Batch) -> Value:
        img_idx = np.flatnonzero(batch.is_image)
        prod_idx = np.flatnonzero(~batch.is_image)

        def product_head(items: np.ndarray, attrs: np.ndarray) -> Value:
            pieces = [self.items.lookup(items)]
            if self.trigger_attr_tab is not None:
                pieces.append(self._flat_attr(self.trigger_attr_tab, attrs, attrs.shape[-1], self.dims.attr))
            return self.trigger_proj.forward(ad.concat(pieces, axis=-1) if len(pieces) > 1 else pieces[0])

        if len(img_idx) == 0:
            return product_head(batch.trig_items, batch.trig_attrs)
        if len(prod_idx) == 0:
            return self.graph.constant(batch.image_vecs)
        stacked = ad.concat(
            [
                self.graph.constant(batch.image_vecs[img_idx]),
                product_head(batch.trig_items[prod_idx], batch.trig_attrs[prod_idx]),
            ],
            axis=0,
        )
        inverse = np.empty(batch.size, dtype=np.int64)
        inverse[np.concatenate([img_idx, prod_idx])] = np.arange(batch.size)
        return ad.take_rows(stacked, inverse)

    def encode(self, batch: Batch) -> BottomOutput:
        d, s = self.dims, self.schema
        e_user = self.users.lookup(batch.user)
        user_parts = [e_user]
        if self.user_attr_tab is not None:
            user_parts.append(self._flat_attr(self.user_attr_tab, batch.user_attrs, s.user_attr_count, d.attr))
        user_field = ad.concat(user_parts, axis=-1) if len(user_parts) > 1 else user_parts[0]

        seq_parts = [self.items.lookup(batch.beh_items)]
        if self.item_attr_tab is not None:
            seq_parts.append(self._flat_attr(self.item_attr_tab, batch.beh_attrs, s.item_attr_count, d.attr))
        seq = ad.concat(seq_parts, axis=-1) if len(seq_parts) > 1 else seq_parts[0]
        encoded = self.encoder.forward(seq, batch.valid)

        e_item = self.items.lookup(batch.target)
        item_parts = [e_item]
        if self.item_attr_tab is not None:
            item_parts.append(self._flat_attr(self.item_attr_tab, batch.target_attrs, s.item_attr_count, d.attr))
        item_field = ad.concat(item_parts, axis=-1) if len(item_parts) > 1 else item_parts[0]

        if self.trigger_mode == "search":
            head = self._trigger_head(batch)
            trig_parts = [head]
            if self.trigger_attr_tab is not None:
                trig_parts.append(self._flat_attr(self.trigger_attr_tab, batch.trig_attrs, s.trigger_attr_count, d.attr))
            trig_field = ad.concat(trig_parts, axis=-1) if len(trig_parts) > 1 else trig_parts[0]
        else:
            head = item_field
            trig_field = item_field

        pooled = trigger_attention(head, encoded, self.sim_net, batch.valid)

        widths = dict(self.field_parts_widths())
        parts = [
            ("behavior", pooled, widths["behavior"]),
            ("user", user_field, widths["user"]),
            ("item", item_field, widths["item"]),
            ("trigger", trig_field, widths["trigger"]),
        ]
        if self.context_tab is not None:
            ctx = self._flat_attr(self.context_tab, batch.context, s.context_attr_count, d.context)
            parts.append(("context", ctx, widths["context"]))
        e_scenario = self.scenario_tab.lookup(batch.scenario)
        q, layout = ft.assemble_fields(parts)
        return BottomOutput(q=q, layout=layout, e_user=e_user, e_item=e_item, e_scenario=e_scenario)

    def parameters(self):
        out = []
        for table in (
            self.users, self.items, self.user_attr_tab, self.item_attr_tab,
            self.trigger_attr_tab, self.context_tab, self.scenario_tab,
        ):
            if table is not None:
                out.extend(table.parameters())
        out.extend(self.encoder.parameters())
        if self.trigger_proj is not None:
            out.extend(self.trigger_proj.parameters())
        out.extend(self.sim_net.parameters())
        return out


@dataclass
class ForwardResult:
    score: Value              # (B,) click probabilities
    alpha: Value | None       # (B, element_count) scaling multipliers, None when scaling is off
    trace: dict               # eval-time extras, e.g. refiner choices per field


def _grouped_towers(towers: list[Fcn], x: Value, scenario: np.ndarray) -> Value:
    """Run each row through its scenario's tower, preserving row order."""
    present = np.unique(scenario)
    if present.size == 1:
        return towers[int(present[0])].forward(x)
    groups = [np.flatnonzero(scenario == s) for s in present]
    pieces = [towers[int(s)].forward(ad.take_rows(x, idx)) for s, idx in zip(present, groups)]
    inverse = np.empty(scenario.size, dtype=np.int64)
    inverse[np.concatenate(groups)] = np.arange(scenario.size)
    return ad.take_rows(ad.concat(pieces, axis=0), inverse)


class _MixtureHead:
    """Scenario-gated expert mixture over the fused feature vector."""

    def __init__(self, graph, rng, in_width: int, settings: ModelSettings, scenario_dim: int, gated: bool, name="moe"):
        h = settings.expert_hidden
        count = settings.experts if gated else 1
        self.experts = [
            Fcn(graph, rng, in_width, [h, h], ["relu", "relu"], f"{name}.expert{j}") for j in range(count)
        ]
        self.gate = Fcn(graph, rng, scenario_dim, [count], ["linear"], f"{name}.gate") if gated else None
        self.out_width = h

    def forward(self, fused: Value, e_scenario: Value) -> Value:
        if self.gate is None:
            return self.experts[0].forward(fused)
        gates = ad.softmax_last(self.gate.forward(e_scenario))
        mixed = None
        for j, expert in enumerate(self.experts):
            term = ad.mul(expert.forward(fused), ad.slice_last(gates, j, j + 1))
            mixed = term if mixed is None else ad.add(mixed, term)
        return mixed

    def parameters(self):
        out = []
        for expert in self.experts:
            out.extend(expert.parameters())
        if self.gate is not None:
            out.extend(self.gate.parameters())
        return out


class MariaModel:
    kind = "maria"

    def __init__(
        self,
        graph: Graph,
        rng: np.random.Generator,
        vocab: VocabSizes,
        schema: FeatureSchema,
        dims: EmbedDims,
        settings: ModelSettings,
        flags: AblationFlags,
        trigger_mode: str,
    ):
        self.graph = graph
        self.vocab, self.schema, self.dims = vocab, schema, dims
        self.settings, self.flags, self.trigger_mode = settings, flags, trigger_mode
        self.bottom = EncoderBottom(graph, rng, vocab, schema, dims, settings, trigger_mode)
        layout = self.bottom.static_layout()
        self.layout = layout

        self.fs = (
            ft.FeatureScaling(
                graph, rng, layout, dims.user, dims.item, dims.scenario,
                settings.scale_hidden, settings.scale_ceiling, "adaptive.fs",
            )
            if flags.fs else None
        )
        self.fr = (
            ft.FieldRefinement(
                graph, rng, layout, dims.scenario, settings.refiner_counts,
                settings.refiner_compression, settings.gumbel_temperature, flags.gs, "adaptive.fr",
            )
            if flags.fr else None
        )
        self.fcm = (
            ft.FieldCorrelation(graph, rng, layout, settings.correlation_dim, "adaptive.fcm")
            if flags.fcm else None
        )
        fused_width = (self.fr.out_width if self.fr else layout.width) + (self.fcm.out_width if self.fcm else 0)
        self.mixture = _MixtureHead(graph, rng, fused_width, settings, dims.scenario, gated=flags.nl)

        tw = list(settings.tower_dims)
        acts = ["relu"] * len(tw)
        self.towers = [
            Fcn(graph, rng, self.mixture.out_width, tw, acts, f"towers.scenario{s}")
            for s in range(vocab.scenarios)
        ]
        self.shared_tower = (
            Fcn(graph, rng, self.mixture.out_width, tw, acts, "towers.shared") if flags.st else None
        )
        self.head = Fcn(graph, rng, tw[-1], [1], ["sigmoid"], "head")

    def _coupling(self, scenario: np.ndarray) -> Value:
        """Per-row weight of the shared tower: mean scenario-embedding dot
        product against every other scenario; zero when there is only one."""
        n_s = self.vocab.scenarios
        if n_s == 1:
            return self.graph.constant(np.zeros((scenario.size, 1)))
        s_mat = self.scenario_tab.weights
        gram = ad.matmul(s_mat, ad.transpose_last2(s_mat))
        off_diag = self.graph.constant(1.0 - np.eye(n_s))
        coupling = ad.scale(ad.sum_last(ad.mul(gram, off_diag), keepdims=True), 1.0 / (n_s - 1))
        return ad.take_rows(coupling, scenario)

    @property
    def scenario_tab(self) -> EmbeddingTable:
        return self.bottom.scenario_tab

    def forward(self, batch: Batch, mode: str = "train") -> ForwardResult:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        out = self.bottom.encode(batch)
        trace: dict = {}
        fused, alpha = ft.adaptive_features(
            out.q, out.layout, out.e_user, out.e_item, out.e_scenario,
            self.fs, self.fr, self.fcm, mode, trace if mode == "eval" else None,
        )
        mixed = self.mixture.forward(fused, out.e_scenario)
        specific = _grouped_towers(self.towers, mixed, batch.scenario)
        if self.shared_tower is not None:
            shared = self.shared_tower.forward(mixed)
            fused_tower = ad.add(specific, ad.mul(shared, self._coupling(batch.scenario)))
        else:
            fused_tower = specific
        score = ad.reshape(self.head.forward(fused_tower), (batch.size,))
        return ForwardResult(score=score, alpha=alpha, trace=trace)

    def named_parameters(self) -> list[tuple[str, Value]]:
        out = list(self.bottom.parameters())
        for module in (self.fs, self.fr, self.fcm):
            if module is not None:
                out.extend(module.parameters())
        out.extend(self.mixture.parameters())
        for tower in self.towers:
            out.extend(tower.parameters())
        if self.shared_tower is not None:
            out.extend(self.shared_tower.parameters())
        out.extend(self.head.parameters())
        return out

    def parameter_values(self) -> list[Value]:
        return [v for _, v in self.named_parameters()]

    def parameter_summary(self) -> dict[str, int]:
        return _summarize(self.named_parameters())

    def spec(self) -> dict:
        return _spec_dict(self.kind, self.vocab, self.schema, self.dims, self.settings, self.flags, self.trigger_mode)


class BaselineModel:
    """Reference heads over the same encoder bottom.

    hard_sharing: one tower for every scenario.
    shared_bottom: per-scenario towers on the raw field vector.
    mmoe: scenario-gated expert mixture, then per-scenario towers.
    """

    def __init__(
        self,
        graph: Graph,
        rng: np.random.Generator,
        vocab: VocabSizes,
        schema: FeatureSchema,
        dims: EmbedDims,
        settings: ModelSettings,
        kind: str,
        trigger_mode: str,
    ):
        if kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINE_KINDS}")
        self.kind = kind
        self.graph = graph
        self.vocab, self.schema, self.dims = vocab, schema, dims
        self.settings, self.trigger_mode = settings, trigger_mode
        self.flags = AblationFlags()
        self.bottom = EncoderBottom(graph, rng, vocab, schema, dims, settings, trigger_mode)
        self.layout = self.bottom.static_layout()
        in_width = self.layout.width
        tw = list(settings.tower_dims)
        acts = ["relu"] * len(tw)
        self.mixture = None
        if kind == "mmoe":
            self.mixture = _MixtureHead(graph, rng, in_width, settings, dims.scenario, gated=True)
            in_width = self.mixture.out_width
        tower_count = 1 if kind == "hard_sharing" else vocab.scenarios
        self.towers = [Fcn(graph, rng, in_width, tw, acts, f"towers.scenario{s}") for s in range(tower_count)]
        self.head = Fcn(graph, rng, tw[-1], [1], ["sigmoid"], "head")

    def forward(self, batch: Batch, mode: str = "train") -> ForwardResult:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        out = self.bottom.encode(batch)
        h = out.q
        if self.mixture is not None:
            h = self.mixture.forward(h, out.e_scenario)
        if len(self.towers) == 1:
            tower_out = self.towers[0].forward(h)
        else:
            tower_out = _grouped_towers(self.towers, h, batch.scenario)
        score = ad.reshape(self.head.forward(tower_out), (batch.size,))
        return ForwardResult(score=score, alpha=None, trace={})

    def named_parameters(self) -> list[tuple[str, Value]]:
        out = list(self.bottom.parameters())
        if self.mixture is not None:
            out.extend(self.mixture.parameters())
        for tower in self.towers:
            out.extend(tower.parameters())
        out.extend(self.head.parameters())
        return out

    def parameter_values(self) -> list[Value]:
        return [v for _, v in self.named_parameters()]

    def parameter_summary(self) -> dict[str, int]:
        return _summarize(self.named_parameters())

    def spec(self) -> dict:
        return _spec_dict(self.kind, self.vocab, self.schema, self.dims, self.settings, self.flags, self.trigger_mode)


_SUMMARY_GROUPS = (
    ("embeddings", "bottom.tables."),
    ("sequence_encoder", "bottom.encoder."),
    ("trigger", "bottom.trigger"),
    ("feature_scaling", "adaptive.fs."),
    ("field_refinement", "adaptive.fr."),
    ("field_correlation", "adaptive.fcm."),
    ("mixture", "moe."),
    ("scenario_towers", "towers.scenario"),
    ("shared_tower", "towers.shared"),
    ("head", "head."),
)


def group_of_parameter(name: str) -> str:
    for group, prefix in _SUMMARY_GROUPS:
        if name.startswith(prefix):
            return group
    raise ValueError(f"parameter {name!r} matches no summary group")


def _summarize(named: list[tuple[str, Value]]) -> dict[str, int]:
    summary = {group: 0 for group, _ in _SUMMARY_GROUPS}
    total = 0
    for name, value in named:
        total += value.size
        summary[group_of_parameter(name)] += value.size
    summary["total"] = total
    return summary


def _spec_dict(kind, vocab, schema, dims, settings, flags, trigger_mode) -> dict:
    model = dict(vars(settings))
    model["tower_dims"] = list(settings.tower_dims)
    model["refiner_counts"] = dict(settings.refiner_counts)
    return {
        "kind": kind,
        "vocab": dict(vars(vocab)),
        "schema": dict(vars(schema)),
        "dims": dict(vars(dims)),
        "model": model,
        "flags": dict(vars(flags)),
        "trigger_mode": trigger_mode,
    }


def build_model(graph: Graph, cfg: RunConfig, kind: str = "maria", seed: int | None = None):
    """Construct a model of the given kind from a resolved run config."""
    rng = np.random.default_rng(cfg.train.seed if seed is None else seed)
    if kind == "maria":
        return MariaModel(graph, rng, cfg.vocab, cfg.schema, cfg.dims, cfg.model, cfg.flags, cfg.trigger_mode)
    return BaselineModel(graph, rng, cfg.vocab, cfg.schema, cfg.dims, cfg.model, kind, cfg.trigger_mode)


def model_from_spec(graph: Graph, spec: dict, seed: int = 0):
    """Rebuild a model with the exact structure recorded by ``spec()``."""
    vocab = VocabSizes(**spec["vocab"])
    schema = FeatureSchema(**spec["schema"])
    dims = EmbedDims(**spec["dims"])
    raw = dict(spec["model"])
    raw["tower_dims"] = tuple(raw["tower_dims"])
    settings = ModelSettings(**raw)
    flags = AblationFlags(**spec["flags"])
    rng = np.random.default_rng(seed)
    kind = spec["kind"]
    if kind == "maria":
        return MariaModel(graph, rng, vocab, schema, dims, settings, flags, spec["trigger_mode"])
    return BaselineModel(graph, rng, vocab, schema, dims, settings, kind, spec["trigger_mode"])


def bce_loss(score: Value, labels: np.ndarray) -> Value:
    """Summed binary cross-entropy; predictions are clipped away from 0 and 1
    and every clipped entry bumps ``graph.clamp_events``."""
    graph = score.graph
    lo, hi = 1e-12, 1.0 - 1e-12
    graph.clamp_events += int(np.sum((score.data < lo) | (score.data > hi)))
    p = ad.clamp(score, lo, hi)
    y = graph.constant(np.asarray(labels, dtype=np.float64))
    log_p = ad.log(p)
    log_not = ad.log(ad.shift(ad.scale(p, -1.0), 1.0))
    not_y = ad.shift(ad.scale(y, -1.0), 1.0)
    ll = ad.add(ad.mul(y, log_p), ad.mul(not_y, log_not))
    return ad.scale(ad.sum_all(ll), -1.0)
