"""Synthetic multi-scenario click-log generator.

Instances are drawn from a known ground-truth model so that ranking quality
has a computable ceiling: each scenario scores a masked, weighted sum of
per-element signals, squashes it through a sigmoid after adding noise, and
samples the binary label. Instance ``i`` of a run depends only on
``(seed, i)``, so any prefix of a dataset is stable under count changes.

Signals come from a keyed hash, not from the RNG, so the same user or item
carries the same latent value in every instance it appears in. That is what
makes the task learnable from embeddings.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import metrics
from .config import (
    ConfigError,
    FeatureSchema,
    RunConfig,
    VocabSizes,
    compat_digest_parts,
)

MANIFEST_SUFFIX = ".manifest.json"
_INSTANCE_KEYS = {
    "scenario",
    "user",
    "user_attrs",
    "behavior",
    "target_item",
    "target_attrs",
    "trigger",
    "context",
    "label",
}


class DataError(ValueError):
    """Malformed dataset file or instance."""


@dataclass(frozen=True)
class TriggerImage:
    vec: tuple[float, ...]


@dataclass(frozen=True)
class TriggerProduct:
    item: int
    attrs: tuple[int, ...]


@dataclass(frozen=True)
class Instance:
    scenario: int
    user: int
    user_attrs: tuple[int, ...]
    behavior: tuple[tuple[int, tuple[int, ...]], ...]  # (item, item_attrs) pairs, oldest first
    target_item: int
    target_attrs: tuple[int, ...]
    trigger: TriggerImage | TriggerProduct | None
    context: tuple[int, ...]
    label: int


@dataclass(frozen=True)
class ScenarioProfile:
    """Fully resolved generator settings for one scenario."""

    scenario_id: int
    traffic_share: float
    noise_std: float
    trigger_kind: str
    label_bias: float
    behavior_tilt: float
    field_importance: tuple[float, ...]
    label_weights: tuple[float, ...]


@dataclass
class DatasetManifest:
    vocab: dict
    schema: dict
    trigger_mode: str
    seed: int
    count: int
    scenario_counts: dict[int, int]
    positive_rates: dict[str, float]
    bayes_auc: dict[str, float | None]
    compat_digest: str
    profiles: tuple[ScenarioProfile, ...]

    def vocab_sizes(self) -> VocabSizes:
        return VocabSizes(**self.vocab)

    def feature_schema(self) -> FeatureSchema:
        return FeatureSchema(**self.schema)


@dataclass
class Dataset:
    manifest: DatasetManifest
    instances: list[Instance]


# ---------------------------------------------------------------------------
# stable signals
# ---------------------------------------------------------------------------

def stable_unit(*keys) -> float:
    """Deterministic value in [-1, 1] keyed by the given ints/strings."""
    payload = "\x1f".join(str(k) for k in keys).encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    (word,) = struct.unpack("<Q", digest)
    return word / float(2**64 - 1) * 2.0 - 1.0


def _stable_int(*keys) -> int:
    payload = "\x1f".join(str(k) for k in keys).encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    (word,) = struct.unpack("<Q", digest)
    return word


def profiles_from_config(cfg: RunConfig) -> tuple[ScenarioProfile, ...]:
    """Resolve auto fields: disjoint round-robin importance masks and hash-free
    per-scenario label weights drawn from the generator seed."""
    n_q = cfg.schema.element_count
    n_s = cfg.vocab.scenarios
    profiles = []
    for sc in cfg.scenarios:
        if sc.field_importance:
            importance = sc.field_importance
            if len(importance) != n_q:
                raise ConfigError(
                    f"scenario.{sc.scenario_id}.field_importance: expected {n_q} values, got {len(importance)}"
                )
        else:
            importance = tuple(1.0 if j % n_s == sc.scenario_id else 0.0 for j in range(n_q))
        if sc.label_weights:
            weights = sc.label_weights
            if len(weights) != n_q:
                raise ConfigError(
                    f"scenario.{sc.scenario_id}.label_weights: expected {n_q} values, got {len(weights)}"
                )
        else:
            rng = np.random.default_rng([cfg.gen_seed, 700_000 + sc.scenario_id])
            magnitude = rng.uniform(1.5, 3.0, size=n_q)
            sign = rng.choice([-1.0, 1.0], size=n_q)
            weights = tuple(float(w) for w in magnitude * sign)
        profiles.append(
            ScenarioProfile(
                scenario_id=sc.scenario_id,
                traffic_share=float(sc.traffic_share),
                noise_std=sc.noise_std,
                trigger_kind=sc.trigger_kind,
                label_bias=sc.label_bias,
                behavior_tilt=sc.behavior_tilt,
                field_importance=importance,
                label_weights=weights,
            )
        )
    return tuple(profiles)


class _Catalogs:
    """Memoized deterministic attribute lists and latent signals."""

    def __init__(self, vocab: VocabSizes, schema: FeatureSchema):
        self.vocab = vocab
        self.schema = schema
        self._user_attrs: dict[int, tuple[int, ...]] = {}
        self._item_attrs: dict[int, tuple[int, ...]] = {}
        self._trigger_attrs: dict[int, tuple[int, ...]] = {}

    def user_attrs(self, user: int) -> tuple[int, ...]:
        got = self._user_attrs.get(user)
        if got is None:
            got = tuple(
                _stable_int("uattr", user, j) % self.vocab.user_attrs
                for j in range(self.schema.user_attr_count)
            )
            self._user_attrs[user] = got
        return got

    def item_attrs(self, item: int) -> tuple[int, ...]:
        got = self._item_attrs.get(item)
        if got is None:
            got = tuple(
                _stable_int("iattr", item, j) % self.vocab.item_attrs
                for j in range(self.schema.item_attr_count)
            )
            self._item_attrs[item] = got
        return got

    def trigger_attrs(self, item: int) -> tuple[int, ...]:
        got = self._trigger_attrs.get(item)
        if got is None:
            got = tuple(
                _stable_int("tattr", item, j) % self.vocab.trigger_attrs
                for j in range(self.schema.trigger_attr_count)
            )
            self._trigger_attrs[item] = got
        return got


def _signal_vector(inst: Instance, schema: FeatureSchema, memo: dict) -> np.ndarray:
    """Per-element latent signals in the same element order the model assembles:
    behavior, user id, user attrs, item id, item attrs, trigger head,
    trigger attrs, context attrs."""

    def unit(kind, key):
        cache_key = (kind, key)
        got = memo.get(cache_key)
        if got is None:
            got = stable_unit(kind, key)
            memo[cache_key] = got
        return got

    values = [float(np.mean([unit("item", it) for it, _ in inst.behavior]))]
    values.append(unit("user", inst.user))
    values.extend(unit("uattr", a) for a in inst.user_attrs)
    values.append(unit("item", inst.target_item))
    values.extend(unit("iattr", a) for a in inst.target_attrs)
    if isinstance(inst.trigger, TriggerImage):
        values.append(float(np.mean(inst.trigger.vec)))
    elif isinstance(inst.trigger, TriggerProduct):
        values.append(unit("item", inst.trigger.item))
        values.extend(unit("tattr", a) for a in inst.trigger.attrs)
    else:
        values.append(unit("item", inst.target_item))
    if isinstance(inst.trigger, TriggerImage):
        values.extend(0.0 for _ in range(schema.trigger_attr_count))
    values.extend(unit("cattr", a) for a in inst.context)
    out = np.asarray(values, dtype=np.float64)
    if out.size != schema.element_count:
        raise DataError(f"signal vector has {out.size} elements, expected {schema.element_count}")
    return out


def generate(cfg: RunConfig) -> tuple[Dataset, np.ndarray]:
    """Sample ``cfg.gen_count`` instances; also return the noise-free click
    probabilities used for the achievable-AUC estimate in the manifest."""
    if cfg.gen_seed < 0:
        raise ConfigError("gen.seed: must be non-negative")
    vocab, schema = cfg.vocab, cfg.schema
    profiles = profiles_from_config(cfg)
    shares = np.array([p.traffic_share for p in profiles], dtype=np.float64)
    shares = shares / shares.sum()
    catalogs = _Catalogs(vocab, schema)
    signal_memo: dict = {}

    pop_logits = np.array(
        [[stable_unit("pop", p.scenario_id, it) for it in range(vocab.items)] for p in profiles]
    )
    popularity = []
    for p, row in zip(profiles, pop_logits):
        tilted = np.exp(p.behavior_tilt * row - np.max(p.behavior_tilt * row))
        popularity.append(tilted / tilted.sum())

    masks = [np.asarray(p.field_importance, dtype=np.float64) for p in profiles]
    weights = [np.asarray(p.label_weights, dtype=np.float64) for p in profiles]

    instances: list[Instance] = []
    clean_probs = np.empty(cfg.gen_count, dtype=np.float64)
    for i in range(cfg.gen_count):
        rng = np.random.default_rng([cfg.gen_seed, i])
        sid = int(rng.choice(vocab.scenarios, p=shares))
        profile = profiles[sid]
        user = int(rng.integers(0, vocab.users))
        length = int(rng.integers(1, schema.max_behavior_len + 1))
        beh_items = rng.choice(vocab.items, size=length, p=popularity[sid])
        behavior = tuple((int(it), catalogs.item_attrs(int(it))) for it in beh_items)
        target = int(rng.choice(vocab.items, p=popularity[sid]))
        if profile.trigger_kind == "image":
            trigger = TriggerImage(vec=tuple(float(v) for v in rng.uniform(-1.0, 1.0, schema.image_dim)))
        elif profile.trigger_kind == "product":
            trig_item = int(rng.choice(vocab.items, p=popularity[sid]))
            trigger = TriggerProduct(item=trig_item, attrs=catalogs.trigger_attrs(trig_item))
        else:
            trigger = None
        context = tuple(int(c) for c in rng.integers(0, vocab.context_attrs, size=schema.context_attr_count))

        inst = Instance(
            scenario=sid,
            user=user,
            user_attrs=catalogs.user_attrs(user),
            behavior=behavior,
            target_item=target,
            target_attrs=catalogs.item_attrs(target),
            trigger=trigger,
            context=context,
            label=0,
        )
        phi = _signal_vector(inst, schema, signal_memo)
        clean_logit = float(weights[sid] @ (masks[sid] * phi)) + profile.label_bias
        noisy = clean_logit + float(rng.normal(0.0, profile.noise_std)) if profile.noise_std > 0 else clean_logit
        p_click = 1.0 / (1.0 + np.exp(-noisy))
        label = int(rng.random() < p_click)
        instances.append(replace(inst, label=label))
        clean_probs[i] = 1.0 / (1.0 + np.exp(-clean_logit))

    manifest = _build_manifest(cfg, profiles, instances, clean_probs)
    return Dataset(manifest=manifest, instances=instances), clean_probs


def _build_manifest(cfg, profiles, instances, clean_probs) -> DatasetManifest:
    labels = np.array([inst.label for inst in instances], dtype=np.float64)
    scen = np.array([inst.scenario for inst in instances], dtype=np.int64)
    counts = {p.scenario_id: int(np.sum(scen == p.scenario_id)) for p in profiles}
    rates: dict[str, float] = {}
    bayes: dict[str, float | None] = {}
    if len(instances):
        rates["overall"] = float(labels.mean())
        bayes["overall"] = metrics.auc(clean_probs, labels)
    for p in profiles:
        sel = scen == p.scenario_id
        key = str(p.scenario_id)
        rates[key] = float(labels[sel].mean()) if counts[p.scenario_id] else 0.0
        bayes[key] = metrics.auc(clean_probs[sel], labels[sel]) if counts[p.scenario_id] else None
    compat = compat_digest_parts(vars(cfg.vocab), vars(cfg.schema), cfg.trigger_mode)
    return DatasetManifest(
        vocab=dict(vars(cfg.vocab)),
        schema=dict(vars(cfg.schema)),
        trigger_mode=cfg.trigger_mode,
        seed=cfg.gen_seed,
        count=len(instances),
        scenario_counts=counts,
        positive_rates=rates,
        bayes_auc=bayes,
        compat_digest=compat,
        profiles=tuple(profiles),
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _trigger_to_json(trigger):
    if trigger is None:
        return None
    if isinstance(trigger, TriggerImage):
        return {"kind": "image", "vec": list(trigger.vec)}
    return {"kind": "product", "item": trigger.item, "attrs": list(trigger.attrs)}


def _instance_to_json(inst: Instance) -> dict:
    return {
        "scenario": inst.scenario,
        "user": inst.user,
        "user_attrs": list(inst.user_attrs),
        "behavior": [[item, list(attrs)] for item, attrs in inst.behavior],
        "target_item": inst.target_item,
        "target_attrs": list(inst.target_attrs),
        "trigger": _trigger_to_json(inst.trigger),
        "context": list(inst.context),
        "label": inst.label,
    }


def manifest_path(path: str | Path) -> Path:
    return Path(str(path) + MANIFEST_SUFFIX)


def manifest_to_json(m: DatasetManifest) -> dict:
    return {
        "version": 1,
        "vocab": m.vocab,
        "schema": m.schema,
        "trigger_mode": m.trigger_mode,
        "seed": m.seed,
        "count": m.count,
        "scenario_counts": {str(k): v for k, v in m.scenario_counts.items()},
        "positive_rates": m.positive_rates,
        "bayes_auc": m.bayes_auc,
        "compat_digest": m.compat_digest,
        "profiles": [
            {
                "scenario_id": p.scenario_id,
                "traffic_share": p.traffic_share,
                "noise_std": p.noise_std,
                "trigger_kind": p.trigger_kind,
                "label_bias": p.label_bias,
                "behavior_tilt": p.behavior_tilt,
                "field_importance": list(p.field_importance),
                "label_weights": list(p.label_weights),
            }
            for p in m.profiles
        ],
    }


def write_jsonl(dataset: Dataset, path: str | Path) -> None:
    """One JSON object per line, plus a sibling ``<path>.manifest.json``."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for inst in dataset.instances:
            fh.write(json.dumps(_instance_to_json(inst), separators=(",", ":")) + "\n")
    doc = manifest_to_json(dataset.manifest)
    manifest_path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _require(condition: bool, lineno: int, message: str) -> None:
    if not condition:
        raise DataError(f"line {lineno}: {message}")


def _parse_ids(raw, lineno, name, count, bound):
    _require(isinstance(raw, list) and len(raw) == count, lineno, f"{name}: expected {count} ids")
    for v in raw:
        _require(isinstance(v, int) and 0 <= v < bound, lineno, f"{name}: id {v!r} outside [0, {bound})")
    return tuple(raw)


def _parse_instance(obj, lineno: int, manifest: DatasetManifest) -> Instance:
    _require(isinstance(obj, dict), lineno, "instance is not a JSON object")
    missing = _INSTANCE_KEYS - obj.keys()
    extra = obj.keys() - _INSTANCE_KEYS
    _require(not missing, lineno, f"missing keys {sorted(missing)}")
    _require(not extra, lineno, f"unexpected keys {sorted(extra)}")
    vocab = manifest.vocab_sizes()
    schema = manifest.feature_schema()

    sid = obj["scenario"]
    _require(isinstance(sid, int) and 0 <= sid < vocab.scenarios, lineno, f"scenario: {sid!r} outside [0, {vocab.scenarios})")
    user = obj["user"]
    _require(isinstance(user, int) and 0 <= user < vocab.users, lineno, f"user: {user!r} outside [0, {vocab.users})")
    user_attrs = _parse_ids(obj["user_attrs"], lineno, "user_attrs", schema.user_attr_count, vocab.user_attrs)

    raw_beh = obj["behavior"]
    _require(isinstance(raw_beh, list) and 1 <= len(raw_beh) <= schema.max_behavior_len, lineno,
             f"behavior: expected 1..{schema.max_behavior_len} entries")
    behavior = []
    for entry in raw_beh:
        _require(isinstance(entry, list) and len(entry) == 2, lineno, "behavior: entries are [item, [attrs]] pairs")
        item, attrs = entry
        _require(isinstance(item, int) and 0 <= item < vocab.items, lineno, f"behavior: item {item!r} outside [0, {vocab.items})")
        behavior.append((item, _parse_ids(attrs, lineno, "behavior attrs", schema.item_attr_count, vocab.item_attrs)))

    target = obj["target_item"]
    _require(isinstance(target, int) and 0 <= target < vocab.items, lineno, f"target_item: {target!r} outside [0, {vocab.items})")
    target_attrs = _parse_ids(obj["target_attrs"], lineno, "target_attrs", schema.item_attr_count, vocab.item_attrs)

    raw_trig = obj["trigger"]
    kind_by_scenario = {p.scenario_id: p.trigger_kind for p in manifest.profiles}
    expected_kind = kind_by_scenario.get(sid)
    if manifest.trigger_mode == "recommendation":
        _require(raw_trig is None, lineno, "trigger: must be null in a trigger-free dataset")
        trigger = None
    else:
        _require(isinstance(raw_trig, dict) and "kind" in raw_trig, lineno, "trigger: expected an object with a kind")
        kind = raw_trig["kind"]
        _require(kind == expected_kind, lineno, f"trigger: kind {kind!r} does not match scenario {sid} ({expected_kind})")
        if kind == "image":
            vec = raw_trig.get("vec")
            _require(isinstance(vec, list) and len(vec) == schema.image_dim, lineno,
                     f"trigger: vec needs {schema.image_dim} floats")
            _require(all(isinstance(v, (int, float)) for v in vec), lineno, "trigger: vec entries must be numbers")
            _require(set(raw_trig) == {"kind", "vec"}, lineno, "trigger: image payload holds kind and vec only")
            trigger = TriggerImage(vec=tuple(float(v) for v in vec))
        else:
            item = raw_trig.get("item")
            _require(isinstance(item, int) and 0 <= item < vocab.items, lineno, f"trigger: item {item!r} outside [0, {vocab.items})")
            attrs = _parse_ids(raw_trig.get("attrs"), lineno, "trigger attrs", schema.trigger_attr_count, vocab.trigger_attrs)
            _require(set(raw_trig) == {"kind", "item", "attrs"}, lineno, "trigger: product payload holds kind, item, attrs only")
            trigger = TriggerProduct(item=item, attrs=attrs)

    context = _parse_ids(obj["context"], lineno, "context", schema.context_attr_count, vocab.context_attrs)
    label = obj["label"]
    _require(label in (0, 1), lineno, f"label: {label!r} is not 0 or 1")

    return Instance(
        scenario=sid,
        user=user,
        user_attrs=user_attrs,
        behavior=tuple(behavior),
        target_item=target,
        target_attrs=target_attrs,
        trigger=trigger,
        context=context,
        label=label,
    )


def read_manifest(path: str | Path) -> DatasetManifest:
    mpath = manifest_path(path)
    if not mpath.exists():
        raise DataError(f"missing manifest {mpath}")
    doc = json.loads(mpath.read_text(encoding="utf-8"))
    if doc.get("version") != 1:
        raise DataError(f"{mpath}: unsupported manifest version {doc.get('version')!r}")
    profiles = tuple(
        ScenarioProfile(
            scenario_id=p["scenario_id"],
            traffic_share=p["traffic_share"],
            noise_std=p["noise_std"],
            trigger_kind=p["trigger_kind"],
            label_bias=p["label_bias"],
            behavior_tilt=p["behavior_tilt"],
            field_importance=tuple(p["field_importance"]),
            label_weights=tuple(p["label_weights"]),
        )
        for p in doc["profiles"]
    )
    return DatasetManifest(
        vocab=doc["vocab"],
        schema=doc["schema"],
        trigger_mode=doc["trigger_mode"],
        seed=doc["seed"],
        count=doc["count"],
        scenario_counts={int(k): v for k, v in doc["scenario_counts"].items()},
        positive_rates=doc["positive_rates"],
        bayes_auc=doc["bayes_auc"],
        compat_digest=doc["compat_digest"],
        profiles=profiles,
    )


def read_jsonl(path: str | Path) -> Dataset:
    """Load and validate a dataset; errors carry the 1-based line number."""
    path = Path(path)
    manifest = read_manifest(path)
    instances: list[Instance] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                raise DataError(f"line {lineno}: blank line inside dataset")
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            instances.append(_parse_instance(obj, lineno, manifest))
    if len(instances) != manifest.count:
        raise DataError(
            f"{path}: holds {len(instances)} instances but the manifest says {manifest.count} (truncated file?)"
        )
    return Dataset(manifest=manifest, instances=instances)


def batch_iter(instances: list[Instance], batch_size: int, seed: int | None = None, epoch: int = 0):
    """Yield batches as lists; the final short batch is kept. A seed gives a
    deterministic per-epoch shuffle, None keeps file order."""
    if batch_size < 1:
        raise ValueError(f"batch_iter: batch_size must be positive, got {batch_size}")
    if seed is None:
        order = range(len(instances))
    else:
        order = np.random.default_rng([seed, epoch]).permutation(len(instances))
    block: list[Instance] = []
    for idx in order:
        block.append(instances[int(idx)])
        if len(block) == batch_size:
            yield block
            block = []
    if block:
        yield block
