"""Dataset format, loaders, and the synthetic scene/query generator.

The on-disk dataset is JSON-lines, one record per line (UTF-8, LF):

    {"id": "...", "features": [f, ...], "query": "...", "instances": ["...", ...]}

`features` is a precomputed scene representation, `query` the text a user
would type, `instances` the object classes the query refers to. Synthetic
scenes encode their object/color/relation sets in the feature vector (plus
Gaussian noise), so a model that reads the features can beat one fed noise.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensors import Rng

PAD_TOKEN = "<PAD>"
EOQ_TOKEN = "<EOQ>"
UNK_TOKEN = "<UNK>"
SPECIAL_TOKENS = (PAD_TOKEN, EOQ_TOKEN, UNK_TOKEN)


class DatasetError(ValueError):
    """Malformed dataset content; message carries the offending line."""


class OutOfVocabularyError(ValueError):
    def __init__(self, char: str):
        self.char = char
        super().__init__(f"character {char!r} is not in the vocabulary")


@dataclass(frozen=True)
class Vocab:
    """Character vocabulary: specials first, then corpus characters.

    Token ids are positions in `tokens`; the order is the serialization
    contract (vocabulary file = one token per line, line number = id).
    """

    tokens: tuple[str, ...]

    def __post_init__(self):
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("duplicate vocabulary tokens")
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_corpus(cls, queries) -> "Vocab":
        chars = sorted({ch for q in queries for ch in q})
        return cls(SPECIAL_TOKENS + tuple(chars))

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self._index[PAD_TOKEN]

    @property
    def eoq_id(self) -> int:
        return self._index[EOQ_TOKEN]

    @property
    def unk_id(self) -> int:
        return self._index[UNK_TOKEN]

    def char_id(self, ch: str) -> int:
        """Id of a single character; unseen characters map to <UNK>."""
        return self._index.get(ch, self.unk_id)

    def __contains__(self, ch: str) -> bool:
        return ch in self._index

    def encode(self, text: str) -> np.ndarray:
        return np.array([self.char_id(ch) for ch in text], dtype=np.int64)

    def decode(self, ids) -> str:
        return "".join(self.tokens[int(i)] for i in ids)

    def emittable_ids(self) -> np.ndarray:
        """Ids beam search may emit: plain characters plus <EOQ>."""
        ids = [i for i, tok in enumerate(self.tokens) if len(tok) == 1]
        return np.array(sorted(ids + [self.eoq_id]), dtype=np.int64)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(lines))


@dataclass(frozen=True)
class ClassCatalog:
    """Ordered instance-class names; positions index probability vectors."""

    classes: tuple[str, ...]

    def __post_init__(self):
        index = {name: i for i, name in enumerate(self.classes)}
        if len(index) != len(self.classes):
            raise ValueError("duplicate class names in catalog")
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.classes)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        if name not in self._index:
            raise KeyError(f"unknown instance class {name!r}")
        return self._index[name]

    def label_vector(self, instances) -> np.ndarray:
        y = np.zeros(len(self.classes), dtype=np.float64)
        for name in instances:
            y[self.index(name)] = 1.0
        return y

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.classes) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ClassCatalog":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(lines))


@dataclass
class QueryRecord:
    id: str
    features: np.ndarray
    query: str
    instances: tuple[str, ...]


@dataclass
class SceneContext:
    """A demo-servable context: one scene's features and the classes in it."""

    id: str
    features: np.ndarray
    classes: tuple[str, ...]


@dataclass
class Splits:
    train: list[QueryRecord]
    val: list[QueryRecord]
    test: list[QueryRecord]

    @property
    def all(self) -> list[QueryRecord]:
        return self.train + self.val + self.test


def _record_from_json(obj: dict, line_no: int, max_len: int) -> QueryRecord:
    def fail(why: str):
        raise DatasetError(f"line {line_no}: {why}")

    if not isinstance(obj, dict):
        fail("record is not a JSON object")
    for key in ("id", "features", "query", "instances"):
        if key not in obj:
            fail(f"missing field {key!r}")
    if not isinstance(obj["id"], str) or not obj["id"]:
        fail("id must be a non-empty string")
    if not isinstance(obj["query"], str):
        fail("query must be a string")
    n = len(obj["query"])
    if n < 1 or n > max_len:
        fail(f"query length {n} outside [1, {max_len}]")
    try:
        features = np.asarray(obj["features"], dtype=np.float64)
    except (TypeError, ValueError):
        features = None
    if features is None or features.ndim != 1 or features.size == 0:
        fail("features must be a non-empty flat numeric list")
    if not np.all(np.isfinite(features)):
        fail("features contain non-finite values")
    instances = obj["instances"]
    if not isinstance(instances, list) or not all(isinstance(s, str) for s in instances):
        fail("instances must be a list of strings")
    return QueryRecord(obj["id"], features, obj["query"], tuple(instances))


def load_records(
    path,
    catalog: ClassCatalog | None = None,
    *,
    max_len: int = 50,
    on_unknown_class: str = "fail",
) -> list[QueryRecord]:
    """Parse and validate a JSONL dataset file.

    `on_unknown_class`: "fail" raises on an instance name outside the
    catalog, "skip" drops the whole record.
    """
    if on_unknown_class not in ("fail", "skip"):
        raise ValueError(f"on_unknown_class must be 'fail' or 'skip', got {on_unknown_class!r}")
    records = []
    feat_dim = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            rec = _record_from_json(obj, line_no, max_len)
            if feat_dim is None:
                feat_dim = rec.features.size
            elif rec.features.size != feat_dim:
                raise DatasetError(
                    f"line {line_no}: feature dim {rec.features.size} != {feat_dim}"
                )
            if catalog is not None:
                unknown = [name for name in rec.instances if name not in catalog]
                if unknown:
                    if on_unknown_class == "fail":
                        raise DatasetError(
                            f"line {line_no}: unknown instance class {unknown[0]!r}"
                        )
                    continue
            records.append(rec)
    return records


def save_records(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            obj = {
                "id": rec.id,
                "features": [float(x) for x in rec.features],
                "query": rec.query,
                "instances": list(rec.instances),
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def save_scenes(scenes, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sc in scenes:
            obj = {
                "id": sc.id,
                "features": [float(x) for x in sc.features],
                "classes": list(sc.classes),
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_scenes(path) -> list[SceneContext]:
    """Parse the scene sidecar written next to a synthetic dataset."""
    scenes = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            for key in ("id", "features", "classes"):
                if key not in obj:
                    raise DatasetError(f"line {line_no}: missing field {key!r}")
            features = np.asarray(obj["features"], dtype=np.float64)
            if features.ndim != 1 or not np.all(np.isfinite(features)):
                raise DatasetError(f"line {line_no}: bad feature vector")
            scenes.append(SceneContext(obj["id"], features, tuple(obj["classes"])))
    return scenes


def _split_point(record_id: str, seed: int) -> float:
    digest = hashlib.sha256(f"{seed}:{record_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def split_records(records, seed: int = 0) -> Splits:
    """Deterministic 85/7.5/7.5 split keyed on a seeded hash of each id."""
    splits = Splits([], [], [])
    for rec in records:
        u = _split_point(rec.id, seed)
        if u < 0.85:
            splits.train.append(rec)
        elif u < 0.925:
            splits.val.append(rec)
        else:
            splits.test.append(rec)
    return splits


def load_dataset(
    path,
    catalog: ClassCatalog | None = None,
    *,
    max_len: int = 50,
    seed: int = 0,
    on_unknown_class: str = "fail",
) -> Splits:
    records = load_records(path, catalog, max_len=max_len, on_unknown_class=on_unknown_class)
    return split_records(records, seed)


# --- synthetic scenes ------------------------------------------------------

CLASSES = (
    "wine bottle", "glass", "plate", "frisbee", "helmet",
    "boat", "chair", "lamp", "book", "dog",
)
COLORS = ("red", "white", "black", "brown", "green", "blue")
RELATIONS = ("table", "shelf", "floor", "water", "grass")

FEATURE_DIM = len(CLASSES) + len(COLORS) + len(RELATIONS)


@dataclass
class SyntheticScene:
    scene_id: str
    objects: list[tuple[str, str, str]]  # (class, color, relation)
    features: np.ndarray


def scene_features(objects, rng: Rng, noise_sigma: float) -> np.ndarray:
    """Bag-of-objects multi-hot over classes/colors/relations plus noise."""
    feats = np.zeros(FEATURE_DIM, dtype=np.float64)
    for cls, color, rel in objects:
        feats[CLASSES.index(cls)] = 1.0
        feats[len(CLASSES) + COLORS.index(color)] = 1.0
        feats[len(CLASSES) + len(COLORS) + RELATIONS.index(rel)] = 1.0
    return feats + noise_sigma * rng.normal(FEATURE_DIM)


def _make_scene(idx: int, rng: Rng) -> SyntheticScene:
    n_obj = int(rng.integers(2, 5))
    class_ids = rng.choice(len(CLASSES), size=n_obj, replace=False)
    objects = []
    for ci in sorted(int(c) for c in class_ids):
        color = COLORS[int(rng.integers(0, len(COLORS)))]
        rel = RELATIONS[int(rng.integers(0, len(RELATIONS)))]
        objects.append((CLASSES[ci], color, rel))
    return SyntheticScene(f"scene{idx:05d}", objects, None)


def _make_query(scene: SyntheticScene, rng: Rng) -> tuple[str, tuple[str, ...]]:
    templates = 5 if len(scene.objects) >= 2 else 4
    t = int(rng.integers(0, templates))
    cls, color, rel = scene.objects[int(rng.integers(0, len(scene.objects)))]
    if t == 0:
        return f"{color} {cls}", (cls,)
    if t == 1:
        return f"{color} {cls} on the {rel}", (cls,)
    if t == 2:
        return f"{cls} on the {rel}", (cls,)
    if t == 3:
        return f"the {cls} is {color}", (cls,)
    other = scene.objects[int(rng.integers(0, len(scene.objects)))]
    while other[0] == cls:
        other = scene.objects[int(rng.integers(0, len(scene.objects)))]
    return f"{cls} next to {other[0]}", tuple(sorted((cls, other[0])))


def gen_synthetic(
    n_scenes: int,
    queries_per_scene: int,
    rng: Rng,
    out_dir,
    *,
    noise_sigma: float = 0.1,
) -> tuple[Path, Path, Path]:
    """Write `dataset.jsonl`, `classes.txt`, and `scenes.jsonl` under `out_dir`.

    `scenes.jsonl` carries one line per scene (id, features, classes
    present) so completion consumers can look contexts up by scene id.
    Same seed, same bytes: generation is single-threaded and draws from the
    rng in a fixed order.
    """
    if n_scenes < 1 or queries_per_scene < 1:
        raise ValueError("n_scenes and queries_per_scene must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    scenes = []
    for i in range(n_scenes):
        scene = _make_scene(i, rng)
        scene.features = scene_features(scene.objects, rng, noise_sigma)
        scenes.append(
            SceneContext(
                scene.scene_id,
                scene.features,
                tuple(cls for cls, _, _ in scene.objects),
            )
        )
        for j in range(queries_per_scene):
            query, labels = _make_query(scene, rng)
            records.append(
                QueryRecord(f"{scene.scene_id}q{j}", scene.features, query, labels)
            )
    dataset_path = out_dir / "dataset.jsonl"
    classes_path = out_dir / "classes.txt"
    scenes_path = out_dir / "scenes.jsonl"
    save_records(records, dataset_path)
    ClassCatalog(CLASSES).save(classes_path)
    save_scenes(scenes, scenes_path)
    return dataset_path, classes_path, scenes_path
