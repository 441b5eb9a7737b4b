"""Object metadata store with text embeddings and exact nearest-neighbour search."""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .assets import AssetLibrary, builtin_key
from .errors import PreconditionError, ProviderError, VersionMismatch
from .geometry import TriMesh, mesh_to_off
from .providers import ProviderRequest, TextProvider, call_provider, render_prompt

EMBED_DIM = 256
INDEX_MAGIC = b"TFIX"
INDEX_VERSION = 1
# scores are ranked at this resolution so equal-cosine ties are platform-stable
SCORE_DECIMALS = 12


@dataclass(frozen=True)
class ObjectRecord:
    key: str
    name: str
    extent: tuple[float, float, float]
    description: str = ""
    color: str = ""
    material: str = ""
    joints: tuple[dict, ...] = ()
    tags: tuple[str, ...] = ()
    mesh: str = ""

    def __post_init__(self):
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", self.key):
            raise PreconditionError(f"object key {self.key!r} must be an identifier")
        ext = tuple(float(e) for e in self.extent)
        if len(ext) != 3 or min(ext) <= 0:
            raise PreconditionError(f"extent of {self.key!r} must be three positive numbers")
        object.__setattr__(self, "extent", ext)
        object.__setattr__(self, "tags", tuple(self.tags))
        object.__setattr__(self, "joints", tuple(dict(j) for j in self.joints))

    @property
    def articulated(self) -> bool:
        return any(j.get("type") == "prismatic" for j in self.joints)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extent"] = list(self.extent)
        d["joints"] = [dict(j) for j in self.joints]
        d["tags"] = list(self.tags)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectRecord":
        fields = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**fields)


# --------------------------------------------------------------------------- built-in catalog

_DRAWER_JOINT = {"name": "drawer", "type": "prismatic", "range": [0.0, 0.2], "axis": [-1.0, 0.0, 0.0]}

# key, name, shape, extent (m), colour, material, tags
_BUILTIN = [
    ("banana", "banana", "ellipsoid", (0.19, 0.04, 0.04), "yellow", "organic", ("fruit", "food")),
    ("strawberry", "strawberry", "ellipsoid", (0.035, 0.035, 0.04), "red", "organic", ("fruit", "food", "small")),
    ("apple", "apple", "ellipsoid", (0.075, 0.075, 0.07), "red", "organic", ("fruit", "food")),
    ("pear", "pear", "ellipsoid", (0.065, 0.065, 0.09), "green", "organic", ("fruit", "food")),
    ("lemon", "lemon", "ellipsoid", (0.065, 0.05, 0.05), "yellow", "organic", ("fruit", "food", "small")),
    ("orange", "orange", "ellipsoid", (0.07, 0.07, 0.07), "orange", "organic", ("fruit", "food")),
    ("plate", "plate", "cylinder", (0.22, 0.22, 0.02), "white", "ceramic", ("dish", "container", "flat")),
    ("bowl", "bowl", "cylinder", (0.16, 0.16, 0.06), "blue", "ceramic", ("dish", "container")),
    ("cup", "cup", "cylinder", (0.08, 0.08, 0.1), "white", "ceramic", ("dish", "container")),
    ("mug", "mug", "cylinder", (0.09, 0.09, 0.1), "black", "ceramic", ("dish", "container")),
    ("baseball", "baseball", "ellipsoid", (0.074, 0.074, 0.074), "white", "leather", ("ball", "toy")),
    ("racquetball", "racquetball", "ellipsoid", (0.056, 0.056, 0.056), "blue", "rubber", ("ball", "toy")),
    ("tennis_ball", "tennis ball", "ellipsoid", (0.066, 0.066, 0.066), "green", "felt", ("ball", "toy")),
    ("red_cube", "red cube", "box", (0.04, 0.04, 0.04), "red", "wood", ("block", "toy")),
    ("blue_cube", "blue cube", "box", (0.04, 0.04, 0.04), "blue", "wood", ("block", "toy")),
    ("green_cube", "green cube", "box", (0.04, 0.04, 0.04), "green", "wood", ("block", "toy")),
    ("yellow_cube", "yellow cube", "box", (0.04, 0.04, 0.04), "yellow", "wood", ("block", "toy")),
    ("wooden_block", "wooden block", "box", (0.08, 0.05, 0.05), "brown", "wood", ("block",)),
    ("wrench", "wrench", "box", (0.2, 0.05, 0.015), "silver", "metal", ("tool",)),
    ("fork", "fork", "box", (0.18, 0.025, 0.012), "silver", "metal", ("utensil",)),
    ("spoon", "spoon", "box", (0.17, 0.035, 0.012), "silver", "metal", ("utensil",)),
    ("marker", "marker", "cylinder", (0.018, 0.018, 0.12), "black", "plastic", ("tool", "thin")),
    ("potted_meat_can", "potted meat can", "box", (0.1, 0.05, 0.085), "blue", "metal", ("can", "food")),
    ("tuna_can", "tuna fish can", "cylinder", (0.085, 0.085, 0.033), "silver", "metal", ("can", "food")),
    ("bleach_bottle", "bleach cleanser bottle", "box", (0.1, 0.065, 0.25), "white", "plastic", ("bottle",)),
    ("mustard_bottle", "mustard bottle", "box", (0.09, 0.06, 0.19), "yellow", "plastic", ("bottle", "food")),
    ("extra_large_clamp", "extra large clamp", "box", (0.17, 0.1, 0.035), "black", "plastic", ("tool",)),
    ("sponge", "sponge", "box", (0.1, 0.07, 0.03), "yellow", "foam", ("cleaning",)),
    ("wooden_drawer", "wooden drawer cabinet", "box", (0.3, 0.4, 0.3), "brown", "wood", ("drawer", "furniture", "fixed")),
    ("metal_drawer", "metal drawer cabinet", "box", (0.32, 0.42, 0.26), "grey", "metal", ("drawer", "furniture", "fixed")),
]


def builtin_records(annotated: bool = True) -> list[ObjectRecord]:
    out = []
    for key, name, shape, ext, color, material, tags in _BUILTIN:
        joints = (_DRAWER_JOINT,) if "drawer" in tags else ()
        rec = ObjectRecord(key, name, ext, "", color, material, joints, tags, builtin_key(shape, ext))
        out.append(annotate_object(rec, OfflineAnnotator()) if annotated else rec)
    return out


class Catalog:
    """Records keyed by ``ObjectRecord.key`` plus the mesh library backing them."""

    def __init__(self, records: Iterable[ObjectRecord], assets: AssetLibrary | None = None):
        self.records: dict[str, ObjectRecord] = {}
        for r in records:
            if r.key in self.records:
                raise PreconditionError(f"duplicate object key {r.key!r}")
            self.records[r.key] = r
        self.assets = assets or AssetLibrary()

    def __getitem__(self, key: str) -> ObjectRecord:
        return self.records[key]

    def __contains__(self, key: str) -> bool:
        return key in self.records

    def __len__(self) -> int:
        return len(self.records)

    def mesh(self, key: str) -> TriMesh:
        return self.assets.mesh(self.records[key].mesh)

    def save(self, root: str | Path) -> None:
        root = Path(root)
        (root / "records").mkdir(parents=True, exist_ok=True)
        (root / "meshes").mkdir(parents=True, exist_ok=True)
        for key, rec in sorted(self.records.items()):
            mesh_file = f"{key}.off"
            (root / "meshes" / mesh_file).write_text(mesh_to_off(self.mesh(key)))
            data = replace(rec, mesh=mesh_file).to_dict()
            (root / "records" / f"{key}.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, root: str | Path) -> "Catalog":
        root = Path(root)
        recs = [ObjectRecord.from_dict(json.loads(p.read_text())) for p in sorted((root / "records").glob("*.json"))]
        return cls(recs, AssetLibrary(root))


_DEFAULT_CATALOG: Catalog | None = None


def default_catalog() -> Catalog:
    global _DEFAULT_CATALOG
    if _DEFAULT_CATALOG is None:
        _DEFAULT_CATALOG = Catalog(builtin_records())
    return _DEFAULT_CATALOG


# --------------------------------------------------------------------------- annotation


def _extent_phrase(extent) -> str:
    return " x ".join(f"{100 * e:.1f}" for e in extent) + " cm"


class OfflineAnnotator:
    """Deterministic stand-in for a VLM annotator: describes from metadata only."""

    provider_id = "offline-annotator"

    def complete(self, request: ProviderRequest) -> str:
        p = request.payload
        color = p.get("color") or "plain"
        material = p.get("material") or "unknown material"
        tags = ", ".join(p.get("tags") or []) or "household object"
        joint = " It has a sliding drawer with a handle." if p.get("joints") else ""
        desc = (
            f"A {color} {p['name']} made of {material}, roughly {_extent_phrase(p['extent'])} "
            f"({tags}).{joint}"
        )
        return json.dumps({"description": desc, "color": color, "material": material})


def annotate_object(record: ObjectRecord, provider: TextProvider) -> ObjectRecord:
    """Fill description, colour and material; fields already present are kept."""
    if record.description and record.color and record.material:
        return record
    payload = {
        "name": record.name,
        "extent": list(record.extent),
        "color": record.color,
        "material": record.material,
        "tags": list(record.tags),
        "joints": [dict(j) for j in record.joints],
    }
    prompt = render_prompt("annotate_object", **payload)
    text = call_provider(provider, ProviderRequest("annotate_object", prompt, payload))
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = {"description": text.strip()}
    if not isinstance(data, dict) or not str(data.get("description", "")).strip():
        raise ProviderError("annotation provider returned no description")
    return replace(
        record,
        description=record.description or str(data["description"]).strip(),
        color=record.color or str(data.get("color", "")).strip(),
        material=record.material or str(data.get("material", "")).strip(),
    )


# --------------------------------------------------------------------------- embeddings


class Embedder(Protocol):
    embedder_id: str
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return TOKEN_RE.findall(text.lower())


def token_bucket(token: str, dim: int = EMBED_DIM) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


class HashedBowEmbedder:
    """Term-frequency bag of words hashed into ``dim`` buckets, L2-normalised."""

    def __init__(self, dim: int = EMBED_DIM):
        self.dimension = dim
        self.embedder_id = f"hashed-bow-{dim}-v1"

    def embed(self, text: str) -> np.ndarray:
        toks = tokenize(text)
        if not toks:
            raise PreconditionError("cannot embed text without tokens")
        v = np.zeros(self.dimension)
        for t in toks:
            v[token_bucket(t, self.dimension)] += 1.0
        return v / np.sqrt(v @ v)


def embed(text: str) -> np.ndarray:
    return HashedBowEmbedder().embed(text)


def embedder_for(embedder_id: str) -> Embedder:
    m = re.fullmatch(r"hashed-bow-(\d+)-v1", embedder_id)
    if m:
        return HashedBowEmbedder(int(m.group(1)))
    raise PreconditionError(f"no built-in embedder {embedder_id!r}; pass one explicitly")


@dataclass(frozen=True, eq=False)
class EmbeddingIndex:
    dimension: int
    keys: tuple[str, ...]
    vectors: np.ndarray
    embedder_id: str
    embedder: Embedder | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.keys)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EmbeddingIndex)
            and self.embedder_id == other.embedder_id
            and self.keys == other.keys
            and np.array_equal(self.vectors, other.vectors)
        )

    def entries(self) -> list[tuple[str, np.ndarray]]:
        return list(zip(self.keys, self.vectors))

    def query(self, text: str, k: int = 1) -> list[tuple[str, float]]:
        return query(self, text, k)

    def save(self, path: str | Path) -> None:
        eid = self.embedder_id.encode()
        buf = bytearray(INDEX_MAGIC)
        buf += struct.pack("<HH", INDEX_VERSION, len(eid)) + eid
        buf += struct.pack("<II", self.dimension, len(self.keys))
        for key, vec in zip(self.keys, self.vectors):
            kb = key.encode()
            buf += struct.pack("<H", len(kb)) + kb
            buf += vec.astype("<f8").tobytes()
        Path(path).write_bytes(bytes(buf))

    @classmethod
    def load(cls, path: str | Path, embedder: Embedder | None = None) -> "EmbeddingIndex":
        data = Path(path).read_bytes()
        if data[:4] != INDEX_MAGIC:
            raise VersionMismatch("not an embedding index file")
        version, elen = struct.unpack_from("<HH", data, 4)
        if version != INDEX_VERSION:
            raise VersionMismatch(f"index version {version} unsupported")
        pos = 8
        eid = data[pos : pos + elen].decode()
        pos += elen
        dim, n = struct.unpack_from("<II", data, pos)
        pos += 8
        keys, vecs = [], []
        for _ in range(n):
            (kl,) = struct.unpack_from("<H", data, pos)
            pos += 2
            keys.append(data[pos : pos + kl].decode())
            pos += kl
            vecs.append(np.frombuffer(data, dtype="<f8", count=dim, offset=pos).astype(float))
            pos += 8 * dim
        if embedder is not None and embedder.embedder_id != eid:
            raise PreconditionError(f"index built with {eid}, embedder is {embedder.embedder_id}")
        return cls(dim, tuple(keys), np.array(vecs).reshape(n, dim), eid, embedder)


def index_text(record: ObjectRecord) -> str:
    return record.description or record.name


def build_index(records: Iterable[ObjectRecord], embedder: Embedder | None = None) -> EmbeddingIndex:
    embedder = embedder or HashedBowEmbedder()
    recs = sorted(records, key=lambda r: r.key)
    keys = tuple(r.key for r in recs)
    if len(set(keys)) != len(keys):
        raise PreconditionError("duplicate keys in index")
    vecs = np.array([embedder.embed(index_text(r)) for r in recs]).reshape(len(recs), embedder.dimension)
    return EmbeddingIndex(embedder.dimension, keys, vecs, embedder.embedder_id, embedder)


def query(index: EmbeddingIndex, text: str, k: int = 1, embedder: Embedder | None = None) -> list[tuple[str, float]]:
    """Exact top-k by cosine; equal scores order by ascending key."""
    if k < 1:
        raise PreconditionError("k must be at least 1")
    if len(index) == 0:
        raise PreconditionError("index is empty")
    embedder = embedder or index.embedder or embedder_for(index.embedder_id)
    if embedder.embedder_id != index.embedder_id:
        raise PreconditionError("query embedder does not match index")
    q = embedder.embed(text)
    scores = np.clip(np.round(index.vectors @ q, SCORE_DECIMALS), -1.0, 1.0)
    # keys are stored sorted, so a stable sort on -score keeps ascending-key ties
    order = np.argsort(-scores, kind="stable")[:k]
    return [(index.keys[i], float(scores[i])) for i in order]
