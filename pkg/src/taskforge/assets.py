"""Mesh asset resolution.

Asset keys are either ``builtin/<shape>/<ex>,<ey>,<ez>`` (procedural meshes
sized to an extent in metres) or a file name relative to a catalog's
``meshes/`` directory.
"""

from __future__ import annotations

import threading
from pathlib import Path

import numpy as np

from .errors import ParseError
from .geometry import TriMesh, box_mesh, cylinder_mesh, ellipsoid_mesh, mesh_load

_BUILDERS = {"box": box_mesh, "ellipsoid": ellipsoid_mesh, "cylinder": cylinder_mesh}


def builtin_key(shape: str, extent) -> str:
    return f"builtin/{shape}/" + ",".join(f"{float(e):g}" for e in extent)


class AssetLibrary:
    def __init__(self, root: str | Path | None = None):
        self.root = Path(root) if root is not None else None
        self._cache: dict[str, TriMesh] = {}
        self._lock = threading.Lock()

    def mesh(self, key: str) -> TriMesh:
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        mesh = self._load(key)
        with self._lock:
            self._cache.setdefault(key, mesh)
        return mesh

    def _load(self, key: str) -> TriMesh:
        if key.startswith("builtin/"):
            try:
                _, shape, dims = key.split("/")
                extent = np.array([float(v) for v in dims.split(",")])
                return _BUILDERS[shape](extent)
            except (KeyError, ValueError):
                raise ParseError(f"bad builtin asset key {key!r}") from None
        if self.root is None:
            raise FileNotFoundError(f"asset {key!r} needs a catalog directory")
        path = self.root / "meshes" / key
        return mesh_load(path.read_bytes(), path.suffix)
