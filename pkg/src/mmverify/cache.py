"""On-disk cache for live model, search and fetch results."""

from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

CACHE_KINDS = ("model", "search", "image_search", "fetch")


def cache_key(kind: str, material: str) -> str:
    # kind is part of the preimage so equal material never collides across kinds
    return hashlib.sha256(f"{kind}\x00{material}".encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CacheEntry:
    key: str
    kind: str
    payload: bytes
    created_at: float
    max_age: float

    def __post_init__(self):
        if self.kind not in CACHE_KINDS:
            raise ValueError(f"unknown cache kind {self.kind!r}")

    def expired(self, now: float) -> bool:
        return now - self.created_at > self.max_age

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "kind": self.kind,
            "payload": base64.b64encode(self.payload).decode("ascii"),
            "created_at": self.created_at,
            "max_age": self.max_age,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CacheEntry":
        return cls(d["key"], d["kind"], base64.b64decode(d["payload"]), float(d["created_at"]), float(d["max_age"]))


class DiskCache:
    def __init__(
        self,
        root: str | os.PathLike,
        max_age: float = 7 * 24 * 3600,
        clock: Callable[[], float] = time.time,
    ):
        self.root = Path(root)
        self.max_age = max_age
        self.clock = clock
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()
        self.hits = 0
        self.misses = 0

    def _lock(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def put(self, kind: str, material: str, payload: bytes, max_age: Optional[float] = None) -> CacheEntry:
        key = cache_key(kind, material)
        entry = CacheEntry(key, kind, payload, self.clock(), self.max_age if max_age is None else max_age)
        path = self._path(key)
        with self._lock(key):
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(f".{threading.get_ident()}.tmp")
            tmp.write_text(json.dumps(entry.to_dict()), encoding="utf-8")
            os.replace(tmp, path)
        return entry

    def load(self, kind: str, material: str) -> Optional[CacheEntry]:
        key = cache_key(kind, material)
        path = self._path(key)
        with self._lock(key):
            if not path.exists():
                return None
            try:
                entry = CacheEntry.from_dict(json.loads(path.read_text(encoding="utf-8")))
            except (ValueError, KeyError):
                return None
        if entry.kind != kind or entry.expired(self.clock()):
            return None
        return entry

    def get(self, kind: str, material: str) -> Optional[bytes]:
        entry = self.load(kind, material)
        if entry is None:
            self.misses += 1
            return None
        self.hits += 1
        return entry.payload
