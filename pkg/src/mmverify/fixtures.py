"""Content-addressed fixture store used for record and replay.

Layout under the store root::

    index.json           manifest: completeness flag + one entry per fixture
    model/<digest>.json  one recorded model exchange per request digest
    pages/<digest>.json  fetched pages, keyed by sha256 of the URL
    images/<digest>.json reverse-image results, keyed by pixel digest
    search.json          [{"query": ..., "results": [{url, title, snippet}]}]

All files are UTF-8 JSON written with sorted keys so a store diffs cleanly
under version control.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from pathlib import Path
from typing import Optional

KINDS = ("model", "pages", "images")


def url_digest(url: str) -> str:
    return hashlib.sha256(url.encode("utf-8")).hexdigest()


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + f".{os.getpid()}.{threading.get_ident()}.tmp")
    tmp.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


class FixtureStore:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self._lock = threading.Lock()
        self._index: Optional[dict] = None
        self._search: Optional[list] = None

    # -- index -------------------------------------------------------------

    def _load_index(self) -> dict:
        if self._index is None:
            path = self.root / "index.json"
            self._index = _read_json(path) if path.exists() else {"complete": False, "entries": {}}
        return self._index

    def _flush_index(self) -> None:
        _write_json(self.root / "index.json", self._index)

    @property
    def complete(self) -> bool:
        with self._lock:
            return bool(self._load_index().get("complete"))

    def mark_complete(self, complete: bool) -> None:
        with self._lock:
            self._load_index()["complete"] = bool(complete)
            self._flush_index()

    def entries(self) -> dict:
        with self._lock:
            return dict(self._load_index()["entries"])

    # -- keyed blobs ---------------------------------------------------------

    def _path(self, kind: str, key: str) -> Path:
        if kind not in KINDS:
            raise ValueError(f"unknown fixture kind {kind!r}")
        return self.root / kind / f"{key}.json"

    def load(self, kind: str, key: str) -> Optional[dict]:
        path = self._path(kind, key)
        if not path.exists():
            return None
        return _read_json(path)

    def save(self, kind: str, key: str, data: dict, **index_info) -> bool:
        """Write a fixture unless one already exists for ``key``.

        Returns True when a new file was written.
        """
        path = self._path(kind, key)
        with self._lock:
            index = self._load_index()
            if path.exists():
                return False
            _write_json(path, data)
            index["entries"][f"{kind}/{key}"] = {"kind": kind, **index_info}
            self._flush_index()
            return True

    # -- search results ------------------------------------------------------

    def search_entries(self) -> list[dict]:
        with self._lock:
            if self._search is None:
                path = self.root / "search.json"
                self._search = _read_json(path) if path.exists() else []
            return list(self._search)

    def save_search(self, query: str, results: list[dict]) -> bool:
        entries = self.search_entries()
        with self._lock:
            if any(e.get("query") == query for e in entries):
                return False
            self._search.append({"query": query, "results": results})
            self._search.sort(key=lambda e: e["query"])
            _write_json(self.root / "search.json", self._search)
            return True
