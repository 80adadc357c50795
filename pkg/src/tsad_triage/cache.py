"""Content-addressed on-disk store for raw LLM responses."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .llm_client import ChatClient, ChatRequest

logger = logging.getLogger(__name__)


def cache_key(model: str, prompt: str, image_png: bytes | None, vote_index: int, temperature: float | None = None) -> str:
    """sha256 over the request identity. The vote index keeps repeated votes distinct."""
    h = hashlib.sha256()
    for part in (
        b"model", model.encode(),
        b"prompt", prompt.encode(),
        b"image", image_png or b"",
        b"vote", str(vote_index).encode(),
        b"temperature", repr(temperature).encode(),
    ):
        h.update(len(part).to_bytes(8, "big"))
        h.update(part)
    return h.hexdigest()


class ResponseCache:
    """One JSON file per entry under ``root/<key[:2]>/<key>.json``.

    Reads are lock-free; writes are serialised and land via atomic rename.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            self.misses += 1
            return None
        except (OSError, json.JSONDecodeError):
            logger.warning("ignoring corrupt cache entry %s", path)
            self.misses += 1
            return None
        self.hits += 1
        return entry["value"]

    def entry(self, key: str) -> dict[str, Any] | None:
        path = self._path(key)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def put(self, key: str, value: str) -> None:
        path = self._path(key)
        entry = {"key": key, "value": value, "created_at": datetime.now(timezone.utc).isoformat()}
        with self._write_lock:
            if path.exists():
                return
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(entry, fh)
            os.replace(tmp, path)

    def __len__(self) -> int:
        return sum(1 for _ in self.root.glob("*/*.json"))


class CachingClient:
    """Wraps a client so every request is looked up before it reaches the network."""

    def __init__(self, inner: ChatClient, cache: ResponseCache) -> None:
        self.inner = inner
        self.cache = cache
        self.model = inner.model

    def complete(self, request: ChatRequest) -> str:
        key = cache_key(self.model, request.prompt, request.image_png, request.vote_index, request.temperature)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        value = self.inner.complete(request)
        self.cache.put(key, value)
        return value
