"""Resolve queries to ranked image hits through a fixture or live backend.

Responses are stored content-addressed as ``<dir>/<sha1(canonical key)>.json``
holding an ordered array of ``{"image_id", "source_url"}`` objects. The cache
uses the same layout, so a populated cache directory is itself a valid
fixture directory.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
import urllib.error
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .core import MissingDataError, TimeInterval, ValidationError, monday_of
from .query import QuerySpec, canonical_key

log = logging.getLogger(__name__)

ENDPOINT_ENV = "POPSIGNAL_SEARCH_ENDPOINT"
API_KEY_ENV = "POPSIGNAL_SEARCH_API_KEY"


class MissingFixture(MissingDataError):
    def __init__(self, key: str, path: Path):
        super().__init__(f"no fixture for query {key!r} (expected {path})")
        self.key = key
        self.path = path


class RetryableSearchError(RuntimeError):
    """The live backend kept failing after the bounded number of attempts."""

    def __init__(self, key: str, attempts: int, cause: Exception):
        super().__init__(f"search for {key!r} failed after {attempts} attempts: {cause}")
        self.key = key
        self.attempts = attempts
        self.cause = cause


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    source_url: str
    rank: int
    query_key: str
    polarity: str
    interval: TimeInterval
    step_k: int


@dataclass(frozen=True)
class GatewayConfig:
    m_per_query: int = 25
    backend: str = "fixture"
    cache_dir: Path | None = None
    fixture_dir: Path | None = None
    max_retries: int = 3
    jobs: int = 1

    def __post_init__(self):
        if self.m_per_query < 1:
            raise ValidationError("m_per_query must be >= 1")
        if self.backend not in ("fixture", "live"):
            raise ValidationError(f"unknown backend {self.backend!r}")
        if self.backend == "fixture" and self.fixture_dir is None:
            raise ValidationError("fixture backend needs fixture_dir")


def key_filename(key: str) -> str:
    return hashlib.sha1(key.encode("utf-8")).hexdigest() + ".json"


def dump_entries(entries: Sequence[dict]) -> str:
    rows = [{"image_id": str(e["image_id"]), "source_url": str(e.get("source_url", ""))}
            for e in entries]
    return json.dumps(rows, indent=1) + "\n"


def write_fixture(fixture_dir: str | Path, key: str, entries: Sequence[dict]) -> Path:
    d = Path(fixture_dir)
    d.mkdir(parents=True, exist_ok=True)
    path = d / key_filename(key)
    path.write_text(dump_entries(entries))
    return path


def _read_entries(path: Path) -> list[dict]:
    data = json.loads(path.read_text())
    if not isinstance(data, list):
        raise ValidationError(f"{path}: expected a JSON array")
    for i, e in enumerate(data):
        if not isinstance(e, dict) or "image_id" not in e:
            raise ValidationError(f"{path}: entry {i} lacks image_id")
    return data


def _store_first(cache_dir: Path, key: str, payload: str) -> str:
    """Write ``payload`` unless another writer got there first; return the kept text."""
    cache_dir.mkdir(parents=True, exist_ok=True)
    final = cache_dir / key_filename(key)
    fd, tmp = tempfile.mkstemp(dir=cache_dir, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(payload)
        try:
            os.link(tmp, final)  # atomic, fails if the key is already cached
        except FileExistsError:
            pass
    finally:
        os.unlink(tmp)
    return final.read_text()


class LiveBackend:
    """Thin adapter for an HTTP image-search API with date-range filtering.

    Expects ``GET <endpoint>?q=..&from=YYYY-MM-DD&to=YYYY-MM-DD&num=M`` to
    return either a JSON array or ``{"items": [...]}`` whose objects carry an
    id (``image_id`` or ``id``) and a URL (``source_url``, ``link`` or ``url``).
    """

    def __init__(self, endpoint: str | None = None, api_key: str | None = None,
                 transport: Callable[[urllib.request.Request], bytes] | None = None,
                 sleep: Callable[[float], None] = time.sleep, backoff: float = 0.5):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        if not self.endpoint:
            raise ValidationError(f"live backend needs an endpoint (set {ENDPOINT_ENV})")
        self.transport = transport or self._urlopen
        self.sleep = sleep
        self.backoff = backoff

    @staticmethod
    def _urlopen(req):
        with urllib.request.urlopen(req, timeout=30) as resp:
            return resp.read()

    def request_for(self, q: QuerySpec, m: int) -> urllib.request.Request:
        params = {
            "q": " ".join(q.tokens),
            "from": monday_of(q.interval.start).isoformat(),
            "to": monday_of(q.interval.end).isoformat(),
            "num": str(m),
        }
        req = urllib.request.Request(self.endpoint + "?" + urllib.parse.urlencode(params))
        if self.api_key:
            req.add_header("Authorization", f"Bearer {self.api_key}")
        return req

    def search(self, q: QuerySpec, m: int, max_retries: int) -> list[dict]:
        key = canonical_key(q)
        last: Exception | None = None
        for attempt in range(1, max_retries + 1):
            try:
                raw = self.transport(self.request_for(q, m))
                return self._parse(json.loads(raw))
            except (urllib.error.URLError, OSError, TimeoutError) as exc:
                last = exc
                log.warning("search %s attempt %d/%d failed: %s", key, attempt, max_retries, exc)
                if attempt < max_retries:
                    self.sleep(self.backoff * 2 ** (attempt - 1))
        raise RetryableSearchError(key, max_retries, last)

    @staticmethod
    def _parse(data) -> list[dict]:
        items = data.get("items", []) if isinstance(data, dict) else data
        out = []
        for it in items:
            iid = it.get("image_id", it.get("id"))
            if iid is None:
                continue
            out.append({"image_id": str(iid),
                        "source_url": str(it.get("source_url", it.get("link", it.get("url", ""))))})
        return out


def _records(entries: Sequence[dict], q: QuerySpec, key: str) -> list[ImageRecord]:
    return [ImageRecord(str(e["image_id"]), str(e.get("source_url", "")), rank, key,
                        q.polarity, q.interval, q.step_k)
            for rank, e in enumerate(entries, start=1)]


def fetch(q: QuerySpec, cfg: GatewayConfig, live: LiveBackend | None = None) -> list[ImageRecord]:
    """Ranked hits for one query, at most ``cfg.m_per_query`` of them.

    A cached response is returned as-is; otherwise the backend is queried and
    its (truncated) answer is cached before being returned.
    """
    key = canonical_key(q)
    cache_path = cfg.cache_dir / key_filename(key) if cfg.cache_dir else None
    if cache_path is not None and cache_path.exists():
        return _records(_read_entries(cache_path)[: cfg.m_per_query], q, key)

    if cfg.backend == "fixture":
        path = Path(cfg.fixture_dir) / key_filename(key)
        if not path.exists():
            raise MissingFixture(key, path)
        entries = _read_entries(path)
    else:
        entries = (live or LiveBackend()).search(q, cfg.m_per_query, cfg.max_retries)

    payload = dump_entries(entries[: cfg.m_per_query])
    if cache_path is not None:
        payload = _store_first(Path(cfg.cache_dir), key, payload)
    return _records(json.loads(payload), q, key)


@dataclass
class FetchResult:
    records: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def total(self) -> int:
        return sum(len(v) for v in self.records.values())

    def summary(self) -> str:
        lines = [f"{len(self.records)} queries ok, {len(self.failures)} failed, {self.total} records"]
        lines += [f"  {k}: {e}" for k, e in self.failures.items()]
        return "\n".join(lines)


def fetch_all(specs: Sequence[QuerySpec], cfg: GatewayConfig,
              live: LiveBackend | None = None) -> FetchResult:
    """Fetch every spec; failures are collected instead of aborting the batch."""
    if not specs:
        raise ValidationError("fetch_all needs at least one query")
    if cfg.backend == "live" and live is None:
        live = LiveBackend()

    def one(q):
        try:
            return fetch(q, cfg, live), None
        except (MissingDataError, RetryableSearchError, ValidationError) as exc:
            return None, exc

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(one, specs))
    else:
        outcomes = [one(q) for q in specs]

    result = FetchResult()
    for q, (recs, err) in zip(specs, outcomes):
        key = canonical_key(q)
        if err is None:
            result.records[key] = recs
        else:
            result.failures[key] = err
    return result
