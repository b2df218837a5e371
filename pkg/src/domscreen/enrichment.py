"""Acquisition of raw domain properties from pluggable providers.

Only the Wayback Machine CDX index is queried live. Everything else (Moz,
SEOkicks, SEMrush, Alexa, SimilarWeb, block checks) comes from fixture
directories laid out as ``<root>/<provider>/<domain>.json``.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol

import requests

from .errors import ProviderError, ValidationError
from .features import FLAG_KINDS, MIN_DOB, RANK_CAP, current_year

log = logging.getLogger(__name__)

CDX_ENDPOINT = "https://web.archive.org/cdx/search/cdx"
FIXTURES_ENV = "DOMSCREEN_FIXTURES"

_DOMAIN_RE = re.compile(r"^(?=.{1,253}$)(?:[a-z0-9](?:[a-z0-9-]{0,61}[a-z0-9])?\.)+[a-z]{2,63}$")

# fields a provider may supply and their valid ranges (None = unbounded above)
FIELD_RANGES: dict[str, tuple[int, int | None]] = {
    "pr": (0, 10), "da": (0, 100), "pa": (0, 100), "te": (0, 6),
    "bl": (0, None), "dp": (0, None), "acr": (0, None), "sv": (0, None),
    "alexa": (1, RANK_CAP), "similarweb": (1, RANK_CAP),
    "le": (1, None), "hy": (0, 1), "nu": (0, 1), **{k: (0, 1) for k in FLAG_KINDS},
}


def is_valid_domain(domain: str) -> bool:
    return bool(_DOMAIN_RE.match(domain.lower()))


def check_fields(fields: dict, provider: str, year: int | None = None) -> dict[str, int]:
    """Validate a provider's field map; bad payloads raise a non-retryable error."""
    year = current_year() if year is None else year
    clean = {}
    for key, value in fields.items():
        if key == "dob":
            bounds = (MIN_DOB, year)
        elif key in FIELD_RANGES:
            bounds = FIELD_RANGES[key]
        else:
            raise ProviderError(provider, f"unknown field {key!r}", retryable=False)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ProviderError(provider, f"field {key}={value!r} is not an integer", retryable=False)
        value = int(value)
        lo, hi = bounds
        if value < lo or (hi is not None and value > hi):
            raise ProviderError(provider, f"field {key}={value} outside its valid range", retryable=False)
        clean[key] = value
    return clean


@dataclass(frozen=True)
class EnrichmentResult:
    domain: str
    fields: dict[str, int]
    provider: str
    fetched_at: dt.datetime = field(default_factory=lambda: dt.datetime.now(dt.timezone.utc))


class Provider(Protocol):
    name: str

    def lookup(self, domain: str) -> dict[str, int]:
        """Raw field map for ``domain``; empty when the provider knows nothing."""


def fetch(provider: Provider, domain: str) -> EnrichmentResult:
    domain = domain.strip().lower()
    if not is_valid_domain(domain):
        raise ValidationError(f"not a valid domain name: {domain!r}")
    fields = check_fields(provider.lookup(domain), provider.name)
    return EnrichmentResult(domain, fields, provider.name)


def merge(results: Iterable[EnrichmentResult]) -> dict[str, int]:
    """Combine field maps; later results overwrite earlier ones."""
    merged: dict[str, int] = {}
    for result in results:
        merged.update(result.fields)
    return merged


def enrich(domain: str, providers: Iterable[Provider]) -> dict[str, int]:
    return merge(fetch(p, domain) for p in providers)


class FixtureProvider:
    """Reads ``<root>/<name>/<domain>.json`` flat field maps."""

    def __init__(self, name: str, root: str | os.PathLike | None = None):
        root = root if root is not None else os.environ.get(FIXTURES_ENV)
        if root is None:
            raise ValidationError(f"no fixture root: pass one or set {FIXTURES_ENV}")
        self.name = name
        self.directory = Path(root) / name

    def lookup(self, domain: str) -> dict[str, int]:
        path = self.directory / f"{domain}.json"
        if not path.is_file():
            return {}
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ProviderError(self.name, f"{path}: malformed JSON at byte {exc.pos}", retryable=False) from None
        if not isinstance(payload, dict):
            raise ProviderError(self.name, f"{path}: expected a JSON object", retryable=False)
        return payload


class _Throttle:
    """At most ``max_in_flight`` concurrent calls, started at least ``min_interval`` apart."""

    def __init__(self, max_in_flight: int, min_interval: float, clock: Callable[[], float],
                 sleep: Callable[[float], None]):
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()
        self._next_start = 0.0
        self._interval = min_interval
        self._clock = clock
        self._sleep = sleep

    def __enter__(self):
        self._slots.acquire()
        with self._lock:
            now = self._clock()
            wait = self._next_start - now
            self._next_start = max(now, self._next_start) + self._interval
        if wait > 0:
            self._sleep(wait)
        return self

    def __exit__(self, *exc):
        self._slots.release()
        return False


class WaybackCDXProvider:
    """Snapshot count (acr) and first-capture year (dob) from the public CDX index."""

    name = "wayback"

    def __init__(self, session=None, *, endpoint: str = CDX_ENDPOINT, max_attempts: int = 3,
                 backoff: float = 1.0, timeout: float = 30.0, page_size: int = 10_000,
                 max_in_flight: int = 4, min_interval: float = 0.25,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        self.session = session if session is not None else requests.Session()
        self.endpoint = endpoint
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.timeout = timeout
        self.page_size = page_size
        self._sleep = sleep
        self._throttle = _Throttle(max_in_flight, min_interval, clock, sleep)

    def _get(self, params: dict) -> str:
        last = "no attempt made"
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._throttle:
                    response = self.session.get(self.endpoint, params=params, timeout=self.timeout)
            except requests.RequestException as exc:
                last = f"request failed: {exc}"
                log.warning("wayback attempt %d/%d: %s", attempt + 1, self.max_attempts, last)
                continue
            if response.status_code == 200:
                return response.text
            last = f"HTTP {response.status_code}"
            log.warning("wayback attempt %d/%d: %s", attempt + 1, self.max_attempts, last)
        raise ProviderError(self.name, f"giving up after {self.max_attempts} attempts: {last}", retryable=True)

    def _rows(self, text: str) -> tuple[list[str], str | None]:
        """Timestamps from one JSON page plus the resume key, if the page has one."""
        if not text.strip():
            return [], None
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ProviderError(self.name, f"malformed CDX JSON at byte {exc.pos}: {exc.msg}", retryable=False) from None
        if not isinstance(payload, list) or not all(isinstance(row, list) for row in payload):
            raise ProviderError(self.name, "CDX payload is not an array of arrays", retryable=False)
        if not payload:
            return [], None
        header, body = payload[0], payload[1:]
        if "timestamp" not in header:
            raise ProviderError(self.name, f"CDX header lacks a timestamp column: {header!r}", retryable=False)
        col = header.index("timestamp")
        resume = None
        # with showResumeKey the page ends in an empty row followed by [key]
        if len(body) >= 2 and body[-2] == []:
            resume = str(body[-1][0]) if body[-1] else None
            body = body[:-2]
        stamps = []
        for row in body:
            if len(row) <= col or not re.fullmatch(r"\d{14}", str(row[col])):
                raise ProviderError(self.name, f"bad CDX row {row!r}", retryable=False)
            stamps.append(str(row[col]))
        return stamps, resume

    def snapshot_count(self, domain: str) -> int:
        params = {"url": domain, "output": "json", "fl": "timestamp",
                  "limit": self.page_size, "showResumeKey": "true"}
        total = 0
        while True:
            stamps, resume = self._rows(self._get(params))
            total += len(stamps)
            if not resume:
                return total
            params = {**params, "resumeKey": resume}

    def first_capture_year(self, domain: str) -> int | None:
        stamps, _ = self._rows(self._get({"url": domain, "output": "json", "fl": "timestamp", "limit": 1}))
        if not stamps:
            return None
        year = int(min(stamps)[:4])
        if not 1996 <= year <= current_year():
            raise ProviderError(self.name, f"first capture year {year} is implausible", retryable=False)
        return year

    def wayback_cdx(self, domain: str) -> tuple[int, int | None]:
        acr = self.snapshot_count(domain)
        if acr == 0:
            return 0, None
        return acr, self.first_capture_year(domain)

    def lookup(self, domain: str) -> dict[str, int]:
        acr, dob = self.wayback_cdx(domain)
        fields = {"acr": acr}
        if dob is not None:
            fields["dob"] = dob
        return fields


class CachedProvider:
    """On-disk cache in front of another provider, keyed by provider name and domain."""

    def __init__(self, inner: Provider, directory: str | os.PathLike,
                 max_age: dt.timedelta = dt.timedelta(days=30),
                 now: Callable[[], dt.datetime] = lambda: dt.datetime.now(dt.timezone.utc)):
        self.inner = inner
        self.name = inner.name
        self.directory = Path(directory) / inner.name
        self.max_age = max_age
        self._now = now

    def lookup(self, domain: str) -> dict[str, int]:
        path = self.directory / f"{domain}.json"
        if path.is_file():
            try:
                entry = json.loads(path.read_text(encoding="utf-8"))
                fetched = dt.datetime.fromisoformat(entry["fetched_at"])
                if self._now() - fetched <= self.max_age:
                    return entry["fields"]
            except (json.JSONDecodeError, KeyError, ValueError):
                log.warning("ignoring unreadable cache entry %s", path)
        fields = self.inner.lookup(domain)
        self.directory.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"fetched_at": self._now().isoformat(), "fields": fields}, sort_keys=True),
                        encoding="utf-8")
        return fields


def build_providers(spec: str, fixtures_root: str | None = None, cache_dir: str | None = None) -> list[Provider]:
    """Parse ``"moz,semrush,wayback"``: ``wayback`` is the live client, anything else a fixture set."""
    providers: list[Provider] = []
    for name in (part.strip() for part in spec.split(",")):
        if not name:
            continue
        provider: Provider = WaybackCDXProvider() if name == "wayback" else FixtureProvider(name, fixtures_root)
        if cache_dir is not None and name == "wayback":
            provider = CachedProvider(provider, cache_dir)
        providers.append(provider)
    return providers
