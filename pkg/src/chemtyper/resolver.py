"""Resolve chemical mentions to external definitions (structure + description).

Fixture mode reads a JSONL store and never touches the network.  Live mode
queries a PubChem PUG-REST compatible server; any failure there degrades to
``Unlinkable`` with a logged warning.
"""

from __future__ import annotations

import json
import logging
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union
from urllib.parse import quote

from chemtyper.molecule import MoleculeGraph, SmilesError, parse_smiles
from chemtyper.ontology import normalize

log = logging.getLogger(__name__)


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class ChemRecord:
    canonical_name: str
    smiles: str
    description: str
    synonyms: tuple[str, ...] = ()

    def graph(self) -> MoleculeGraph:
        return parse_smiles(self.smiles)

    def to_json(self) -> dict:
        return {
            "canonical_name": self.canonical_name,
            "synonyms": list(self.synonyms),
            "smiles": self.smiles,
            "description": self.description,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ChemRecord":
        return cls(
            str(obj["canonical_name"]),
            str(obj["smiles"]),
            str(obj["description"]),
            tuple(str(s) for s in obj.get("synonyms", [])),
        )


@dataclass(frozen=True)
class Linked:
    record: ChemRecord

    linked = True


@dataclass(frozen=True)
class Unlinkable:
    mention: str

    linked = False


ResolveResult = Union[Linked, Unlinkable]


@dataclass
class IngestReport:
    lines: int = 0
    loaded: int = 0
    bad_smiles: int = 0
    empty_description: int = 0
    duplicates: int = 0
    skipped_names: list[str] = field(default_factory=list)

    @property
    def skipped(self) -> int:
        return self.bad_smiles + self.empty_description

    def to_json(self) -> dict:
        return {
            "lines": self.lines,
            "loaded": self.loaded,
            "skipped": self.skipped,
            "bad_smiles": self.bad_smiles,
            "empty_description": self.empty_description,
            "duplicates": self.duplicates,
            "skipped_names": self.skipped_names,
        }


class FixtureStore:
    """Validated records keyed by normalized canonical name, in ingest order."""

    def __init__(self, records: Iterable[ChemRecord] = ()):
        self.records: dict[str, ChemRecord] = {}
        self.report = IngestReport()
        for r in records:
            self._put(r)
        self._synonyms: dict[str, str] | None = None

    def _put(self, record: ChemRecord) -> None:
        key = normalize(record.canonical_name)
        if key in self.records:
            self.report.duplicates += 1
        self.records[key] = record
        self._synonyms = None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records.values())

    def by_name(self, key: str) -> ChemRecord | None:
        return self.records.get(key)

    def by_synonym(self, key: str) -> ChemRecord | None:
        if self._synonyms is None:
            index: dict[str, str] = {}
            for name, rec in self.records.items():
                for syn in rec.synonyms:
                    index.setdefault(normalize(syn), name)  # first record in store order wins
            self._synonyms = index
        name = self._synonyms.get(key)
        return self.records[name] if name is not None else None


def ingest_fixtures(path: str | Path) -> FixtureStore:
    """Load and validate a JSONL fixture file.

    Records whose SMILES fail to parse or whose description is blank are
    skipped and counted; a repeated canonical name replaces the earlier record.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read fixture file {path}: {exc}") from exc
    store = FixtureStore()
    rep = store.report
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        rep.lines += 1
        try:
            record = ChemRecord.from_json(json.loads(line))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}:{lineno}: malformed fixture record ({exc})") from exc
        if not record.description.strip():
            rep.empty_description += 1
            rep.skipped_names.append(record.canonical_name)
            continue
        try:
            parse_smiles(record.smiles)
        except SmilesError:
            rep.bad_smiles += 1
            rep.skipped_names.append(record.canonical_name)
            continue
        store._put(record)
    rep.loaded = len(store)
    if rep.skipped or rep.duplicates:
        log.info("ingested %s: %d loaded, %d skipped, %d duplicates", path, rep.loaded, rep.skipped, rep.duplicates)
    return store


# ---------------------------------------------------------------- live backend


@dataclass
class LiveConfig:
    base_url: str = "https://pubchem.ncbi.nlm.nih.gov/rest/pug"
    timeout: float = 10.0
    retries: int = 2

    @classmethod
    def from_dict(cls, obj: dict | None) -> "LiveConfig":
        obj = obj or {}
        return cls(
            obj.get("base_url", cls.base_url),
            float(obj.get("timeout", cls.timeout)),
            int(obj.get("retries", cls.retries)),
        )


class NotFound(Exception):
    pass


class PugRestBackend:
    """Minimal PUG-REST client: name -> (SMILES, title) -> description."""

    def __init__(self, config: LiveConfig | None = None, session=None):
        import requests

        self.config = config or LiveConfig()
        self.session = session or requests.Session()
        self._requests = requests

    def _get_json(self, url: str) -> dict:
        last: Exception | None = None
        for _ in range(self.config.retries + 1):
            try:
                resp = self.session.get(url, timeout=self.config.timeout)
            except self._requests.RequestException as exc:
                last = exc
                continue
            if resp.status_code == 404:
                raise NotFound(url)
            if resp.status_code >= 500:
                last = RuntimeError(f"HTTP {resp.status_code} from {url}")
                continue
            resp.raise_for_status()
            return resp.json()
        raise ConnectionError(f"giving up on {url}: {last}")

    def fetch(self, mention: str) -> ChemRecord | None:
        base = self.config.base_url.rstrip("/")
        name = quote(mention, safe="")
        try:
            props = self._get_json(f"{base}/compound/name/{name}/property/CanonicalSMILES,Title/JSON")
            row = props["PropertyTable"]["Properties"][0]
            cid = row["CID"]
            smiles = row.get("CanonicalSMILES") or row.get("ConnectivitySMILES") or row.get("SMILES")
            info = self._get_json(f"{base}/compound/cid/{cid}/description/JSON")
        except NotFound:
            return None
        descriptions = [
            item["Description"] for item in info.get("InformationList", {}).get("Information", []) if "Description" in item
        ]
        if not smiles or not descriptions:
            return None
        return ChemRecord(row.get("Title", mention), smiles, " ".join(descriptions), (mention,))


# ---------------------------------------------------------------- resolver


class Resolver:
    """Name lookup with an in-process cache and an optional on-disk cache.

    Lookup order: exact normalized canonical name, then synonyms.  In live
    mode the backend is consulted instead of the fixture store.
    """

    def __init__(
        self,
        store: FixtureStore | None = None,
        backend: PugRestBackend | None = None,
        cache_path: str | Path | None = None,
    ):
        if store is None and backend is None:
            raise ValueError("a resolver needs a fixture store or a live backend")
        self.store = store
        self.backend = backend
        self.cache_path = Path(cache_path) if cache_path else None
        self._cache: dict[str, ResolveResult] = {}
        self._lock = threading.Lock()
        if self.cache_path and self.cache_path.exists():
            for key, obj in json.loads(self.cache_path.read_text()).items():
                self._cache[key] = Linked(ChemRecord.from_json(obj)) if obj else Unlinkable(key)

    @property
    def mode(self) -> str:
        return "live" if self.backend is not None else "fixture"

    def _lookup(self, key: str) -> ResolveResult:
        if self.backend is not None:
            try:
                rec = self.backend.fetch(key)
            except Exception as exc:  # network trouble must never stop a run
                log.warning("live lookup of %r failed, treating as unlinkable: %s", key, exc)
                return Unlinkable(key)
            if rec is None:
                return Unlinkable(key)
            try:
                parse_smiles(rec.smiles)
            except SmilesError as exc:
                log.warning("structure for %r is outside the supported SMILES grammar: %s", key, exc)
                return Unlinkable(key)
            return Linked(rec)
        rec = self.store.by_name(key) or self.store.by_synonym(key)
        return Linked(rec) if rec is not None else Unlinkable(key)

    def resolve(self, mention: str) -> ResolveResult:
        key = normalize(mention)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        result = self._lookup(key)
        with self._lock:
            return self._cache.setdefault(key, result)

    def save_cache(self) -> None:
        if not self.cache_path:
            return
        with self._lock:
            payload = {
                k: (v.record.to_json() if isinstance(v, Linked) else None) for k, v in sorted(self._cache.items())
            }
        self.cache_path.write_text(json.dumps(payload, indent=1))

    def report(self, mentions: Iterable[str]) -> dict:
        """Linked/unlinkable counts over mention occurrences and distinct mentions."""
        occ = Counter()
        distinct: dict[str, bool] = {}
        for m in mentions:
            linked = isinstance(self.resolve(m), Linked)
            occ["linked" if linked else "unlinkable"] += 1
            distinct[normalize(m)] = linked
        total = occ["linked"] + occ["unlinkable"]
        return {
            "mentions": total,
            "linked": occ["linked"],
            "unlinkable": occ["unlinkable"],
            "unlinkable_rate": occ["unlinkable"] / total if total else 0.0,
            "distinct_mentions": len(distinct),
            "distinct_linked": sum(distinct.values()),
            "distinct_unlinkable": len(distinct) - sum(distinct.values()),
        }


def make_resolver(mode: str, fixtures: str | Path | None, live: dict | None = None, cache_path=None) -> Resolver:
    if mode == "fixture":
        if fixtures is None:
            raise ValueError("fixture mode needs a fixture file")
        return Resolver(ingest_fixtures(fixtures), cache_path=cache_path)
    if mode == "live":
        return Resolver(backend=PugRestBackend(LiveConfig.from_dict(live)), cache_path=cache_path)
    raise ValueError(f"unknown resolver mode {mode!r}")
