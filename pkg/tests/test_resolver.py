import json
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import unquote

import pytest

from chemtyper.resolver import (
    ChemRecord,
    FixtureStore,
    FormatError,
    LiveConfig,
    Linked,
    PugRestBackend,
    Resolver,
    Unlinkable,
    ingest_fixtures,
    make_resolver,
)


def write_records(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def rec(name, smiles="CCO", description="a liquid", synonyms=()):
    return {"canonical_name": name, "synonyms": list(synonyms), "smiles": smiles, "description": description}


# ---------------------------------------------------------------- fixture mode


def test_bundled_fixture_links_ethyl_acetate(data_dir):
    r = make_resolver("fixture", data_dir / "fixtures.jsonl")
    result = r.resolve("ethyl acetate")
    assert isinstance(result, Linked)
    assert "Ethyl acetate" in result.record.description
    assert result.record.graph().num_atoms == 6


def test_absent_mention_unlinkable(data_dir):
    r = make_resolver("fixture", data_dir / "fixtures.jsonl")
    assert r.resolve("unobtainium-polymer X") == Unlinkable("unobtainium-polymer x")


def test_cache_hit_returns_same_content(data_dir):
    r = make_resolver("fixture", data_dir / "fixtures.jsonl")
    first = r.resolve("EtOAc")
    assert r.resolve("EtOAc") is first
    assert r.resolve("  etoac ") == first


def test_synonym_lookup_after_name(tmp_path):
    path = write_records(tmp_path / "f.jsonl", [rec("Alpha", synonyms=["beta"]), rec("Beta", smiles="C")])
    r = make_resolver("fixture", path)
    assert r.resolve("beta").record.canonical_name == "Beta"  # exact name beats synonym


def test_ambiguous_synonym_takes_first_record(tmp_path):
    path = write_records(tmp_path / "f.jsonl", [rec("One", synonyms=["shared"]), rec("Two", synonyms=["shared"])])
    assert make_resolver("fixture", path).resolve("shared").record.canonical_name == "One"


def test_ingest_three_valid(tmp_path):
    path = write_records(tmp_path / "f.jsonl", [rec("a"), rec("b"), rec("c")])
    assert len(ingest_fixtures(path)) == 3


def test_ingest_skips_bad_records(tmp_path):
    path = write_records(tmp_path / "f.jsonl", [rec("a"), rec("b", smiles="C1CC"), rec("c", description="  ")])
    store = ingest_fixtures(path)
    assert len(store) == 1
    assert store.report.bad_smiles == 1 and store.report.empty_description == 1
    assert store.report.skipped_names == ["b", "c"]


def test_duplicate_name_last_wins(tmp_path):
    path = write_records(tmp_path / "f.jsonl", [rec("a", smiles="C"), rec("A", smiles="CC")])
    store = ingest_fixtures(path)
    assert len(store) == 1 and store.report.duplicates == 1
    assert store.by_name("a").smiles == "CC"


def test_ingest_errors(tmp_path):
    with pytest.raises(OSError):
        ingest_fixtures(tmp_path / "missing.jsonl")
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"canonical_name": "x"\n')
    with pytest.raises(FormatError):
        ingest_fixtures(bad)


def test_bundled_ingest_report(data_dir):
    report = ingest_fixtures(data_dir / "fixtures.jsonl").report
    assert (report.lines, report.loaded, report.bad_smiles, report.empty_description, report.duplicates) == (22, 19, 1, 1, 1)


def test_report_counts():
    store = FixtureStore([ChemRecord("water", "O", "wet")])
    r = Resolver(store)
    rep = r.report(["water", "Water", "mystery", "water"])
    assert rep == {
        "mentions": 4, "linked": 3, "unlinkable": 1, "unlinkable_rate": 0.25,
        "distinct_mentions": 2, "distinct_linked": 1, "distinct_unlinkable": 1,
    }


def test_concurrent_resolution_is_consistent(data_dir):
    r = make_resolver("fixture", data_dir / "fixtures.jsonl")
    names = ["water", "thf", "zeolite", "EtOAc", "nothing"] * 40
    with ThreadPoolExecutor(8) as pool:
        results = list(pool.map(r.resolve, names))
    for name, result in zip(names, results):
        assert result is r.resolve(name)


def test_disk_cache_round_trip(tmp_path, data_dir):
    cache = tmp_path / "cache.json"
    r = make_resolver("fixture", data_dir / "fixtures.jsonl", cache_path=cache)
    linked, missing = r.resolve("water"), r.resolve("nothing")
    r.save_cache()
    fresh = Resolver(FixtureStore(), cache_path=cache)
    assert fresh.resolve("water") == linked
    assert fresh.resolve("nothing") == missing


# ---------------------------------------------------------------- live mode


class FakePubChem(BaseHTTPRequestHandler):
    compounds = {
        "ethyl acetate": (8857, "CCOC(=O)C", "Ethyl Acetate", ["Ethyl acetate is a colorless liquid."]),
        "weird": (1, "C1CC", "Weird", ["broken ring"]),
        "nodesc": (2, "C", "Nodesc", []),
    }
    hits: list[str] = []

    def log_message(self, *args):
        pass

    def _send(self, code, obj=None):
        body = json.dumps(obj or {}).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        FakePubChem.hits.append(self.path)
        parts = [unquote(p) for p in self.path.split("/")]
        if "boom" in self.path:
            return self._send(503)
        if parts[1:3] == ["compound", "name"]:
            entry = self.compounds.get(parts[3])
            if entry is None:
                return self._send(404, {"Fault": {"Code": "PUGREST.NotFound"}})
            cid, smiles, title, _ = entry
            return self._send(200, {"PropertyTable": {"Properties": [{"CID": cid, "CanonicalSMILES": smiles, "Title": title}]}})
        if parts[1:3] == ["compound", "cid"]:
            for cid, _, title, descs in self.compounds.values():
                if str(cid) == parts[3]:
                    info = [{"CID": cid, "Title": title}] + [{"CID": cid, "Description": d} for d in descs]
                    return self._send(200, {"InformationList": {"Information": info}})
        return self._send(404)


@pytest.fixture
def live_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), FakePubChem)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    FakePubChem.hits = []
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


def test_live_lookup_maps_response(live_server):
    r = make_resolver("live", None, {"base_url": live_server, "timeout": 2, "retries": 0})
    result = r.resolve("Ethyl Acetate")
    assert isinstance(result, Linked)
    assert result.record.canonical_name == "Ethyl Acetate"
    assert result.record.smiles == "CCOC(=O)C"
    assert result.record.description == "Ethyl acetate is a colorless liquid."
    assert FakePubChem.hits[0] == "/compound/name/ethyl%20acetate/property/CanonicalSMILES,Title/JSON"
    r.resolve("ethyl acetate")
    assert len(FakePubChem.hits) == 2  # cached


@pytest.mark.parametrize("name", ["absent", "weird", "nodesc", "boom"])
def test_live_failures_degrade_to_unlinkable(live_server, name):
    r = make_resolver("live", None, {"base_url": live_server, "timeout": 2, "retries": 1})
    assert r.resolve(name) == Unlinkable(name)


def test_live_unreachable_server_is_unlinkable(caplog):
    backend = PugRestBackend(LiveConfig("http://127.0.0.1:9", timeout=0.5, retries=0))
    r = Resolver(backend=backend)
    assert r.resolve("water") == Unlinkable("water")
    assert any("unlinkable" in rec.message for rec in caplog.records)
