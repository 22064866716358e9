import json

import pytest

from lagsim.backends import RemoteChatBackend, RemoteConfig, RuleTableBackend
from lagsim.core import build_pair_codebook
from lagsim.errors import CacheCorruption, ProviderRefusal, TransportError
from lagsim.verification import verify_rules

from conftest import MockChat, rule_table_replies

PROMPT = ("simulate", "the", "rules")


@pytest.fixture(scope="module")
def setup(compiled):
    system = compiled["increment"].system
    n = 1
    while n * n < len(system.alphabet):
        n += 1
    cb = build_pair_codebook(system.alphabet, [f"k{i}" for i in range(n)])
    return system, cb


def config(url, tmp_path, **kw):
    base = dict(endpoint=url, model="mock-1", cache_dir=str(tmp_path / "cache"), backoff=0.01, timeout=5)
    base.update(kw)
    return RemoteConfig(**base)


def test_remote_matches_rule_table_and_caches(setup, tmp_path, monkeypatch):
    monkeypatch.setenv("LAGSIM_API_KEY", "sekrit-value")
    system, cb = setup
    with MockChat(rule_table_replies(system, cb)) as mock:
        first = RemoteChatBackend(config(mock.url, tmp_path), PROMPT)
        rep1 = verify_rules(first, cb, PROMPT, system)
        assert rep1.ok and rep1.summary["total"] == len(system.table)
        assert first.network_calls == len(system.table)
        assert all(r["auth"] == "Bearer sekrit-value" for r in mock.requests)
        body = mock.requests[0]["body"]
        assert body["temperature"] == 0 and body["seed"] == 0
        assert body["messages"][0] == {"role": "system", "content": "simulate the rules"}

        second = RemoteChatBackend(config(mock.url, tmp_path), PROMPT)
        rep2 = verify_rules(second, cb, PROMPT, system)
        assert second.network_calls == 0
        assert len(mock.requests) == len(system.table)
    assert rep1.deterministic_json() == rep2.deterministic_json()
    oracle = verify_rules(RuleTableBackend(system, cb, PROMPT), cb, PROMPT, system)
    assert [v.observed for v in oracle.verdicts] == [v.observed for v in rep1.verdicts]
    for path in (tmp_path / "cache").iterdir():
        assert "sekrit" not in path.read_text()


def test_retries_then_succeeds(tmp_path):
    with MockChat({"a b": "c"}, fail_first=2) as mock:
        be = RemoteChatBackend(config(mock.url, tmp_path))
        assert be.respond(["a", "b"]) == "c"
    assert [a["status"] for a in be.attempts] == [500, 500, 200]
    assert be.network_calls == 3


def test_gives_up_after_max_attempts(tmp_path):
    with MockChat({}, fail_first=10, status=503) as mock:
        be = RemoteChatBackend(config(mock.url, tmp_path, max_attempts=2))
        with pytest.raises(TransportError):
            be.respond(["a"])
    assert len(be.attempts) == 2


def test_connection_refused_is_transport_error(tmp_path):
    be = RemoteChatBackend(config("http://127.0.0.1:9/v1", tmp_path, max_attempts=2, timeout=1))
    with pytest.raises(TransportError):
        be.respond(["a"])


def test_non_retryable_status(tmp_path):
    with MockChat({}, fail_first=1, status=400) as mock:
        be = RemoteChatBackend(config(mock.url, tmp_path))
        with pytest.raises(ProviderRefusal) as exc:
            be.respond(["a"])
    assert exc.value.status == 400 and len(be.attempts) == 1


def test_cache_corruption_detected(tmp_path):
    with MockChat({"a": "b"}) as mock:
        be = RemoteChatBackend(config(mock.url, tmp_path))
        be.respond(["a"])
    req = be.build_request(["a"])
    h = be.request_hash(req)
    resp_path = tmp_path / "cache" / f"{h}.response.json"
    data = json.loads(resp_path.read_text())
    data["request_sha256"] = "0" * 64
    resp_path.write_text(json.dumps(data))
    with pytest.raises(CacheCorruption):
        RemoteChatBackend(config(mock.url, tmp_path)).respond(["a"])
    resp_path.write_text("{not json")
    with pytest.raises(CacheCorruption):
        RemoteChatBackend(config(mock.url, tmp_path)).respond(["a"])


def test_config_rules(tmp_path):
    with pytest.raises(ValueError):
        RemoteConfig(endpoint="x", model="m", temperature=0.7)
    toml = tmp_path / "r.toml"
    toml.write_text('[remote]\nendpoint = "http://h/v1"\nmodel = "m"\nseed = 3\n')
    cfg = RemoteConfig.from_toml(toml)
    assert cfg.seed == 3 and cfg.temperature == 0
    toml.write_text('[remote]\nendpoint = "x"\nmodel = "m"\nbogus = 1\n')
    with pytest.raises(ValueError):
        RemoteConfig.from_toml(toml)
