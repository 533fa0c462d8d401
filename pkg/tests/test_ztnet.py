import socket
import struct
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from elwe.errors import ConfigurationError, FormatError, TransportFailure
from elwe.formats import encode_ciphertexts
from elwe.lwe import LweParams, encrypt_bytes
from elwe.ztnet import attack
from elwe.ztnet.agent import Agent, AgentContext, ModelService, RoleRule
from elwe.ztnet.cache import LruCache
from elwe.ztnet.config import load_config
from elwe.ztnet.keyring import KeyRing, epoch_keypair
from elwe.ztnet.metrics import MetricsLedger, metrics_report, summary_stats
from elwe.ztnet.pipeline import Pipeline, Response
from elwe.ztnet.policy import (Policy, Reason, Request, Token, broker_validate, make_proof,
                               request_for)
from elwe.ztnet.server import AgentServer, BrokerServer, RemoteAgent
from elwe.ztnet.transport import (InMemoryTransport, ReconnectPolicy, SimClock, TcpTransport,
                                  client_send, decode_frame, encode_frame, read_frame)

NOW = 1_700_000_000_000
DAY = 24 * 3600 * 1000
PARAMS = LweParams(16, 4096, 13, 3.2)
KEY_SEED = "0.8660254037"


def _token(tid="t1", scope=("gpt",), issued=NOW - DAY, expires=NOW + DAY):
    return Token(tid, bytes([len(tid)]) * 32, frozenset(scope), issued, expires)


def _policy(*tokens, skew=0):
    tokens = tokens or (_token(),)
    return Policy(["10.0.0.0/8", "127.0.0.0/8"], tokens,
                  {"gpt": "gpt", "bert": "bert", "llama": "llama"}, skew)


def _payload(text=b"hello", epoch=0):
    pk = epoch_keypair(PARAMS, KEY_SEED, epoch).public
    return encode_ciphertexts(encrypt_bytes(pk, text, "0.1732"), PARAMS.n, PARAMS.q)


PAYLOAD = _payload()


# -- broker ---------------------------------------------------------------------

def test_accepts_valid():
    tok = _token()
    d = broker_validate(_policy(tok), request_for(tok, "c", "10.1.2.3", "gpt", PAYLOAD, NOW), NOW)
    assert d.accepted and d.reason is Reason.OK and d.bytes_processed == len(PAYLOAD) + 32


def test_check_order_first_failure_wins():
    tok = _token()
    pol = _policy(tok)
    expired_now = NOW + 2 * DAY
    # outside IP with an expired token and wrong scope still reports the IP
    req = request_for(tok, "c", "8.8.8.8", "bert", PAYLOAD, expired_now)
    assert broker_validate(pol, req, expired_now).reason is Reason.IP_NOT_WHITELISTED
    req = request_for(tok, "c", "10.0.0.1", "bert", PAYLOAD, expired_now, token_id="nope")
    assert broker_validate(pol, req, expired_now).reason is Reason.INVALID_TOKEN
    req = request_for(tok, "c", "10.0.0.1", "bert", PAYLOAD, expired_now)
    assert broker_validate(pol, req, expired_now).reason is Reason.EXPIRED_TOKEN
    req = request_for(tok, "c", "10.0.0.1", "bert", PAYLOAD, NOW)
    assert broker_validate(pol, req, NOW).reason is Reason.SCOPE_VIOLATION


def test_bad_mac_and_malformed():
    tok = _token()
    pol = _policy(tok)
    good = request_for(tok, "c", "10.0.0.1", "gpt", PAYLOAD, NOW)
    tampered = Request(good.client_id, good.source_ip, good.token_id, good.token_proof,
                       good.timestamp, good.model, PAYLOAD[:-1] + bytes([PAYLOAD[-1] ^ 1]))
    assert broker_validate(pol, tampered, NOW).reason is Reason.INVALID_TOKEN
    short = Request("c", "10.0.0.1", "t1", b"x", NOW, "gpt", PAYLOAD)
    assert broker_validate(pol, short, NOW).reason is Reason.MALFORMED
    junk = request_for(tok, "c", "10.0.0.1", "gpt", b"not a ciphertext", NOW)
    assert broker_validate(pol, junk, NOW).reason is Reason.MALFORMED
    bad_ip = request_for(tok, "c", "999.1.1.1", "gpt", PAYLOAD, NOW)
    assert broker_validate(pol, bad_ip, NOW).reason is Reason.MALFORMED


def test_revocation_and_skew():
    tok = _token(expires=NOW)
    pol = _policy(tok, skew=500)
    req = request_for(tok, "c", "10.0.0.1", "gpt", PAYLOAD, NOW)
    assert broker_validate(pol, req, NOW + 500).accepted
    assert broker_validate(pol, req, NOW + 501).reason is Reason.EXPIRED_TOKEN
    pol.revoke("t1")
    assert broker_validate(pol, req, NOW).reason is Reason.INVALID_TOKEN


def test_proof_is_hmac_sha256():
    import hashlib
    import hmac
    secret = b"k" * 32
    msg = b"|".join([b"c", b"5", b"gpt", hashlib.sha256(b"p").digest()])
    assert make_proof(secret, "c", 5, "gpt", b"p") == hmac.new(secret, msg, hashlib.sha256).digest()


def test_token_and_policy_validation():
    with pytest.raises(ConfigurationError):
        Token("x", b"short", frozenset({"gpt"}), 0, 1)
    with pytest.raises(ConfigurationError):
        Token("x", b"k" * 32, frozenset(), 0, 1)
    with pytest.raises(ConfigurationError):
        Token("x", b"k" * 32, frozenset({"gpt"}), 5, 5)
    with pytest.raises(ConfigurationError):
        Policy(["10.0.0.0/33"], [], {})
    with pytest.raises(ConfigurationError):
        load_config({"whitelist": []})


@given(st.text(max_size=20), st.integers(0, 2**40), st.binary(max_size=40), st.integers(0, 9))
def test_request_wire_roundtrip(cid, ts, payload, epoch):
    req = Request(cid, "10.0.0.1", "t", b"p" * 32, ts, "gpt", payload, epoch)
    assert Request.from_wire(decode_frame(encode_frame(req.to_wire()))) == req


def test_request_from_wire_rejects():
    with pytest.raises(FormatError):
        Request.from_wire({"client_id": "c"})
    with pytest.raises(FormatError):
        Request.from_wire({"client_id": "c", "source_ip": "x", "token_id": "t", "proof": "zz",
                           "ts": 1, "model": "m", "payload": ""})


def test_attack_suite_exact_counts():
    pol = attack.default_policy(NOW, seed=3)
    ledger = attack.run_attack_suite(pol, attack.AttackMix(35, 42, 23), seed=3, legit=10, now=NOW)
    assert ledger.reasons == {"invalid_token": 35, "ip_not_whitelisted": 42,
                              "expired_token": 23, "ok": 10}
    assert ledger.ground_truth_mismatches == 0
    assert attack.AttackMix.parse("1,2,3").total == 6


def test_micro_segmentation():
    llama = _token("tok-llama", scope=("llama",))
    pol = _policy(llama)
    for k in range(20):
        req = request_for(llama, f"c{k}", "10.0.0.1", "bert", PAYLOAD, NOW + k)
        assert broker_validate(pol, req, NOW + k).reason is Reason.SCOPE_VIOLATION


# -- cache, trace ----------------------------------------------------------------

def test_lru_eviction_order():
    c = LruCache(3)
    for k in "abc":
        c.put(k, k.upper())
    assert c.keys() == ["a", "b", "c"]
    assert c.get("a") == "A"
    assert c.keys() == ["b", "c", "a"]
    c.put("d", "D")
    assert "b" not in c and c.keys() == ["c", "a", "d"]
    c.put("c", "C2")
    assert c.keys() == ["a", "d", "c"] and c.get("c") == "C2"
    assert c.get("zz") is None
    assert (c.hits, c.misses) == (2, 1)
    with pytest.raises(ValueError):
        LruCache(0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 6)), max_size=60), st.integers(1, 5))
def test_lru_matches_reference_model(ops, cap):
    cache, model = LruCache(cap), []
    for is_put, key in ops:
        if is_put:
            cache.put(key, key)
            if key in model:
                model.remove(key)
            model.append(key)
            model = model[-cap:]
        else:
            got = cache.get(key)
            assert (got is not None) == (key in model)
            if key in model:
                model.remove(key)
                model.append(key)
        assert cache.keys() == model


def test_replay_trace_hit_rate():
    trace = attack.replay_trace(5000, 0.92, seed=1)
    assert attack.trace_hit_rate(trace) >= 0.90
    assert attack.trace_hit_rate(attack.replay_trace(500, 0.0, seed=1)) == 0.0


def test_cpa_distinct(small_keypair):
    assert attack.cpa_distinct_fraction(small_keypair.public, 1, 50, "0.3") == 1.0


# -- transport -------------------------------------------------------------------

def test_frame_layout():
    frame = encode_frame({"b": 1, "a": [1, 2]})
    assert frame[:4] == struct.pack("<I", len(frame) - 4)
    assert frame[4:] == b'{"a":[1,2],"b":1}'
    for bad in (frame[:3], frame[:-1], struct.pack("<I", 2) + b"[]x", struct.pack("<I", 1) + b"{"):
        with pytest.raises(FormatError):
            decode_frame(bad)


def _echo(frame):
    return encode_frame({"echo": decode_frame(frame)})


def test_retry_schedule():
    clock = SimClock(0)
    ledger = MetricsLedger()
    t = InMemoryTransport.dropping_first(_echo, 2)
    res = client_send({"x": 1}, t, clock=clock, ledger=ledger)
    assert res.response == {"echo": {"x": 1}}
    assert len(res.attempts) == 3 and res.backoffs == [500, 1000]
    assert all(100 <= a.jitter_ms <= 300 for a in res.attempts if not a.ok)
    assert clock.now_ms() == sum(a.backoff_ms + a.jitter_ms for a in res.attempts if not a.ok)
    assert ledger.reconnect_successes == 1


def test_retry_gives_up():
    t = InMemoryTransport(_echo, drop_forever=True)
    with pytest.raises(TransportFailure) as info:
        client_send({"x": 1}, t, clock=SimClock())
    assert [a.backoff_ms for a in info.value.attempts] == [500, 1000, 2000, 4000]


def test_backoff_cap():
    assert [ReconnectPolicy().backoff(k) for k in range(6)] == [500, 1000, 2000, 4000, 5000, 5000]


# -- keyring, agent, pipeline ------------------------------------------------------

def test_keyring_rotation():
    ring = KeyRing(PARAMS, KEY_SEED, rotate_after_ms=1000, rotate_after_requests=3, now_ms=0)
    assert ring.note_request(10) == 0 and ring.note_request(20) == 0
    assert ring.note_request(30) == 1
    # age is measured from the last rotation at t=30
    assert ring.note_request(1029) == 1
    assert ring.note_request(1030) == 2
    assert ring.get(1) == epoch_keypair(PARAMS, KEY_SEED, 1)
    with pytest.raises(Exception):
        ring.get(0)


def _agent(sleep=lambda ms: None, roles=None):
    ring = KeyRing(PARAMS, KEY_SEED, now_ms=NOW)
    roles = roles or {"analyst": RoleRule(frozenset({"gpt", "bert", "llama"}))}
    return Agent(ring, roles, ModelService(["gpt", "bert"], sleep=sleep))


def test_agent_single_use_grant():
    agent = _agent()
    tok = _token()
    req = request_for(tok, "c", "10.0.0.1", "gpt", PAYLOAD, NOW)
    decision, grant = agent.validate(req, AgentContext("analyst", NOW, "gpt"))
    assert decision.accepted and grant.prompt == b"hello"
    assert agent.respond(grant)[1] == b"gpt:hello"
    again = agent.respond(grant)
    assert again[1] is None and again[0].reason is Reason.EXPIRED_TOKEN


def test_agent_context_checks():
    roles = {"night": RoleRule(frozenset({"gpt"}), 22, 24)}
    agent = _agent(roles=roles)
    req = request_for(_token(), "c", "10.0.0.1", "gpt", PAYLOAD, NOW)
    noon = (NOW // DAY) * DAY + 12 * 3600 * 1000
    assert agent.validate(req, AgentContext("night", noon, "gpt"))[0].reason is Reason.SCOPE_VIOLATION
    assert agent.validate(req, AgentContext("nobody", NOW, "gpt"))[0].reason is Reason.SCOPE_VIOLATION
    late = noon + 10 * 3600 * 1000 + 1
    assert agent.validate(req, AgentContext("night", late, "gpt"))[0].accepted
    wrong_epoch = request_for(_token(), "c", "10.0.0.1", "gpt", PAYLOAD, NOW, epoch=5)
    assert agent.validate(wrong_epoch, AgentContext("night", late, "gpt"))[0].reason is Reason.MALFORMED


def test_pipeline_cache_and_metrics():
    tok = _token(scope=("gpt", "llama"))
    slept = []
    pipe = Pipeline(_policy(tok), _agent(sleep=slept.append), clock=SimClock(NOW))
    req = request_for(tok, "c", "10.0.0.1", "gpt", PAYLOAD, NOW)
    first = pipe.handle(req)
    assert first.ok and first.body == b"gpt:hello" and slept == [480]
    second = pipe.handle(request_for(tok, "c", "10.0.0.1", "gpt", PAYLOAD, NOW + 5))
    assert second.body == b"gpt:hello" and slept == [480]
    assert (pipe.ledger.cache_hits, pipe.ledger.cache_misses) == (1, 1)
    # cache hits still pass through the broker
    assert pipe.handle(req, now=NOW + 3 * DAY).reason == "expired_token"
    # llama is in scope but not served by the model service
    assert pipe.handle(request_for(tok, "c", "10.0.0.1", "llama", PAYLOAD, NOW)).reason \
        == "scope_violation"
    assert pipe.ledger.reasons["ok"] == 2
    report = metrics_report(pipe.ledger)
    assert "total" in report["components"] and "encrypt" in report["omitted"]


def test_pipeline_frame_interface():
    tok = _token()
    pipe = Pipeline(_policy(tok), _agent(), clock=SimClock(NOW))
    out = decode_frame(pipe.handle_frame(encode_frame(
        request_for(tok, "c", "10.0.0.1", "gpt", PAYLOAD, NOW).to_wire())))
    assert Response.from_wire(out).body == b"gpt:hello"
    bad = decode_frame(pipe.handle_frame(encode_frame({"nope": 1})))
    assert bad["reason"] == "malformed"


def test_pipeline_concurrent_clients():
    tok = _token()
    pipe = Pipeline(_policy(tok), _agent(), clock=SimClock(NOW), admission=4)
    results = []

    def worker(k):
        payload = _payload(f"m{k}".encode())
        results.append(pipe.handle(request_for(tok, f"c{k}", "10.0.0.1", "gpt", payload, NOW)))

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(12)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(r.body for r in results) == sorted(f"gpt:m{k}".encode() for k in range(12))
    assert pipe.ledger.total == 12


# -- metrics --------------------------------------------------------------------

def test_summary_stats_reference():
    s = summary_stats(range(1, 101))
    assert s["p50"] == 50.5 and s["iqr"] == 50.0
    assert s["mean"] == 50.5 and s["std"] == pytest.approx(np.std(range(1, 101), ddof=1))
    const = summary_stats([7.3] * 9)
    assert const["std"] == 0.0 and const["cv"] == 0.0 and const["p95"] == 7.3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=2, max_size=50))
def test_percentiles_match_scipy_hazen(xs):
    s = summary_stats(xs)
    # hazen plotting positions are scipy's alphap = betap = 0.5
    ref = stats.mstats.mquantiles(xs, [0.05, 0.25, 0.5, 0.75, 0.95], alphap=0.5, betap=0.5)
    got = [s[k] for k in ("p5", "p25", "p50", "p75", "p95")]
    assert got == pytest.approx(list(ref), rel=1e-9, abs=1e-9)
    assert s["min"] <= s["p5"] <= s["p50"] <= s["p95"] <= s["max"]


def test_metrics_report_omits_empty():
    rep = metrics_report({"encrypt": [1.0, 2.0], "network": []})
    assert set(rep["components"]) == {"encrypt"}
    assert rep["omitted"] == ["decrypt", "network", "model", "total"]


# -- TCP ------------------------------------------------------------------------

def _start(server):
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    return server


def test_tcp_broker_with_remote_agent():
    tok = Token("t1", b"\x02" * 32, frozenset({"gpt"}), 0, 10**14)
    pol = Policy(["127.0.0.0/8"], [tok], {"gpt": "gpt", "bert": "bert"})
    agent_srv = _start(AgentServer(("127.0.0.1", 0), _agent()))
    remote = RemoteAgent(TcpTransport(*agent_srv.address))
    broker = _start(BrokerServer(("127.0.0.1", 0), Pipeline(pol, remote, clock=SimClock(NOW))))
    try:
        transport = TcpTransport(*broker.address)
        # the frame claims an outside IP, but the socket peer is loopback
        req = request_for(tok, "c", "203.0.113.9", "gpt", PAYLOAD, NOW)
        res = client_send(req.to_wire(), transport)
        assert res.response["status"] == "ok"
        assert bytes.fromhex(res.response["body"]) == b"gpt:hello"
        denied = client_send(request_for(tok, "c", "127.0.0.1", "bert", PAYLOAD, NOW).to_wire(),
                             transport)
        assert denied.response["reason"] == "scope_violation"
        # broken frame: the server answers malformed and drops the connection
        with socket.create_connection(broker.address) as s:
            s.sendall(struct.pack("<I", 3) + b"{{{")
            assert read_frame(s)["reason"] == "malformed"
        transport.close()
    finally:
        broker.shutdown()
        agent_srv.shutdown()
        broker.server_close()
        agent_srv.server_close()


def test_tcp_broker_enforces_peer_ip():
    tok = Token("t1", b"\x02" * 32, frozenset({"gpt"}), 0, 10**14)
    pol = Policy(["10.0.0.0/8"], [tok], {"gpt": "gpt"})
    broker = _start(BrokerServer(("127.0.0.1", 0), Pipeline(pol, _agent(), clock=SimClock(NOW))))
    try:
        t = TcpTransport(*broker.address)
        res = client_send(request_for(tok, "c", "10.0.0.1", "gpt", PAYLOAD, NOW).to_wire(), t)
        assert res.response["reason"] == "ip_not_whitelisted"
        t.close()
    finally:
        broker.shutdown()
        broker.server_close()


def test_load_config():
    cfg = load_config({"whitelist": ["127.0.0.0/8"], "models": ["gpt"],
                       "tokens": [{"id": "a", "secret_hex": "11" * 32, "scope": "gpt",
                                   "issued_at": 0, "expires_at": 5}],
                       "lwe": {"params": "16,4096,13,3.2"}, "max_clients": 2})
    assert cfg.params == PARAMS and cfg.admission == 2
    assert cfg.policy.tokens["a"].model_scope == frozenset({"gpt"})
    assert "analyst" in cfg.roles


def test_lru_sixteen_example():
    c = LruCache()
    for k in range(1, 17):
        c.put(k, k)
    c.get(1)
    c.put(17, 17)
    assert 2 not in c and 1 in c and len(c) == 16
