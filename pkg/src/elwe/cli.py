"""Command-line entry point: ``elwe <group> <command> [flags]``.

Exit codes: 0 success, 1 domain error, 2 usage error. Failures print one
line ``error:<tag>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import threading
from pathlib import Path
from typing import Optional, Sequence

from . import agility, engel, formats, lwe, noise, wiretap
from .errors import ElweError, FormatError

log = logging.getLogger("elwe")


# -- output helpers --------------------------------------------------------------

def atomic_write(path, data) -> None:
    """Write via a temp sibling and rename, so readers never see a partial file."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp",
                               dir=path.parent if str(path.parent) else ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def emit(text: str, out: Optional[str]) -> None:
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def read_input(path: str) -> bytes:
    if path == "-":
        return sys.stdin.buffer.read()
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from None


def read_json(path: str):
    try:
        return json.loads(read_input(path))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


# -- engel -----------------------------------------------------------------------

def cmd_engel_expand(args) -> int:
    seq = engel.engel_expand(args.seed, args.terms)
    emit("".join(f"{a}\n" for a in seq.coefficients), args.out)
    return 0


def cmd_engel_stream(args) -> int:
    stream = engel.CoefficientStream(args.seed, block_size=args.block,
                                     shuffle=not args.no_shuffle)
    emit("".join(f"{a}\n" for a in stream.next(args.count)), args.out)
    return 0


# -- lwe -------------------------------------------------------------------------

def _key_from_args(args, want: str):
    if args.key:
        data = read_input(args.key)
        return formats.load_public(data) if want == "public" else formats.load_secret(data)
    if not (args.params and args.key_seed):
        raise FormatError("give --key FILE, or --params with --key-seed")
    kp = lwe.regenerate_keypair(lwe.LweParams.parse(args.params), args.key_seed)
    return kp.public if want == "public" else kp.secret


def cmd_lwe_keygen(args) -> int:
    params = lwe.LweParams.parse(args.params)
    if args.record == "seed":
        engel.parse_seed(args.seed)
        data = formats.encode_seed(params, args.seed)
    else:
        kp = lwe.keygen(params, args.seed)
        data = (formats.encode_public(kp.public, int16=args.int16) if args.record == "public"
                else formats.encode_secret(kp.secret))
    atomic_write(args.out, data)
    log.info("wrote %s record (%d bytes) to %s", args.record, len(data), args.out)
    return 0


def cmd_lwe_encrypt(args) -> int:
    pk = _key_from_args(args, "public")
    message = read_input(args.input)
    cts = lwe.encrypt_bytes(pk, message, args.seed)
    data = formats.encode_ciphertexts(cts, pk.params.n, pk.params.q)
    atomic_write(args.out, data)
    if message:
        log.info("payload expansion %.1fx", len(data) / len(message))
    return 0


def cmd_lwe_decrypt(args) -> int:
    sk = _key_from_args(args, "secret")
    n, q, cts = formats.decode_ciphertexts(read_input(args.input))
    if (n, q) != (sk.params.n, sk.params.q):
        raise FormatError(f"ciphertext is for n={n}, q={q}; key is n={sk.params.n}, q={sk.params.q}")
    atomic_write(args.out, lwe.decrypt_bytes(sk, cts))
    return 0


# -- agility ---------------------------------------------------------------------

def cmd_agility_check(args) -> int:
    f = agility.check_morphism(agility.ParamTriple.parse(args.source),
                               agility.ParamTriple.parse(args.target))
    emit(dump_json({"valid": True, "from": str(f.source), "to": str(f.target),
                    "exact_scaling": f.exact_scaling}), args.out)
    return 0


def cmd_agility_score(args) -> int:
    f = agility.check_morphism(agility.ParamTriple.parse(args.source),
                               agility.ParamTriple.parse(args.target))
    report = agility.consistency_score(f, args.trials, args.seed)
    emit(dump_json(report.to_json()), args.out)
    return 0


def _ct_to_json(ct) -> dict:
    if isinstance(ct, lwe.Ciphertext):
        return {"c1": list(ct.c1), "c2": ct.c2}
    return {"value": ct.value}


def _ct_from_json(obj):
    if "c2" in obj:
        return lwe.Ciphertext(tuple(int(x) for x in obj["c1"]), int(obj["c2"]))
    return agility.XorCiphertext(int(obj["value"]))


def _secret_along(registry, path: Sequence[str]):
    """Secret for a ciphertext whose key started at path[0] and was transported along path."""
    sk = registry.keys(path[0])[1]
    for a, b in zip(path, path[1:]):
        f = agility.check_morphism(registry.get(a).triple, registry.get(b).triple)
        sk = agility.transport_secret(f, sk)
    return sk


def cmd_agility_transition(args) -> int:
    registry = agility.default_registry()
    state_dir = Path(args.state)
    state_dir.mkdir(parents=True, exist_ok=True)
    state_file = state_dir / "state.json"
    if state_file.exists():
        state = read_json(str(state_file))
    else:
        desc = registry.get(args.source)
        pk = registry.keys(args.source)[0]
        bits = [a & 1 for a in engel.CoefficientStream(args.seed).next(args.items)]
        stream = engel.CoefficientStream(engel.next_seed(engel.parse_seed(args.seed)))
        cts = [lwe.encrypt_bit_from_stream(pk, b, stream) if desc.kind == "lwe"
               else desc.encrypt(pk, b, args.seed) for b in bits]
        state = {"active": args.source,
                 "inflight": [{"ct": _ct_to_json(c), "key_path": [args.source], "bit": b}
                              for c, b in zip(cts, bits)]}
    if state["active"] != args.source:
        raise FormatError(f"state is on scheme {state['active']!r}, not {args.source!r}")
    registry._set_active(args.source)
    items = [(_ct_from_json(it["ct"]), _secret_along(registry, it["key_path"]))
             for it in state["inflight"]]
    report = agility.transition_scheme(registry, args.source, args.target, items)
    new_inflight = []
    for old, item, (ct, _) in zip(state["inflight"], report.items, report.migrated):
        path = old["key_path"] + [args.target] if item.path == "transport" else [args.target]
        new_inflight.append({"ct": _ct_to_json(ct), "key_path": path, "bit": old["bit"]})
    if args.source == args.target:
        new_inflight = state["inflight"]
    atomic_write(state_file, dump_json({"active": args.target, "inflight": new_inflight}))
    out = report.to_json()
    out.pop("items")
    emit(dump_json(out), args.out)
    return 0


# -- noise -----------------------------------------------------------------------

def _ints(text: str) -> list:
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise FormatError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise FormatError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_noise_sweep(args) -> int:
    reports = noise.divergence_sweep(_ints(args.n), _ints(args.q), _floats(args.sigma),
                                     args.per_cell, args.seed, args.bins,
                                     noise.Generator(args.engel))
    emit(noise.sweep_csv(reports), args.out)
    return 0


def _batch(gen: str, sigma: float, count: int, args):
    g = noise.Generator(gen)
    if g is noise.Generator.GAUSSIAN:
        return noise.sample_gaussian(sigma, count, args.rng_seed)
    if g is noise.Generator.ENGEL_PHI:
        return noise.sample_engel_phi(sigma, count)
    params = lwe.LweParams.parse(args.params) if args.params else \
        lwe.LweParams(256, 1 << 20, 13, sigma)
    return noise.sample_engel_diff(params, args.seed, count)


def cmd_noise_compare(args) -> int:
    a = _batch(args.gen_a, args.sigma, args.count, args)
    b = _batch(args.gen_b, args.sigma, args.count, args)
    report = noise.compare(a.samples, b.samples, args.bins)
    emit(dump_json({"gen_a": args.gen_a, "gen_b": args.gen_b, "sigma": args.sigma,
                    "count": args.count, "wasserstein": report.wasserstein, "kl": report.kl,
                    "bins": report.bins,
                    "ks_a": noise.ks_statistic(a.samples, args.sigma),
                    "ks_b": noise.ks_statistic(b.samples, args.sigma)}), args.out)
    return 0


# -- wiretap ---------------------------------------------------------------------

def cmd_wiretap_region(args) -> int:
    points = wiretap.security_region(wiretap.parse_grid(args.main), wiretap.parse_grid(args.eve),
                                     wiretap.parse_grid(args.delta))
    emit(wiretap.region_csv(points), args.out)
    return 0


def cmd_wiretap_its(args) -> int:
    report = wiretap.its_sim(args.n, args.q, args.sigma, args.adv_sigma, args.trials,
                             args.mode, args.seed, rng_seed=args.rng_seed)
    emit(dump_json(report.to_json()), args.out)
    return 0


# -- ztnet -----------------------------------------------------------------------

def _zt_config(path: Optional[str]):
    from .ztnet.attack import DEFAULT_MODELS, DEFAULT_WHITELIST
    from .ztnet.config import load_config
    if path:
        return load_config(read_json(path))
    return load_config({"whitelist": list(DEFAULT_WHITELIST), "tokens": [],
                        "models": {m: m for m in DEFAULT_MODELS}})


def _serve(server, args) -> int:
    from .ztnet.server import serve

    def ready(addr):
        print(f"listening on {addr[0]}:{addr[1]}", flush=True)
        if args.ready_file:
            atomic_write(args.ready_file, f"{addr[0]}:{addr[1]}\n")

    if args.max_requests is not None:
        threading.Thread(target=_stop_after, args=(server, args.max_requests),
                         daemon=True).start()
    serve(server, ready)
    return 0


def _stop_after(server, count: int) -> None:
    import time
    while server.served < count:
        time.sleep(0.01)
    server.shutdown()


def _count_requests(server) -> None:
    server.served = 0
    inner = server.process

    def process(obj, peer):
        try:
            return inner(obj, peer)
        finally:
            server.served += 1

    server.process = process


def cmd_zt_broker(args) -> int:
    from .ztnet.server import BrokerServer, RemoteAgent, parse_address
    from .ztnet.transport import TcpTransport
    cfg = _zt_config(args.config)
    agent = None
    if args.agent:
        agent = RemoteAgent(TcpTransport(*parse_address(args.agent)))
    server = BrokerServer(parse_address(args.listen), cfg.pipeline(agent=agent),
                          trust_frame_ip=args.trust_frame_ip)
    _count_requests(server)
    return _serve(server, args)


def cmd_zt_agent(args) -> int:
    from .ztnet.server import AgentServer, parse_address
    from .ztnet.transport import RealClock
    cfg = _zt_config(args.config)
    models = args.models.split(",") if args.models else None
    agent = cfg.agent(models, now_ms=RealClock().now_ms())
    server = AgentServer(parse_address(args.listen), agent)
    _count_requests(server)
    return _serve(server, args)


def cmd_zt_client(args) -> int:
    from .ztnet.keyring import epoch_keypair
    from .ztnet.policy import request_for
    from .ztnet.server import parse_address
    from .ztnet.transport import RealClock, TcpTransport, client_send
    cfg = _zt_config(args.config)
    token = cfg.policy.tokens.get(args.token_id)
    if token is None:
        raise FormatError(f"token {args.token_id!r} not in config")
    now = args.now if args.now is not None else RealClock().now_ms()
    pk = epoch_keypair(cfg.params, cfg.seed, args.epoch).public
    payload = formats.encode_ciphertexts(
        lwe.encrypt_bytes(pk, args.send.encode("utf-8"), args.enc_seed),
        cfg.params.n, cfg.params.q)
    req = request_for(token, args.client_id, args.source_ip, args.model, payload, now,
                      epoch=args.epoch)
    transport = TcpTransport(*parse_address(args.connect))
    try:
        result = client_send(req.to_wire(), transport, rng_seed=args.rng_seed)
    finally:
        transport.close()
    resp = result.response
    body = bytes.fromhex(resp.get("body", ""))
    emit(dump_json({"status": resp.get("status"), "reason": resp.get("reason"),
                    "body": body.decode("utf-8", "replace"), "epoch": resp.get("epoch"),
                    "attempts": len(result.attempts)}), args.out)
    return 0 if resp.get("status") == "ok" else 1


def cmd_zt_attack(args) -> int:
    from .ztnet.attack import AttackMix, default_policy, run_attack_suite
    now = args.now if args.now is not None else 1_700_000_000_000
    policy = _zt_config(args.config).policy if args.config else default_policy(now, args.seed)
    ledger = run_attack_suite(policy, AttackMix.parse(args.mix), args.seed, args.legit, now)
    doc = ledger.to_json() if args.timings else ledger.counts_json()
    emit(dump_json(doc), args.out)
    return 0


def cmd_zt_report(args) -> int:
    from .ztnet.metrics import metrics_report
    doc = read_json(args.input)
    if not isinstance(doc, dict):
        raise FormatError("report input must be a JSON object")
    if "components" in doc:
        components = doc["components"]
    elif "per_reason" in doc:
        components = {}  # counts-only ledger, no latency samples
    else:
        components = doc
    if not isinstance(components, dict) or not all(
            isinstance(v, list) and all(isinstance(x, (int, float)) for x in v)
            for v in components.values()):
        raise FormatError("components must map names to lists of numbers")
    emit(dump_json(metrics_report(components)), args.out)
    return 0


# -- parser ----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error:usage: {message}\n")
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="elwe", description="Engel-seeded LWE toolkit")
    groups = p.add_subparsers(dest="group", metavar="{engel,lwe,agility,noise,wiretap,ztnet}",
                              parser_class=_Parser)

    def group(name, help_text):
        g = groups.add_parser(name, help=help_text)
        return g.add_subparsers(dest="command", parser_class=_Parser)

    def out(sp):
        sp.add_argument("--out", help="output file (default stdout)")

    eg = group("engel", "Engel expansions and coefficient streams")
    sp = eg.add_parser("expand")
    sp.add_argument("--seed", required=True)
    sp.add_argument("--terms", type=int, default=64)
    out(sp)
    sp.set_defaults(func=cmd_engel_expand)
    sp = eg.add_parser("stream")
    sp.add_argument("--seed", required=True)
    sp.add_argument("--count", type=int, default=16)
    sp.add_argument("--block", type=int, default=64)
    sp.add_argument("--no-shuffle", action="store_true")
    out(sp)
    sp.set_defaults(func=cmd_engel_stream)

    lg = group("lwe", "key generation, encryption, decryption")
    sp = lg.add_parser("keygen")
    sp.add_argument("--params", required=True, help="n,q,p,sigma[,alpha]")
    sp.add_argument("--seed", required=True)
    sp.add_argument("--record", choices=("seed", "public", "secret"), default="seed")
    sp.add_argument("--int16", action="store_true", help="store A in 16-bit cells")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_lwe_keygen)
    for name, func in (("encrypt", cmd_lwe_encrypt), ("decrypt", cmd_lwe_decrypt)):
        sp = lg.add_parser(name)
        sp.add_argument("--key", help="key file (public/secret or seed-only record)")
        sp.add_argument("--params")
        sp.add_argument("--key-seed")
        if name == "encrypt":
            sp.add_argument("--seed", required=True, help="encryption seed")
        sp.add_argument("--in", dest="input", required=True)
        sp.add_argument("--out", required=True)
        sp.set_defaults(func=func)

    ag = group("agility", "parameter morphisms and scheme transitions")
    for name, func in (("check", cmd_agility_check), ("score", cmd_agility_score)):
        sp = ag.add_parser(name)
        sp.add_argument("--from", dest="source", required=True, help="n,q,sigma")
        sp.add_argument("--to", dest="target", required=True, help="n,q,sigma")
        if name == "score":
            sp.add_argument("--trials", type=int, default=1000)
            sp.add_argument("--seed", default="0.123456789")
        out(sp)
        sp.set_defaults(func=func)
    sp = ag.add_parser("transition")
    sp.add_argument("--from", dest="source", required=True)
    sp.add_argument("--to", dest="target", required=True)
    sp.add_argument("--state", required=True, help="state directory")
    sp.add_argument("--items", type=int, default=100)
    sp.add_argument("--seed", default="0.2236067977")
    out(sp)
    sp.set_defaults(func=cmd_agility_transition)

    ng = group("noise", "noise samplers and divergence")
    sp = ng.add_parser("sweep")
    sp.add_argument("--n", default="256")
    sp.add_argument("--q", default="1024")
    sp.add_argument("--sigma", default="2,4,8,16,32")
    sp.add_argument("--per-cell", type=int, default=noise.DEFAULT_PER_CELL)
    sp.add_argument("--bins", type=int, default=noise.DEFAULT_BINS)
    sp.add_argument("--seed", default="0.5772156649")
    sp.add_argument("--engel", choices=("engel_diff", "engel_phi"), default="engel_diff")
    out(sp)
    sp.set_defaults(func=cmd_noise_sweep)
    sp = ng.add_parser("compare")
    gens = [g.value for g in noise.Generator]
    sp.add_argument("--gen-a", choices=gens, default="gaussian")
    sp.add_argument("--gen-b", choices=gens, default="engel_phi")
    sp.add_argument("--sigma", type=float, default=8.0)
    sp.add_argument("--count", type=int, default=10000)
    sp.add_argument("--bins", type=int, default=noise.DEFAULT_BINS)
    sp.add_argument("--rng-seed", type=int, default=0)
    sp.add_argument("--seed", default="0.5772156649", help="Engel seed for engel_diff")
    sp.add_argument("--params", help="n,q,p,sigma for engel_diff")
    out(sp)
    sp.set_defaults(func=cmd_noise_compare)

    wg = group("wiretap", "secure rates and ITS simulation")
    sp = wg.add_parser("region")
    sp.add_argument("--main", default="0:20:1")
    sp.add_argument("--eve", default="0:20:1")
    sp.add_argument("--delta", default="0,4,8")
    out(sp)
    sp.set_defaults(func=cmd_wiretap_region)
    sp = wg.add_parser("its-sim")
    sp.add_argument("--n", type=int, default=256)
    sp.add_argument("--q", type=int, default=2048)
    sp.add_argument("--sigma", type=float, default=8.0)
    sp.add_argument("--adv-sigma", type=float, default=40.0)
    sp.add_argument("--trials", type=int, default=1000)
    sp.add_argument("--mode", choices=("categorical", "traditional"), default="categorical")
    sp.add_argument("--seed", default="0.4142135623")
    sp.add_argument("--rng-seed", type=int, default=0)
    out(sp)
    sp.set_defaults(func=cmd_wiretap_its)

    zg = group("ztnet", "zero-trust broker, agent, client and attack harness")
    for name, func in (("broker", cmd_zt_broker), ("agent", cmd_zt_agent)):
        sp = zg.add_parser(name)
        sp.add_argument("--config")
        sp.add_argument("--listen", default="127.0.0.1:0")
        sp.add_argument("--ready-file", help="write the bound address here once listening")
        sp.add_argument("--max-requests", type=int, help="exit after this many requests")
        if name == "broker":
            sp.add_argument("--agent", help="remote agent host:port (default in-process)")
            sp.add_argument("--trust-frame-ip", action="store_true")
        else:
            sp.add_argument("--models", default="gpt,bert")
        sp.set_defaults(func=func)
    sp = zg.add_parser("client")
    sp.add_argument("--send", required=True, help="prompt text")
    sp.add_argument("--connect", required=True, help="broker host:port")
    sp.add_argument("--config", required=True)
    sp.add_argument("--token-id", required=True)
    sp.add_argument("--client-id", default="client-1")
    sp.add_argument("--model", default="gpt")
    sp.add_argument("--source-ip", default="127.0.0.1")
    sp.add_argument("--epoch", type=int, default=0)
    sp.add_argument("--enc-seed", default="0.1732050807")
    sp.add_argument("--now", type=int)
    sp.add_argument("--rng-seed", type=int, default=0)
    out(sp)
    sp.set_defaults(func=cmd_zt_client)
    sp = zg.add_parser("attack")
    sp.add_argument("--mix", default="350,420,230")
    sp.add_argument("--legit", type=int, default=0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--config")
    sp.add_argument("--now", type=int)
    sp.add_argument("--timings", action="store_true", help="include wall-clock latencies")
    out(sp)
    sp.set_defaults(func=cmd_zt_attack)
    sp = zg.add_parser("report")
    sp.add_argument("--in", dest="input", required=True, help="ledger JSON")
    out(sp)
    sp.set_defaults(func=cmd_zt_report)
    return p


def _configure_logging() -> None:
    level = os.environ.get("ELWE_LOG", "error").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "ERROR"
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        sys.stderr.write("error:usage: a subcommand is required\n")
        return 2
    try:
        return args.func(args)
    except ElweError as exc:
        sys.stderr.write(f"error:{exc.tag}: {exc}\n")
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
