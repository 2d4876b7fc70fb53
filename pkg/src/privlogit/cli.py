"""Command-line entry point.

Exit codes: 0 success, 2 parse/configuration error, 3 protocol abort,
4 divergence.
"""
from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

import numpy as np

from . import paillier
from .core import ConfigurationError, Diverged, ModelConfig, newton_fit, privlogit_fit
from .fixedpoint import FixedPointError
from .harness import (ALL_METHODS, BenchConfig, CsvSpec, HarnessError, SimSpec, bench, load_csv,
                      parse_sim_triplet, partition, report_emit, simulate, write_csv)
from .protocols import wire
from .protocols.session import (AbortCode, CenterParty, KeyHolderParty, NodeParty, Protocol, ProtocolAbort,
                                SessionConfig, run_session)
from .protocols.transport import TcpClientEndpoint, TcpHubEndpoint, TransportError

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_DIVERGED = 0, 2, 3, 4


def _add_data_flags(p: argparse.ArgumentParser, required: bool = True):
    src = p.add_mutually_exclusive_group(required=required)
    src.add_argument("--data", help="CSV file (response in the last column unless --response)")
    src.add_argument("--simulate", metavar="N,P,SEED", help="generate synthetic data instead")
    p.add_argument("--no-header", action="store_true")
    p.add_argument("--response", help="response column name or index")
    p.add_argument("--binarize", help="rule such as '>=6' for non-binary responses")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--intercept", action="store_true")


def _add_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=500)


def _load(args):
    if not (args.data or args.simulate):
        raise ConfigurationError("this command needs --data or --simulate")
    if args.simulate:
        from .harness import finish_features
        from .core import Dataset

        d = simulate(parse_sim_triplet(args.simulate))
        if args.standardize or args.intercept:
            d = Dataset(finish_features(d.x, args.standardize, args.intercept), d.y)
        return d, {"source": "simulate", "spec": args.simulate}
    spec = CsvSpec(args.data, has_header=not args.no_header, response_column=args.response,
                   standardize=args.standardize, add_intercept=args.intercept, binarize_rule=args.binarize)
    return load_csv(spec), {"source": str(args.data)}


def _emit(obj, out):
    text = json.dumps(obj, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_fit(args):
    data, _ = _load(args)
    cfg = ModelConfig(lam=args.lam, tol=args.tol, max_iter=args.max_iter)
    res = (newton_fit if args.optimizer == "newton" else privlogit_fit)(data, cfg)
    _emit({"optimizer": args.optimizer, "iterations": res.iterations, "converged": res.converged,
           "beta": [float(b) for b in res.beta], "log_likelihood": res.likelihood_trace[-1]}, args.out)
    return EXIT_OK


def _session_config(args) -> SessionConfig:
    return SessionConfig(s_nodes=args.nodes, protocol=Protocol(args.protocol), lam=args.lam, tol=args.tol,
                         max_iter=args.max_iter, key_bits=args.key_bits, seed=args.seed, timeout=args.timeout)


def _trace_json(tr) -> dict:
    return {"protocol": tr.protocol, "iterations": tr.iterations, "converged": tr.converged,
            "beta": [float(b) for b in tr.beta], "handshake_seconds": tr.handshake_seconds,
            "setup_seconds": tr.setup_seconds, "iteration_seconds": tr.iteration_seconds,
            "total_seconds": tr.total_seconds, "op_counters": tr.counters.as_dict(),
            "bytes_per_pair": tr.bytes_per_pair}


def _load_keypair(directory):
    if not directory:
        return None
    return paillier.private_key_from_bytes(bytes.fromhex((Path(directory) / "private.key").read_text().strip()))


def cmd_secure_run(args):
    cfg = _session_config(args)
    role = args.role
    if role == "all":
        data, _ = _load(args)
        parts = partition(data, cfg.s_nodes, cfg.seed)
        listen = args.listen or "127.0.0.1:0"
        res = run_session(parts, cfg, transport=args.transport, keypair=_load_keypair(args.keys), listen=listen)
        _emit(_trace_json(res.trace), args.out)
        return EXIT_OK
    if args.transport != "tcp":
        raise ConfigurationError("separate-process roles need --transport tcp")
    if role == "a":
        if not args.listen:
            raise ConfigurationError("--role a needs --listen host:port")
        ep = TcpHubEndpoint(args.listen, cfg.timeout)
        try:
            tr = CenterParty(cfg, ep).run()
        finally:
            ep.close()
        tr.bytes_per_pair = ep.ledger.as_dict()
        _emit(_trace_json(tr), args.out)
        return EXIT_OK
    if not args.connect:
        raise ConfigurationError(f"--role {role} needs --connect host:port")
    if role == "b":
        ep = TcpClientEndpoint(wire.SERVER_B, args.connect, cfg.timeout)
        try:
            KeyHolderParty(cfg, ep, _load_keypair(args.keys)).run()
        finally:
            ep.close()
        return EXIT_OK
    if not 1 <= args.index <= cfg.s_nodes:
        raise ConfigurationError(f"--index must be in [1, {cfg.s_nodes}]")
    data, _ = _load(args)
    part = partition(data, cfg.s_nodes, cfg.seed)[args.index - 1]
    ep = TcpClientEndpoint(wire.node(args.index), args.connect, cfg.timeout)
    try:
        nd = NodeParty(args.index, part, cfg, ep)
        nd.run()
    finally:
        ep.close()
    _emit({"node": args.index, "beta": [float(b) for b in nd.final_beta]}, args.out)
    return EXIT_OK


def cmd_bench(args):
    data, desc = _load(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    cfg = BenchConfig(nodes=args.nodes, lam=args.lam, tol=args.tol, max_iter=args.max_iter,
                      key_bits=args.key_bits, seed=args.seed, transport=args.transport, timeout=args.timeout)
    blob = report_emit(bench(data, methods, cfg, desc, _load_keypair(args.keys)), args.format)
    if args.out:
        Path(args.out).write_bytes(blob)
    else:
        sys.stdout.write(blob.decode())
    return EXIT_OK


def cmd_keygen(args):
    rng = random.Random(args.seed) if args.seed is not None else None
    kp = paillier.keygen(args.bits, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "public.key").write_text(paillier.public_key_to_bytes(kp.public).hex() + "\n")
    priv = out / "private.key"
    priv.write_text(paillier.private_key_to_bytes(kp.private).hex() + "\n")
    priv.chmod(0o600)
    return EXIT_OK


def cmd_simulate(args):
    write_csv(simulate(SimSpec(args.n, args.p, args.seed)), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="privlogit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="plaintext fit")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--optimizer", choices=["newton", "privlogit"], default="privlogit")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    def secure_flags(p):
        p.add_argument("--nodes", type=int, default=4)
        p.add_argument("--transport", choices=["inproc", "tcp"], default="inproc")
        p.add_argument("--key-bits", type=int, choices=list(paillier.ALLOWED_KEY_BITS), default=1024)
        p.add_argument("--keys", help="directory written by keygen (default: fresh seeded key)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--timeout", type=float, default=30.0)
        p.add_argument("--out")

    p = sub.add_parser("secure-run", help="run one secure protocol session")
    p.add_argument("--protocol", choices=[x.value for x in Protocol], required=True)
    p.add_argument("--role", choices=["all", "a", "b", "node"], default="all",
                   help="'all' hosts every party here; the others run one party over TCP")
    p.add_argument("--index", type=int, default=1, help="node index for --role node")
    p.add_argument("--listen")
    p.add_argument("--connect")
    secure_flags(p)
    _add_model_flags(p)
    # servers A and B hold no data
    _add_data_flags(p, required=False)
    p.set_defaults(func=cmd_secure_run)

    p = sub.add_parser("bench", help="benchmark optimizers and protocols")
    _add_data_flags(p)
    _add_model_flags(p)
    secure_flags(p)
    p.add_argument("--methods", default=",".join(ALL_METHODS))
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("keygen", help="generate a Paillier key pair")
    p.add_argument("--bits", type=int, choices=list(paillier.ALLOWED_KEY_BITS), default=2048)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Diverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ProtocolAbort as exc:
        print(f"protocol abort: {exc}", file=sys.stderr)
        return EXIT_DIVERGED if exc.code == AbortCode.DIVERGED else EXIT_ABORT
    except TransportError as exc:
        print(f"protocol abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ConfigurationError, HarnessError, FixedPointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
