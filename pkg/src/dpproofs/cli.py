"""Command-line runner: experiments, calibration sweeps and privacy audits.

Settings are resolved as flags > JSON config file (``--config``) > built-in
defaults. Results go to CSV (``--out``, default stdout); transcripts and audit
records go to JSON lines. Exit codes: 0 ok, 1 a requested check failed,
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .argument import (
    ArgumentProtocol,
    CommittingProver,
    EquivocatingProver,
    WrongRootProver,
    far_instance,
)
from .distributions import Distribution, ProductDomain
from .identity import (
    PrivateTester,
    boundary_pairs,
    identity_test_nonprivate,
    identity_tester,
)
from .independence import (
    IndependenceProtocol,
    UniformityViaIndependence,
    correlated_bits,
    independence_adversary_pool,
    random_product,
    uniformity_adversary_pool,
)
from .mechanisms import NoiseSource, PrivacyParams, audit_dp_decision
from .protocol import (
    CSV_SCHEMA_VERSION,
    ReplayProver,
    estimate_acceptance,
    result_row,
    run_protocol,
    trial_sources,
    write_results_csv,
)
from .replicable import (
    PrivateCoinProtocol,
    ToyFixture,
    am_adversary_pool,
    convert_to_am,
    measure_replicability,
    private_coin_pool,
)
from .retrieval import (
    TaggedRetrievalProtocol,
    calibrate_retrieval,
    derive_nonprivate_params,
    derive_params,
    retrieval_adversary_pool,
    two_level,
)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

DEFAULTS = {
    "n": 256,
    "d": None,
    "sigma": 0.3,
    "eps": 1.0,
    "delta": 1e-4,
    "s": None,
    "trials": 200,
    "seed": 0,
    "jobs": 1,
    "prover": "honest",
    "instance": None,
    "out": None,
    "transcripts": None,
    "expect_min": None,
    "expect_max": None,
    "pairs": 20,
    "leaky": False,
    "cap": 1 << 20,
    "target": 0.75,
    "protocol": None,
    "nonprivate": False,
}

CALIBRATION_COLUMNS = ("schema_version", "protocol", "N", "sigma", "eps", "delta", "s_star", "status")


class UsageError(Exception):
    pass


@dataclass
class Experiment:
    protocol: object
    provers: dict
    instances: dict
    default_instance: str
    params: dict = field(default_factory=dict)


def _pick(registry: dict, name: str, what: str):
    if name not in registry:
        raise UsageError(f"unknown {what} {name!r}; registry: {', '.join(sorted(registry))}")
    return registry[name]


def _named(provers) -> dict:
    out = {}
    for p in provers:
        out.setdefault(p.name, p)
    return out


def _build_independence(cfg) -> Experiment:
    d = cfg["d"] if cfg["d"] is not None else max(1, (int(cfg["n"]) - 1).bit_length())
    dom = ProductDomain.boolean(int(d))
    proto = IndependenceProtocol(dom, cfg["sigma"], cfg["eps"])
    instances = {
        "product": random_product(dom, NoiseSource(cfg["seed"])),
        "correlated": correlated_bits(int(d)),
        "uniform": Distribution.uniform(dom.size),
    }
    return Experiment(proto, _named(independence_adversary_pool(dom)), instances, "product",
                      {"N": dom.size, "sigma": cfg["sigma"], "eps": cfg["eps"]})


def _build_uniformity(cfg) -> Experiment:
    n = int(cfg["n"])
    proto = UniformityViaIndependence(n, cfg["sigma"], cfg["eps"])
    instances = {"uniform": Distribution.uniform(n), "far": far_instance(n)}
    return Experiment(proto, _named(uniformity_adversary_pool(n)), instances, "uniform",
                      {"N": n, "sigma": cfg["sigma"], "eps": cfg["eps"]})


def _retrieval_instances(n: int) -> dict:
    return {"uniform": Distribution.uniform(n), "two-level": two_level(n)}


def _build_retrieval(cfg) -> Experiment:
    n = int(cfg["n"])
    s = cfg["s"]
    if s in (None, "calibrate"):
        best, points = calibrate_retrieval(n, cfg["sigma"], cfg["eps"], cfg["delta"], max(50, cfg["trials"] // 4),
                                           cfg["seed"], jobs=cfg["jobs"])
        for pt in points:
            print(f"calibrate s={pt.s} valid={pt.valid} rate={pt.rate} {pt.note}", file=sys.stderr)
        if best is None:
            raise UsageError("no valid sample size reaches the target at these parameters; pass --s explicitly")
        s = best
    try:
        params = derive_params(cfg["eps"], cfg["delta"], cfg["sigma"], int(s), n)
    except ValueError as exc:
        raise UsageError(f"invalid retrieval parameters: {exc}") from None
    proto = TaggedRetrievalProtocol(params, private=True)
    return Experiment(proto, _named(retrieval_adversary_pool(params)), _retrieval_instances(n), "uniform",
                      {"N": n, "sigma": cfg["sigma"], "eps": cfg["eps"], "delta": cfg["delta"], "s": int(s)})


def _build_retrieval_nonprivate(cfg) -> Experiment:
    n = int(cfg["n"])
    if cfg["s"] in (None, "calibrate"):
        raise UsageError("the non-private retrieval protocol needs an explicit --s")
    try:
        params = derive_nonprivate_params(cfg["sigma"], int(cfg["s"]), n)
    except ValueError as exc:
        raise UsageError(f"invalid retrieval parameters: {exc}") from None
    proto = TaggedRetrievalProtocol(params, private=False)
    return Experiment(proto, _named(retrieval_adversary_pool(params)), _retrieval_instances(n), "uniform",
                      {"N": n, "sigma": cfg["sigma"], "s": int(cfg["s"])})


def _build_argument(cfg) -> Experiment:
    n = int(cfg["n"])
    D = Distribution.uniform(n)
    far = far_instance(n)
    proto = ArgumentProtocol(n, cfg["sigma"], cfg["eps"])
    provers = _named([
        CommittingProver(None, "honest"),
        CommittingProver(far, "far-commit"),
        EquivocatingProver(far, D, 0.5),
        WrongRootProver(),
        ReplayProver(),
    ])
    return Experiment(proto, provers, {"uniform": D, "two-level": two_level(n)}, "uniform",
                      {"N": n, "sigma": cfg["sigma"], "eps": cfg["eps"], "s": proto.sample_size})


def _toy(cfg) -> ToyFixture:
    return ToyFixture(int(cfg["n"]), cfg["sigma"], int(cfg["s"]) if cfg["s"] not in (None, "calibrate") else 800)


def _build_replicable(cfg) -> Experiment:
    fx = _toy(cfg)
    return Experiment(convert_to_am(fx.spec()), _named(am_adversary_pool(fx)),
                      {"close": fx.close_instance(), "far": fx.far_instance()}, "close",
                      {"N": fx.N, "sigma": fx.sigma, "s": fx.n})


def _build_private_coin(cfg) -> Experiment:
    fx = _toy(cfg)
    return Experiment(PrivateCoinProtocol(fx.spec()), _named(private_coin_pool(fx)),
                      {"close": fx.close_instance(), "far": fx.far_instance()}, "close",
                      {"N": fx.N, "sigma": fx.sigma, "s": fx.n})


PROTOCOLS: dict[str, Callable] = {
    "independence": _build_independence,
    "uniformity": _build_uniformity,
    "tagged-retrieval": _build_retrieval,
    "tagged-retrieval-nonprivate": _build_retrieval_nonprivate,
    "argument": _build_argument,
    "replicable-am": _build_replicable,
    "private-coin": _build_private_coin,
}


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    try:
        return open(path, "w", newline=""), True
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from None


def _execute(cfg, protocol_name: str) -> int:
    exp = _pick(PROTOCOLS, protocol_name, "protocol")(cfg)
    inst_name = cfg["instance"] or exp.default_instance
    D = _pick(exp.instances, inst_name, "instance")
    names = list(exp.provers) if cfg["prover"] == "pool" else [cfg["prover"]]
    provers = [_pick(exp.provers, n, "prover") for n in names]
    print(f"seed={cfg['seed']} protocol={protocol_name} instance={inst_name}", file=sys.stderr)

    rows, rates = [], []
    for i, prover in enumerate(provers):
        est = estimate_acceptance(exp.protocol, prover, D, int(cfg["trials"]), int(cfg["seed"]) + i, int(cfg["jobs"]))
        rows.append(result_row(protocol_name, prover.name, est, int(cfg["seed"]) + i, **exp.params))
        rates.append(est.rate)
    stream, close = _open_out(cfg["out"])
    try:
        write_results_csv(stream, rows)
    finally:
        if close:
            stream.close()

    if cfg["transcripts"]:
        try:
            with open(cfg["transcripts"], "w") as fh:
                for i, prover in enumerate(provers):
                    tr = run_protocol(exp.protocol, prover, D, trial_sources(int(cfg["seed"]) + i, 1)[0])
                    fh.write(tr.to_jsonl())
        except OSError as exc:
            raise UsageError(f"cannot write {cfg['transcripts']}: {exc}") from None

    failed = False
    if cfg["expect_min"] is not None and min(rates) < float(cfg["expect_min"]):
        print(f"FAIL: acceptance {min(rates):.4f} below {cfg['expect_min']}", file=sys.stderr)
        failed = True
    if cfg["expect_max"] is not None and max(rates) > float(cfg["expect_max"]):
        print(f"FAIL: acceptance {max(rates):.4f} above {cfg['expect_max']}", file=sys.stderr)
        failed = True
    return EXIT_FAILED if failed else EXIT_OK


def doubling_search(rate_fn: Callable[[int], float], s_min: int, cap: int, target: float):
    """Smallest ``s_min * 2**k <= cap`` with ``rate_fn(s) >= target``; ``None`` if none."""
    s = max(1, int(s_min))
    while s <= cap:
        if rate_fn(s) >= target:
            return s
        s *= 2
    return None


def sigma_far_from_uniform(n: int, sigma: float) -> Distribution:
    """Half the atoms at ``(1 + 2 sigma)/n``, half at ``(1 - 2 sigma)/n``; needs even ``n`` and ``sigma <= 1/2``."""
    if n % 2 or not (0 < sigma <= 0.5):
        raise ValueError("needs even n and sigma in (0, 1/2]")
    p = np.full(n, 1.0 / n)
    p[: n // 2] *= 1 + 2 * sigma
    p[n // 2:] *= 1 - 2 * sigma
    return Distribution(p)


def identity_rate(n: int, sigma: float, s: int, trials: int, rng: NoiseSource) -> float:
    """``min(Pr[accept | uniform], Pr[reject | sigma-far])`` for the plug-in tester at size ``s``."""
    U = Distribution.uniform(n)
    F = sigma_far_from_uniform(n, sigma)
    acc = sum(identity_test_nonprivate(U.sample(rng, s), U, sigma) for _ in range(trials))
    rej = sum(not identity_test_nonprivate(F.sample(rng, s), U, sigma) for _ in range(trials))
    return min(acc, rej) / trials


def cmd_calibrate(cfg) -> int:
    proto = cfg["protocol"] or "identity"
    n, sigma = int(cfg["n"]), float(cfg["sigma"])
    print(f"seed={cfg['seed']} protocol={proto}", file=sys.stderr)
    row = {c: "" for c in CALIBRATION_COLUMNS}
    row.update(schema_version=CSV_SCHEMA_VERSION, protocol=proto, N=n, sigma=sigma)
    if proto == "identity":
        rng = NoiseSource(int(cfg["seed"]))
        try:
            s_star = doubling_search(lambda s: identity_rate(n, sigma, s, int(cfg["trials"]), rng),
                                     16, int(cfg["cap"]), float(cfg["target"]))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    elif proto == "tagged-retrieval":
        row.update(eps=cfg["eps"], delta=cfg["delta"])
        grid = [1 << k for k in range(3, 31) if (1 << k) <= int(cfg["cap"])]
        s_star, points = calibrate_retrieval(n, sigma, cfg["eps"], cfg["delta"], int(cfg["trials"]), int(cfg["seed"]),
                                             s_grid=grid, jobs=int(cfg["jobs"]), target=float(cfg["target"]))
        for pt in points:
            print(f"s={pt.s} valid={pt.valid} rate={pt.rate} {pt.note}", file=sys.stderr)
    else:
        raise UsageError(f"unknown calibration protocol {proto!r}; registry: identity, tagged-retrieval")
    row.update(s_star="" if s_star is None else s_star, status="ok" if s_star is not None else "infeasible")
    stream, close = _open_out(cfg["out"])
    try:
        w = csv.DictWriter(stream, fieldnames=CALIBRATION_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerow(row)
    finally:
        if close:
            stream.close()
    return EXIT_OK


def cmd_audit(cfg) -> int:
    eps = float(cfg["eps"])
    if math.isinf(eps):
        print("audit skipped: eps=inf means no privacy claim to check", file=sys.stderr)
        return EXIT_OK
    if not eps > 0:
        raise UsageError("eps must be positive")
    n, sigma = int(cfg["n"]), float(cfg["sigma"])
    Q = Distribution.uniform(n)
    flip = 0.0 if cfg["leaky"] else 1.0 / 6.0
    tester = PrivateTester(identity_tester(Q, sigma), eps, flip_probability=flip)
    rng = NoiseSource(int(cfg["seed"]))
    pair_rng, audit_rng = rng.spawn(2)
    pairs = boundary_pairs(tester, Q, int(cfg["pairs"]), pair_rng)
    params = PrivacyParams(eps, 0.0)
    trials = max(10_000, int(cfg["trials"]))
    print(f"seed={cfg['seed']} mechanism={'leaky' if cfg['leaky'] else 'wrapper'} m={tester.m}", file=sys.stderr)
    flagged = 0
    stream, close = _open_out(cfg["out"])
    try:
        for i, (src, (x, xp)) in enumerate(zip(audit_rng.spawn(len(pairs)), pairs)):
            rep = audit_dp_decision(tester, x, xp, params, trials, src)
            flagged += rep.violated
            rec = json.loads(rep.to_json())
            rec.update(pair=i, mechanism="leaky" if cfg["leaky"] else "wrapper", seed=int(cfg["seed"]))
            stream.write(json.dumps(rec, sort_keys=True) + "\n")
    finally:
        if close:
            stream.close()
    print(f"violations: {flagged}/{len(pairs)}", file=sys.stderr)
    if cfg["leaky"]:
        return EXIT_OK if flagged >= math.ceil(0.95 * len(pairs)) else EXIT_FAILED
    return EXIT_FAILED if flagged else EXIT_OK


def cmd_replicable(cfg) -> int:
    fx = _toy(cfg)
    spec = fx.spec()
    trials, seed, jobs = int(cfg["trials"]), int(cfg["seed"]), int(cfg["jobs"])
    print(f"seed={seed} N={fx.N} sigma={fx.sigma} n={fx.n} seeds={fx.seeds}", file=sys.stderr)
    rho = measure_replicability(spec.A, fx.close_instance(), fx.n, max(1000, trials), NoiseSource(seed))
    rows = []
    report = {"rho": rho.rho, "rho_ci": [rho.ci_low, rho.ci_high]}
    for label, proto, pool in (
        ("private", PrivateCoinProtocol(spec), private_coin_pool(fx)),
        ("am", convert_to_am(spec), am_adversary_pool(fx)),
    ):
        honest = pool[0]
        est = estimate_acceptance(proto, honest, fx.close_instance(), trials, seed + 1, jobs)
        rows.append(result_row(f"{label}-close", honest.name, est, seed + 1, N=fx.N, sigma=fx.sigma, s=fx.n))
        best = None
        for i, p in enumerate(pool):
            e = estimate_acceptance(proto, p, fx.far_instance(), trials, seed + 2 + i, jobs)
            rows.append(result_row(f"{label}-far", p.name, e, seed + 2 + i, N=fx.N, sigma=fx.sigma, s=fx.n))
            best = e if best is None or e.rate > best.rate else best
        report[f"{label}_close"] = est.rate
        report[f"{label}_far"] = best.rate
    stream, close = _open_out(cfg["out"])
    try:
        write_results_csv(stream, rows)
    finally:
        if close:
            stream.close()
    print(json.dumps(report, sort_keys=True), file=sys.stderr)
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser):
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="JSON file of settings; flags override it")
    p.add_argument("--seed", type=int, default=S, help="master seed (default 0)")
    p.add_argument("--trials", type=int, default=S, help="Monte-Carlo trials (default 200)")
    p.add_argument("--jobs", type=int, default=S, help="worker processes (default 1)")
    p.add_argument("--out", default=S, help="output path, '-' for stdout (default)")


def _add_params(p: argparse.ArgumentParser, s_help="sample size"):
    S = argparse.SUPPRESS
    p.add_argument("--n", type=int, default=S, help="domain size N (default 256)")
    p.add_argument("--sigma", type=float, default=S, help="proximity parameter (default 0.3)")
    p.add_argument("--eps", type=float, default=S, help="privacy parameter (default 1)")
    p.add_argument("--delta", type=float, default=S, help="privacy parameter delta (default 1e-4)")
    p.add_argument("--s", default=S, help=s_help)


def _add_run_flags(p: argparse.ArgumentParser):
    S = argparse.SUPPRESS
    p.add_argument("--prover", default=S, help="prover name, or 'pool' for every registered strategy")
    p.add_argument("--instance", default=S, help="distribution instance name")
    p.add_argument("--transcripts", default=S, help="write one transcript per prover as JSON lines")
    p.add_argument("--expect-min", dest="expect_min", type=float, default=S, help="exit 1 if a rate is lower")
    p.add_argument("--expect-max", dest="expect_max", type=float, default=S, help="exit 1 if a rate is higher")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpproofs",
        description="Private interactive proofs for distribution properties. "
                    "Settings resolve as flags > --config JSON > defaults.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    p = sub.add_parser("run", help="acceptance rate of a protocol against a prover")
    _add_common(p)
    _add_params(p)
    _add_run_flags(p)
    p.add_argument("--protocol", default=S, help=f"one of: {', '.join(PROTOCOLS)}")
    p.add_argument("--d", type=int, default=S, help="Boolean attributes for independence (default log2 N)")

    p = sub.add_parser("calibrate", help="doubling search for the smallest workable sample size")
    _add_common(p)
    _add_params(p)
    p.add_argument("--protocol", default=S, help="identity or tagged-retrieval")
    p.add_argument("--cap", type=int, default=S, help="largest sample size tried")
    p.add_argument("--target", type=float, default=S, help="required rate (default 0.75)")

    p = sub.add_parser("audit", help="empirical privacy audit of the private identity wrapper")
    _add_common(p)
    _add_params(p)
    p.add_argument("--pairs", type=int, default=S, help="adjacent pairs (default 20)")
    p.add_argument("--leaky", action="store_true", default=S, help="test mode: audit a wrapper with no flip")

    for name, help_ in (
        ("tagged-retrieval", "private tagged-sample retrieval"),
        ("independence", "independence over Boolean attributes"),
        ("argument", "commitment-backed argument"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        _add_params(p, "sample size, or 'calibrate'" if name == "tagged-retrieval" else "sample size")
        _add_run_flags(p)
        if name == "independence":
            p.add_argument("--d", type=int, default=S, help="Boolean attributes (default log2 N)")
        if name == "tagged-retrieval":
            mode = p.add_mutually_exclusive_group()
            mode.add_argument("--private", dest="nonprivate", action="store_false", default=S,
                              help="private variant with noise and the PTR gate (default)")
            mode.add_argument("--nonprivate", dest="nonprivate", action="store_true", default=S,
                              help="non-private variant")

    p = sub.add_parser("replicable-am", help="toy private-coin protocol and its public-coin conversion")
    _add_common(p)
    _add_params(p, "sample size of the toy fixture (default 800)")
    return parser


def resolve_config(ns: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    given = vars(ns).copy()
    path = given.pop("config", None)
    if path:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(loaded)
    cfg.update({k.replace("-", "_"): v for k, v in given.items()})
    s = cfg.get("s")
    if s not in (None, "calibrate"):
        try:
            cfg["s"] = int(s)
        except (TypeError, ValueError):
            raise UsageError(f"--s must be an integer or 'calibrate', got {s!r}") from None
    if int(cfg["trials"]) < 1 or int(cfg["jobs"]) < 1:
        raise UsageError("trials and jobs must be positive")
    if not (0 < float(cfg["sigma"]) < 1):
        raise UsageError("sigma must lie in (0, 1)")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        cfg = resolve_config(ns)
        cmd = cfg.pop("command")
        if cmd == "run":
            if not cfg["protocol"]:
                raise UsageError(f"run needs --protocol; registry: {', '.join(PROTOCOLS)}")
            return _execute(cfg, cfg["protocol"])
        if cmd == "tagged-retrieval" and cfg["nonprivate"]:
            return _execute(cfg, "tagged-retrieval-nonprivate")
        if cmd in ("tagged-retrieval", "independence", "argument"):
            return _execute(cfg, cmd)
        if cmd == "calibrate":
            return cmd_calibrate(cfg)
        if cmd == "audit":
            return cmd_audit(cfg)
        if cmd == "replicable-am":
            return cmd_replicable(cfg)
        raise UsageError(f"unknown command {cmd!r}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
