"""Command line entry point: ``python3 -m zkagg <verb> ...``."""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import aggregation as agg
from . import commitment as cm
from . import he
from . import model as M
from .harness import adversary as adv
from .harness import bench
from .harness import fixtures as fxm
from .transcript import save_transcript

ROUND_KEYS = {
    "n_users": int, "t": int, "vector_len": int, "range_bound": int, "key_bits": int, "level": int,
    "lam": int, "seed": int, "max_eliminations": int, "encoding": str, "kem_bits": int,
    "allow_small_keys": lambda v: v.lower() in ("1", "true", "yes"),
}
EXTRA_KEYS = {"tau": Fraction, "updates": str, "name": str}


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {no}: duplicate key {key!r}")
        out[key] = value
    return out


def _indices(value: str) -> frozenset:
    return frozenset(int(v) for v in value.replace(" ", "").split(",") if v)


def scenario_from_config(cfg: dict[str, str], seed: int | None = None):
    """Returns (ScenarioConfig, fixtures or None). Proof rounds use the fixture models as updates."""
    unknown = set(cfg) - set(ROUND_KEYS) - set(EXTRA_KEYS) - set(adv.BEHAVIOURS)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    try:
        kw = {k: ROUND_KEYS[k](v) for k, v in cfg.items() if k in ROUND_KEYS}
        script = adv.AdversaryScript(**{k: _indices(v) for k, v in cfg.items() if k in adv.BEHAVIOURS})
        tau = Fraction(cfg.get("tau", str(M.DEFAULT_TAU)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if seed is not None:
        kw["seed"] = seed
    for need in ("n_users", "t"):
        if need not in kw:
            raise ConfigError(f"missing key {need!r}")
    fx = None
    if kw.get("lam", 0) or cfg.get("updates") == "fixtures":
        fx = fxm.make_fixtures(kw.get("seed", 0))
        kw["dims"] = fx.clean.dims
        kw["vector_len"] = len(M.flatten(fx.clean))
        kw["validation"] = fx.validation
    kw["defense"] = M.DefenseParams(tau)
    try:
        round_cfg = agg.RoundConfig(**kw)
        scenario = adv.ScenarioConfig(round_cfg, script, cfg.get("name", "cli"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return scenario, fx


def _out(args) -> Path:
    p = Path(args.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_kv(path: Path, items: dict) -> None:
    path.write_text("".join(f"{k} = {v}\n" for k, v in items.items()))


def _ints(text: str) -> list[int]:
    return [int(float(v)) for v in text.split(",") if v]


# --------------------------------------------------------------------------
# verbs


def cmd_keygen(args) -> int:
    out = _out(args)
    pk, sk = he.keygen(args.key_bits, args.level, f"keygen-{args.seed}".encode(), allow_small=args.key_bits < 1024)
    (out / "public.key").write_bytes(he.public_key_to_bytes(pk))
    (out / "secret.key").write_bytes(he.secret_key_to_bytes(sk))
    shares = he.split_key(sk, args.t, args.n_users, f"shares-{args.seed}")
    for sh in shares:
        (out / f"share-{sh.index}.key").write_bytes(he.key_share_to_bytes(sh))
    print(f"wrote public.key, secret.key and {len(shares)} shares to {out}")
    return 0


def cmd_fixtures(args) -> int:
    out = _out(args)
    fx = fxm.make_fixtures(args.seed)
    fxm.write_fixtures(fx, out)
    clean = M.backdoor_check(fx.clean, fx.validation)
    bad = M.backdoor_check(fx.backdoored, fx.validation)
    summary = {
        "seed": args.seed,
        "attempt": fx.attempt,
        "shrink": fx.shrink,
        "target": fx.target,
        "clean_accuracy": float(M.accuracy(fx.clean, fx.validation)),
        "backdoored_accuracy": float(M.accuracy(fx.backdoored, fx.validation)),
        "trigger_success": float(fxm.trigger_success(fx.backdoored, fx.validation, fx.target)),
        "clean_verdict": clean.verdict,
        "backdoored_verdict": bad.verdict,
    }
    _write_kv(out / "fixtures.txt", summary)
    for k, v in summary.items():
        print(f"{k} = {v}")
    return 0


def cmd_simulate(args) -> int:
    out = _out(args)
    try:
        scenario, fx = scenario_from_config(parse_config(Path(args.config).read_text()), args.seed)
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    cfg = scenario.round
    if fx is not None:
        xs = [M.flatten(fx.clean)] * cfg.n_users
        bad_x = M.flatten(fx.backdoored)
    else:
        xs = agg.random_updates(np.random.default_rng(cfg.seed), cfg.n_users, cfg.vector_len, cfg.range_bound)
        bad_x = None
    outcome = adv.run_scenario(scenario, xs, bad_x=bad_x)
    transcript = Path(args.transcript) if args.transcript else out / "transcript.bin"
    save_transcript(outcome.records, transcript)
    res = outcome.result
    summary = {"scenario": scenario.name, "seconds": f"{outcome.elapsed:.3f}"}
    if res is None:
        summary["aborted"] = outcome.error
    else:
        summary.update({
            "included": ",".join(map(str, res.included)),
            "flagged": ",".join(map(str, sorted(res.flagged()))),
            "dropped": ",".join(map(str, sorted(res.dropped()))),
            "sum_matches_plaintext": outcome.correct,
            "checksum": int(res.x_bar.sum()),
        })
    _write_kv(out / "result.txt", summary)
    for k, v in summary.items():
        print(f"{k} = {v}")
    print(f"transcript: {transcript}")
    return 0 if outcome.correct else 1


def cmd_bench_agg(args) -> int:
    rows = bench.bench_user_encrypt(_ints(args.ms), args.key_bits, seed=args.seed)
    rows += bench.bench_server(_ints(args.n_users), args.server_m, args.key_bits, seed=args.seed)
    path = bench.write_csv(rows, _out(args) / "bench_agg.csv")
    srv = [r for r in rows if r.scenario == "server"]
    if len(srv) >= 3:
        print(f"server quadratic fit R^2 = {bench.fit_r2([r.n_users for r in srv], [r.seconds for r in srv], 2):.4f}")
    print(f"wrote {path}")
    return 0


def cmd_bench_zkp(args) -> int:
    fx = fxm.make_fixtures(args.seed)
    data = fxm.toy_validation(fx, args.toy) if args.toy else None
    spec = fxm.circuit_for(fx, data)
    rows = bench.bench_zkp(_ints(args.lambdas), spec, fx.clean, args.seed, repeats=args.repeats)
    prove = [r for r in rows if r.scenario == "prove"]
    if len(prove) >= 3:
        print(f"prove linear fit R^2 = {bench.fit_r2([r.lam for r in prove], [r.seconds for r in prove], 1):.4f}")
    print(f"wrote {bench.write_csv(rows, _out(args) / 'bench_zkp.csv')}")
    return 0


def cmd_bench_expansion(args) -> int:
    rows = []
    for kb in _ints(args.key_bits):
        rows += bench.bench_expansion(_ints(args.ms), kb, args.seed)
    for r in rows:
        print(f"key_bits={r.key_bits} m={r.m} level={r.level} expansion={r.expansion:.4f}")
    print(f"wrote {bench.write_csv(rows, _out(args) / 'bench_expansion.csv')}")
    return 0


def _cli_spec(dataset: M.Dataset, model: M.QuantizedMLP, n_users: int, tau: Fraction):
    from .encoding import PackingParams
    from .zkp.circuit import CircuitSpec

    b = PackingParams.for_users(len(M.flatten(model)), model.range_bound, n_users).element_bits
    return CircuitSpec(model.dims, dataset, M.DefenseParams(tau), cm.default_params(), b,
                       model.frac_bits, model.range_bound)


def cmd_prove(args) -> int:
    from ._rand import make_rng
    from .zkp import proof as zp

    model = M.load_model(args.model)
    spec = _cli_spec(M.load_dataset(args.dataset), model, args.n_users, Fraction(args.tau))
    x = M.flatten(model)
    rng = make_rng(f"prove-{args.seed}")
    r = cm.random_r(spec.pedersen, spec.n_chunks, rng)
    cv = cm.commit(spec.pedersen, cm.chunk_vector(x, spec.pedersen, spec.chunk_bits), r, spec.chunk_bits)
    try:
        proof = zp.prove(x, r, spec, args.lam, rng)
    except zp.PredicateFailed:
        print("model fails the backdoor check; no proof produced", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(zp.proof_to_bytes(proof))
    commit_path = Path(args.commit_out or str(out) + ".commit")
    commit_path.write_bytes(cm.commitment_to_bytes(cv))
    Path(str(commit_path) + ".opening").write_bytes(agg.r_to_bytes(r))
    print(f"proof: {out} ({out.stat().st_size} bytes)\ncommitment: {commit_path}")
    return 0


def cmd_verify(args) -> int:
    from ._bytes import FormatError
    from .zkp import proof as zp

    dataset = M.load_dataset(args.dataset)
    dims = tuple(int(d) for d in args.dims.split(","))
    model = M.zero_model(dims)
    spec = _cli_spec(dataset, model, args.n_users, Fraction(args.tau))
    try:
        proof = zp.proof_from_bytes(Path(args.proof).read_bytes(), spec)
        cv = cm.commitment_from_bytes(Path(args.commit).read_bytes(), spec.pedersen, spec.chunk_bits)
    except (ValueError, FormatError) as exc:
        print(f"reject: {exc}")
        return 1
    ok = zp.verify(proof, cv, spec, args.lam or None)
    print("accept" if ok else "reject")
    return 0 if ok else 1


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", default="out")

    p = argparse.ArgumentParser(prog="zkagg", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    k = sub.add_parser("keygen", parents=[common], help="threshold key pair and shares")
    k.add_argument("--key-bits", type=int, default=1024)
    k.add_argument("--level", type=int, default=1)
    k.add_argument("--n-users", type=int, default=4)
    k.add_argument("--t", type=int, default=2)
    k.set_defaults(func=cmd_keygen)

    f = sub.add_parser("fixtures", parents=[common], help="toy corpus with clean and backdoored models")
    f.set_defaults(func=cmd_fixtures)

    s = sub.add_parser("simulate", parents=[common], help="run one scripted round")
    s.add_argument("--config", required=True)
    s.add_argument("--transcript")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("bench-agg", parents=[common], help="user encryption and server timings")
    a.add_argument("--ms", default="2500,5000,10000")
    a.add_argument("--n-users", default="2,4,8,16")
    a.add_argument("--server-m", type=int, default=10000)
    a.add_argument("--key-bits", type=int, default=1024)
    a.set_defaults(func=cmd_bench_agg)

    z = sub.add_parser("bench-zkp", parents=[common], help="proof time and size per lambda")
    z.add_argument("--lambdas", default="1,3,5,7,9")
    z.add_argument("--toy", type=int, default=0, help="validation subset size (0 = full set)")
    z.add_argument("--repeats", type=int, default=1, help="keep the fastest of this many runs")
    z.set_defaults(func=cmd_bench_zkp)

    e = sub.add_parser("bench-expansion", parents=[common], help="ciphertext expansion factor")
    e.add_argument("--ms", default="1000,10000,100000")
    e.add_argument("--key-bits", default="2048")
    e.set_defaults(func=cmd_bench_expansion)

    for name, fn in (("prove", cmd_prove), ("verify", cmd_verify)):
        q = sub.add_parser(name, parents=[common], help=f"{name} that a model passes the backdoor check")
        q.add_argument("--dataset", required=True)
        q.add_argument("--lambda", dest="lam", type=int, default=5 if name == "prove" else 0)
        q.add_argument("--n-users", type=int, default=16, help="sets the committed slot width")
        q.add_argument("--tau", default=str(M.DEFAULT_TAU))
        if name == "prove":
            q.add_argument("--model", required=True)
            q.add_argument("--out", required=True)
            q.add_argument("--commit-out")
        else:
            q.add_argument("--proof", required=True)
            q.add_argument("--commit", required=True)
            q.add_argument("--dims", default=",".join(map(str, M.DEFAULT_DIMS)))
        q.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
