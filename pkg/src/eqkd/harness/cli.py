"""Command-line front end.

Subcommands::

    run          batch of seeded sessions -> summary JSON, optional CSV
    attack-demo  refined vs lumped estimation under biased interception
    plan         choose (n_test, p) for security targets
    bounds       evaluate the individual security bounds
    codes        validate a nested code pair from files
    serve        one networked endpoint (alice | channel | bob)
    loopback     all three endpoints locally over TCP
    replay       verify a recorded transcript by re-running it
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from ..bounds import (
    Lemma1Result,
    ParameterPlan,
    SamplingInstance,
    SecurityParams,
    key_rate,
    lemma1_bound,
    plan_parameters,
    rate_threshold,
    theorem2_asymptotic,
    theorem2_bound,
    theorem3_fidelity,
)
from ..codes import CodeError, css_meta, load_css, css_fingerprint, steane_pair
from ..protocol import ProtocolParams, session_meta, strategy_from_dict
from .endpoints import ROLES, loopback_session, serve_endpoint
from .runner import ExperimentConfig, attack_demo, emit_csv, replay_verify, run_experiment

_PARAM_KEYS = ("n_qubits", "bias_p", "m1", "m2", "e_max", "delta_e", "delta_prime")
_FLAG_TO_PARAM = {
    "n": "n_qubits",
    "bias_p": "bias_p",
    "m1": "m1",
    "m2": "m2",
    "e_max": "e_max",
    "delta_e": "delta_e",
    "delta_prime": "delta_prime",
}


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _add_session_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON session settings; explicit flags win")
    p.add_argument("--n", type=int, help="symbols transmitted per session")
    p.add_argument("--bias-p", type=float, help="rectilinear-basis probability")
    p.add_argument("--m1", type=int, help="test sample size, both-rectilinear class")
    p.add_argument("--m2", type=int, help="test sample size, both-diagonal class")
    p.add_argument("--e-max", type=float, help="acceptance threshold (default 0.11)")
    p.add_argument("--delta-e", type=float, help="threshold margin (default 0.01)")
    p.add_argument("--delta-prime", type=float, help="sampling slack (default p^2/10)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--eve", metavar="P1,P2", help="biased intercept-resend probabilities")
    g.add_argument("--depolarize", type=float, metavar="W", help="symmetric flip weight")
    g.add_argument("--pauli", metavar="LETTERS", help="fixed error string, e.g. IIXZY...")
    p.add_argument("--code", metavar="FILE[,FILE2]", help="code pair files; one file means the second code is its dual")
    p.add_argument("--seed", type=int, help="base seed (default 0)")


def _session_setup(args):
    file_cfg = json.loads(args.config.read_text()) if args.config else {}
    pd = dict(file_cfg.get("params", {}))
    for key in _PARAM_KEYS:
        if key in file_cfg:
            pd[key] = file_cfg[key]
    for attr, key in _FLAG_TO_PARAM.items():
        value = getattr(args, attr)
        if value is not None:
            pd[key] = value
    pd.setdefault("e_max", 0.11)
    pd.setdefault("delta_e", 0.01)
    missing = [k for k in ("n_qubits", "bias_p", "m1", "m2") if k not in pd]
    if missing:
        raise SystemExit(f"missing session settings: {', '.join(missing)}")
    params = ProtocolParams.from_dict({k: pd[k] for k in _PARAM_KEYS if k in pd})

    if args.eve is not None:
        p1, p2 = (float(x) for x in args.eve.split(","))
        strategy_dict = {"kind": "biased_intercept_resend", "p1": p1, "p2": p2}
    elif args.depolarize is not None:
        w = args.depolarize
        strategy_dict = {"kind": "depolarizing", "q": [1.0 - 3.0 * w, w, w, w]}
    elif args.pauli is not None:
        strategy_dict = {"kind": "fixed_pauli", "letters": args.pauli.upper()}
    else:
        strategy_dict = file_cfg.get("strategy", {"kind": "passive"})
    strategy = strategy_from_dict(strategy_dict)

    if args.code is not None:
        css = load_css(*args.code.split(","))
    elif "css" in file_cfg:
        from ..codes import css_from_meta

        css = css_from_meta(file_cfg["css"])
    elif "code_files" in file_cfg:
        css = load_css(*file_cfg["code_files"])
    else:
        css = steane_pair()

    seed = args.seed if args.seed is not None else int(file_cfg.get("seed", 0))
    meta = session_meta(params, strategy, css, seed)
    return params, strategy, css, seed, meta


def _cmd_run(args) -> int:
    params, strategy, css, seed, _meta = _session_setup(args)
    config = ExperimentConfig(
        params=params, strategy=strategy, css=css, trials=args.trials, base_seed=seed
    )
    keep = args.save_transcripts is not None
    result = run_experiment(config, keep_outcomes=keep)
    if args.out is not None:
        emit_csv(result.rows, args.out)
    if keep:
        out = Path(args.save_transcripts)
        out.mkdir(parents=True, exist_ok=True)
        for i, outcome in enumerate(result.outcomes):
            (out / f"trial_{i:04d}.jsonl").write_text(outcome.transcript.to_jsonl())
    _print(result.summary)
    return 0


def _cmd_attack_demo(args) -> int:
    params, _strategy, css, seed, _meta = _session_setup(args)
    if args.eve is None:
        raise SystemExit("attack-demo needs --eve P1,P2")
    p1, p2 = (float(x) for x in args.eve.split(","))
    _print(
        attack_demo(params, p1, p2, trials=args.trials, base_seed=seed, css=css)
    )
    return 0


def _cmd_plan(args) -> int:
    sec = SecurityParams(
        u=args.u,
        s=args.s,
        k=args.k,
        N=args.n_total,
        a_prime=args.a_prime,
        c=args.c,
        alpha=args.alpha,
    )
    plan = plan_parameters(sec, args.lam, args.p_bad)
    _print(dataclasses.asdict(plan))
    return 0 if plan.feasible else 1


def _cmd_bounds_lemma1(args) -> int:
    inst = SamplingInstance(
        n_total=args.n_total, n_test=args.n_test, p_bad=args.p_bad, lam=args.lam
    )
    res: Lemma1Result = lemma1_bound(inst)
    _print({"bound": res.bound, "exponent": res.exponent})
    return 0


def _cmd_bounds_theorem2(args) -> int:
    exact = theorem2_bound(args.delta, args.k)
    out = {"information_bits": exact}
    if args.asymptotic:
        out["asymptotic"] = theorem2_asymptotic(args.delta, args.k)
    _print(out)
    return 0


def _cmd_bounds_theorem3(args) -> int:
    _print({"fidelity": theorem3_fidelity(args.eps1, args.eps2)})
    return 0


def _cmd_bounds_rate(args) -> int:
    _print({
        "variant": args.variant,
        "error_rate": args.error_rate,
        "key_rate": key_rate(args.error_rate, args.variant),
    })
    return 0


def _cmd_bounds_threshold(args) -> int:
    _print({"variant": args.variant, "threshold": rate_threshold(args.variant)})
    return 0


def _cmd_codes_validate(args) -> int:
    try:
        css = load_css(*args.code.split(","))
    except (CodeError, OSError, ValueError) as exc:
        print(f"invalid code pair: {exc}", file=sys.stderr)
        return 1
    _print(
        {
            "n": css.n,
            "key_bits_per_block": css.k,
            "corrects": css.t,
            "outer": {"k_dim": css.c1.k_dim, "d": css.c1.d},
            "inner": {"k_dim": css.c2.k_dim, "d": css.c2.d},
            "fingerprint": css_fingerprint(css),
        }
    )
    return 0


def _addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host:
        raise argparse.ArgumentTypeError("addresses look like HOST:PORT")
    return host, int(port)


def _cmd_serve(args) -> int:
    _params, _strategy, _css, _seed, meta = _session_setup(args)
    return serve_endpoint(
        args.role,
        meta,
        listen=args.listen,
        connect=args.connect,
        out_dir=args.out,
        timeout=args.timeout,
    )


def _cmd_loopback(args) -> int:
    _params, _strategy, _css, _seed, meta = _session_setup(args)
    codes = loopback_session(meta, args.out, timeout=args.timeout)
    report = {"exit_codes": codes}
    outcome_path = Path(args.out) / "outcome_channel.json"
    if outcome_path.exists():
        report["channel_outcome"] = json.loads(outcome_path.read_text())
    _print(report)
    return 0 if all(code == 0 for code in codes.values()) else 2


def _cmd_replay(args) -> int:
    ok, detail = replay_verify(args.transcript)
    print(f"{'ok' if ok else 'FAIL'}: {detail}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eqkd",
        description="Simulate and analyze biased-basis quantum key distribution.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a batch of seeded sessions")
    _add_session_flags(p)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--out", type=Path, help="write per-trial CSV here")
    p.add_argument("--save-transcripts", type=Path, metavar="DIR")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("attack-demo", help="biased interception vs both estimators")
    _add_session_flags(p)
    p.add_argument("--trials", type=int, default=50)
    p.set_defaults(func=_cmd_attack_demo)

    p = sub.add_parser("plan", help="pick test size and bias for security targets")
    p.add_argument("--n-total", type=int, required=True, metavar="N")
    p.add_argument("--u", type=float, required=True, help="verification exponent")
    p.add_argument("--s", type=float, help="secrecy exponent")
    p.add_argument("--c", type=float, help="secrecy scaling constant (with --a-prime)")
    p.add_argument("--a-prime", type=float, default=1.0)
    p.add_argument("--k", type=int, required=True, help="final key bits")
    p.add_argument("--lam", type=float, required=True, help="test acceptance threshold")
    p.add_argument("--p-bad", type=float, required=True, help="guarded error fraction")
    p.add_argument("--alpha", type=float, help="override the test exponent")
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("bounds", help="evaluate individual security bounds")
    bsub = p.add_subparsers(dest="bound", required=True)

    b = bsub.add_parser("lemma1", help="sampling tail bound")
    b.add_argument("--n-test", type=int, required=True)
    b.add_argument("--n-total", type=int, required=True)
    b.add_argument("--lam", type=float, required=True)
    b.add_argument("--p-bad", type=float, required=True)
    b.set_defaults(func=_cmd_bounds_lemma1)

    b = bsub.add_parser("theorem2", help="information bound from a fidelity defect")
    b.add_argument("--delta", type=float, required=True)
    b.add_argument("--k", type=int, required=True)
    b.add_argument("--asymptotic", action="store_true")
    b.set_defaults(func=_cmd_bounds_theorem2)

    b = bsub.add_parser("theorem3", help="fidelity floor from two pass probabilities")
    b.add_argument("--eps1", type=float, required=True)
    b.add_argument("--eps2", type=float, required=True)
    b.set_defaults(func=_cmd_bounds_theorem3)

    b = bsub.add_parser("rate", help="asymptotic key rate at an error rate")
    b.add_argument("--error-rate", type=float, required=True)
    b.add_argument("--variant", default="css_shannon",
                   choices=("css_shannon", "mayers", "css_gv"))
    b.set_defaults(func=_cmd_bounds_rate)

    b = bsub.add_parser("threshold", help="zero of the key rate")
    b.add_argument("--variant", default="css_shannon",
                   choices=("css_shannon", "mayers", "css_gv"))
    b.set_defaults(func=_cmd_bounds_threshold)

    p = sub.add_parser("codes", help="code utilities")
    csub = p.add_subparsers(dest="codes_cmd", required=True)
    c = csub.add_parser("validate", help="check a nested pair from files")
    c.add_argument("--code", required=True, metavar="FILE[,FILE2]")
    c.set_defaults(func=_cmd_codes_validate)

    p = sub.add_parser("serve", help="run one networked endpoint")
    _add_session_flags(p)
    p.add_argument("--role", required=True, choices=ROLES)
    p.add_argument("--listen", type=_addr, metavar="HOST:PORT")
    p.add_argument("--connect", type=_addr, metavar="HOST:PORT")
    p.add_argument("--out", type=Path, help="directory for transcript and outcome files")
    p.add_argument("--timeout", type=float, default=30.0)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("loopback", help="run all three endpoints locally")
    _add_session_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--timeout", type=float, default=30.0)
    p.set_defaults(func=_cmd_loopback)

    p = sub.add_parser("replay", help="re-run a recorded transcript and compare")
    p.add_argument("transcript", type=Path)
    p.set_defaults(func=_cmd_replay)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, CodeError) as exc:
        # configuration problems, not bugs: no traceback
        print(f"eqkd: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
