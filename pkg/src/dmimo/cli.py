"""Command line entry point ``sim``."""

from __future__ import annotations

import argparse
import logging
import sys

from .channel import SCENARIOS
from .config import AXES, builtin_configs, load_config, sweep_scenarios
from .harness import SINGLE_USER, run_experiment, to_csv, validate_queue

log = logging.getLogger("dmimo")


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def _run(cfg, scheme, axis, value, sc=None):
    res = run_experiment(sc or cfg.scenario(), scheme, cfg.tracker, threshold=cfg.sigma_th2,
                         resolution=cfg.grid_m)
    log.info("%s %s=%s: %s", scheme, axis or "-", value if value is not None else "-", res.report)
    return res


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    scheme = args.scheme or cfg.scheme
    res = _run(cfg, scheme, None, None)
    _emit(to_csv([("", None, res)], cfg.n_users), args.out)
    return 0 if res.feasible else 2


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    scheme = args.scheme or cfg.scheme
    values = [float(v) for v in args.values.replace(",", " ").split()]
    pairs = sweep_scenarios(cfg, args.axis, values)
    rows = [(args.axis, v, _run(c, scheme, args.axis, v, sc)) for v, (c, sc) in zip(values, pairs)]
    _emit(to_csv(rows, cfg.n_users), args.out)
    return 0


def cmd_validate_queue(args) -> int:
    cfg = load_config(args.config)
    scheme = args.scheme or cfg.scheme
    if scheme not in SINGLE_USER:
        print(f"queue validation needs a single-user scheme, got {scheme}", file=sys.stderr)
        return 2
    sc = cfg.scenario()
    sol, q = validate_queue(sc, scheme, args.frames, cfg.tracker)
    if q is None:
        print("infeasible: no policy meets the QoS target")
        return 2
    theta = sc.qos[0].theta
    xi = sc.qos[0].xi
    print(f"scheme            {scheme}")
    print(f"multiplier        {float(sol.lam):.6g}")
    print(f"frames simulated  {args.frames}")
    print(f"stable            {q.stable}")
    print(f"Pr(D > D_th)      {q.violation_prob:.3e}  (target {xi:.1e})")
    print(f"tail slope        {q.tail_slope:.4e}  (theta {theta:.4e}, ratio {q.tail_slope / theta:.3f})")
    return 0


def cmd_scenarios(args) -> int:
    print("geometries:")
    for name, sc in SCENARIOS.items():
        print(f"  {name:8s} {len(sc['bs_positions'])} BSs, {len(sc['user_positions'])} user(s): {sc['description']}")
        for i, (x, y) in enumerate(sc["bs_positions"], 1):
            print(f"           BS {i}: ({x:7.2f}, {y:7.2f})")
        for i, (x, y) in enumerate(sc["user_positions"], 1):
            print(f"           user {i}: ({x:7.2f}, {y:7.2f})")
    print("presets:")
    for name in builtin_configs():
        print(f"  {name}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sim", description="QoS-driven BS selection simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scheme on one config")
    r.add_argument("--config", required=True, help="config file or preset name")
    r.add_argument("--scheme")
    r.add_argument("--out", help="CSV path (stdout if omitted)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run one scheme over a parameter axis")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True, choices=AXES)
    s.add_argument("--values", required=True, help="comma-separated values (kbps, ms, or plain)")
    s.add_argument("--scheme")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    q = sub.add_parser("validate-queue", help="queue simulation on a solved single-user policy")
    q.add_argument("--config", required=True)
    q.add_argument("--scheme")
    q.add_argument("--frames", type=int, default=10**6)
    q.set_defaults(func=cmd_validate_queue)

    sc = sub.add_parser("scenarios", help="built-in geometries and presets")
    sc.add_argument("action", choices=["list"])
    sc.set_defaults(func=cmd_scenarios)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
