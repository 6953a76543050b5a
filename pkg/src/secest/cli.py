"""Command line front end: ``secest <command> ...``.

Exit codes: 0 success, 1 domain failure (unobservable, uncontrollable,
inadmissible pole, failed decode, ...), 2 usage or dimension errors.
"""

import argparse
import hashlib
import json
import os
import sys
import warnings

import numpy as np

from secest import __version__
from secest import experiments as ex
from secest.decoders import (
    decode_l0,
    decode_l0_actuators,
    decode_l1,
    decode_l1_actuators,
    identify_attacks,
)
from secest.errors import DimensionError, PreconditionError, SecestError
from secest.feedback import PoleSpec, design_resilient_feedback, random_admissible_poles
from secest.io import (
    SCHEMA_VERSION,
    dump_json,
    read_inputs,
    read_json,
    read_measurements,
    read_scenario,
    read_system,
    scenario_to_dict,
    system_to_dict,
    write_matrix_csv,
)
from secest.model import AttackScenario, simulate
from secest.power import build_swing_system, load_network
from secest.resilience import (
    is_resilient_with_actuators,
    is_sensor_correctable,
    max_correctable_sensor_errors,
    nullspace_falsifier,
)

FIGURES = ("fig2a", "fig2b", "fig3b", "fig4l", "fig4r")


class UsageError(Exception):
    pass


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, complex):
        return {"re": v.real, "im": v.imag}
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


def config_hash(config):
    blob = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _report(command, config, result, seed=None):
    config = _jsonable(config)
    return {
        "schema": SCHEMA_VERSION,
        "tool": "secest",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "config_hash": config_hash(config),
        "result": _jsonable(result),
    }


def _emit(report, out):
    if out:
        dump_json(report, out)
    else:
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


def _ints(text):
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"expected a list of integers, got {text!r}") from None


def _floats(text):
    try:
        return [complex(t.replace("i", "j")) if ("j" in t or "i" in t) else float(t)
                for t in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"expected a list of numbers, got {text!r}") from None


def _poles(text):
    """Poles from a JSON file of [re, im] pairs or from a comma separated list."""
    if text.endswith(".json") or os.path.isfile(text):
        doc = read_json(text)
        if isinstance(doc, dict):
            doc = doc.get("poles", [])
        try:
            return PoleSpec.from_pairs(doc)
        except (TypeError, ValueError):
            raise UsageError(f"{text}: expected a list of [re, im] pairs") from None
    return PoleSpec(tuple(_floats(text)))


def _vector(text, path):
    if (text is None) == (path is None):
        raise UsageError("give exactly one of --x0 and --x0-file")
    if path:
        doc = read_json(path)
        return np.asarray(doc["x0"] if isinstance(doc, dict) else doc, dtype=float)
    return np.asarray(_floats(text), dtype=float)


def _protected(args):
    return [i - 1 for i in (_ints(args.protected) if args.protected else [])]


# subcommands


def cmd_resilience(args):
    system = read_system(args.system)
    T = args.horizon or system.n
    protected = _protected(args)
    config = {"system": args.system, "horizon": T, "q": args.q, "actuators": args.actuators,
              "protected": [i + 1 for i in protected], "force": args.force}
    result = {}
    ok = True
    if args.actuators:
        if args.q is None:
            raise UsageError("--actuators needs --q")
        res, cert = is_resilient_with_actuators(system, T, args.q, force=args.force)
        result["resilient"] = res
        if cert:
            result["certificate"] = {"K": [i + 1 for i in cert["K"]], "L": [j + 1 for j in cert["L"]],
                                     "x": cert["x"], "w": cert["w"], "e": cert["e"]}
        summary = f"q={args.q} sensor/actuator attacks: {'resilient' if res else 'NOT resilient'}"
    elif args.q is not None:
        res, z = is_sensor_correctable(system, T, args.q, force=args.force, protected=protected)
        result.update(correctable=res, certificate=z)
        summary = f"q={args.q} sensor attacks: {'correctable' if res else 'NOT correctable'}"
    else:
        rep = max_correctable_sensor_errors(system, T, force=args.force, protected=protected)
        result.update(rep.to_dict())
        summary = f"q_max={rep.q_max} (s_min={rep.s_min}) at T={T}"
    if args.falsify_l1:
        q = args.q if args.q is not None else max(result.get("q_max", 0), 0)
        config.update(falsify_l1=True, r=args.r, trials=args.trials, seed=args.seed)
        v = nullspace_falsifier(system, T, q, r=args.r, trials=args.trials, seed=args.seed)
        result["l1_nullspace"] = {"q": q, "verdict": v.verdict, "K": [i + 1 for i in v.K],
                                  "ratio": v.ratio, "certificate": v.certificate,
                                  "directions_tested": v.directions_tested}
        summary += f"; l1 nullspace check at q={q}: {v.verdict}"
    _emit(_report("resilience", config, result, args.seed), args.out)
    print(summary, file=sys.stderr)
    return 0 if ok else 1


def cmd_decode(args):
    system = read_system(args.system)
    Y, U, _ = read_measurements(args.measurements)
    if args.inputs:
        U = read_inputs(args.inputs)
    if Y.shape[0] != system.p:
        raise DimensionError(f"measurements have {Y.shape[0]} rows but the system has p={system.p}")
    if args.horizon:
        if args.horizon > Y.shape[1]:
            raise DimensionError(f"horizon {args.horizon} exceeds the {Y.shape[1]} available samples")
        Y = Y[:, :args.horizon]
        if U is not None:
            U = np.asarray(U, dtype=float).reshape(system.m, -1)[:, :args.horizon - 1]
    if U is not None:
        U = np.asarray(U, dtype=float)
        if U.size != system.m * (Y.shape[1] - 1):
            raise DimensionError(f"inputs must be {system.m} x {Y.shape[1] - 1}")
    config = {"system": args.system, "measurements": args.measurements, "mode": args.mode,
              "r": args.r, "actuators": args.actuators, "lambda": args.lam, "delay": args.delay,
              "horizon": Y.shape[1], "force": args.force}
    if args.actuators:
        if args.mode == "l0":
            res = decode_l0_actuators(system, Y, U, delay=args.delay, force=args.force)
        else:
            if args.lam is None:
                raise UsageError("--lambda is required for l1 decoding with --actuators")
            res = decode_l1_actuators(system, Y, U, r=args.r, lam=args.lam, delay=args.delay)
    elif args.mode == "l0":
        res = decode_l0(system, Y, U, force=args.force)
    else:
        res = decode_l1(system, Y, r=args.r, inputs=U)
    result = res.to_dict()
    if res.ok:
        K, L, E, W = identify_attacks(res, Y, system, U)
        result["attacked_sensors"] = [i + 1 for i in K]
        result["attacked_actuators"] = [j + 1 for j in L]
    _emit(_report("decode", config, result), args.out)
    if not res.ok:
        print(f"decode {res.status}: {res.reason}", file=sys.stderr)
        return 1
    print(f"decode {res.status}; attacked sensors {result['attacked_sensors']}", file=sys.stderr)
    return 0


def cmd_design(args):
    system = read_system(args.system)
    if system.m != 1:
        raise PreconditionError(f"design needs a single-input system, got m={system.m}")
    if args.poles:
        spec = _poles(args.poles)
        seed = None
    else:
        spec = random_admissible_poles(system.A, system.B, system.C, np.random.default_rng(args.seed))
        seed = args.seed
    config = {"system": args.system, "poles": [complex(p) if np.iscomplex(p) else float(np.real(p))
                                               for p in spec.poles],
              "seed": seed}
    design = design_resilient_feedback(system.A, system.B, system.C, spec)
    _emit(_report("design", config, design.to_dict(), seed), args.out)
    print(f"gain designed; q_max={design.q_max}, verified={design.resilience_verified}",
          file=sys.stderr)
    return 0


def _run_experiment(cfg, out, command):
    cells = ex.run_grid(cfg)
    text = ex.results_csv(cells)
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    print(f"{command}: {len(cells)} cells, {cfg.trials} trials each", file=sys.stderr)
    return 0


def cmd_experiment(args):
    doc = read_json(args.config)
    if not isinstance(doc, dict):
        raise UsageError("experiment config must be a JSON object")
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        cfg = ex.ExperimentConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid experiment config: {exc}") from None
    if args.report:
        dump_json(_report("experiment", cfg.to_dict(), {"csv": args.out}, cfg.seed), args.report)
    return _run_experiment(cfg, args.out, "experiment")


def cmd_figure(args):
    cfg = ex.preset(args.command, trials=args.trials, seed=args.seed)
    if args.report:
        dump_json(_report(args.command, cfg.to_dict(), {"csv": args.out}, cfg.seed), args.report)
    return _run_experiment(cfg, args.out, args.command)


def cmd_swing_build(args):
    net = load_network(args.network)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = build_swing_system(net)
    doc = system_to_dict(model.system)
    doc["sensor_labels"] = list(model.sensor_labels)
    doc["actuator_labels"] = list(model.actuator_labels)
    doc["warnings"] = [str(w.message) for w in caught]
    if args.out:
        dump_json(doc, args.out)
    else:
        json.dump(doc, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    s = model.system
    print(f"swing model: n={s.n}, m={s.m}, p={s.p}", file=sys.stderr)
    return 0


def cmd_simulate(args):
    system = read_system(args.system)
    x0 = _vector(args.x0, args.x0_file)
    if x0.shape != (system.n,):
        raise DimensionError(f"x0 must have {system.n} entries, got {x0.size}")
    attack = read_scenario(args.scenario, system.p, system.m) if args.scenario else None
    T = attack.T if attack is not None else args.horizon
    if T is None:
        raise UsageError("give --horizon or --scenario")
    if attack is None:
        attack = AttackScenario.none(system.p, system.m, T)
    U = None
    if args.inputs:
        U = read_inputs(args.inputs)
    traj, meas = simulate(system, x0, inputs=U, attack=attack)
    doc = {"schema": SCHEMA_VERSION, "Y": meas.Y.tolist(), "X": traj.X.tolist(), "x0": x0.tolist(),
           "attack": scenario_to_dict(attack)}
    if U is not None:
        doc["U"] = np.asarray(U).reshape(system.m, T - 1).tolist()
    if args.csv:
        write_matrix_csv(meas.Y, args.csv)
    if args.out:
        dump_json(doc, args.out)
    else:
        json.dump(doc, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="secest",
                                     description="Secure state estimation under sparse attacks.")
    parser.add_argument("--version", action="version", version=f"secest {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("resilience", help="number of correctable attacks")
    p.add_argument("--system", required=True, help="system JSON with A, B, C")
    p.add_argument("--horizon", "-T", type=int, help="horizon T (default n)")
    p.add_argument("--q", type=int, help="test this attack budget instead of computing q_max")
    p.add_argument("--actuators", action="store_true", help="include actuator attacks (needs --q)")
    p.add_argument("--protected", help="1-based sensors that are never attacked, e.g. '35'")
    p.add_argument("--falsify-l1", action="store_true",
                   help="also search for violations of the l1/lr nullspace condition")
    p.add_argument("--r", default="2", help="group norm for --falsify-l1: 2 or inf")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true", help="allow enumerations above the cost guard")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_resilience)

    p = sub.add_parser("decode", help="estimate the initial state from attacked measurements")
    p.add_argument("--system", required=True)
    p.add_argument("--measurements", required=True,
                   help="Y as CSV (p rows, one column per step) or JSON with Y and optional U")
    p.add_argument("--inputs", help="U as CSV (m x (T-1)) or JSON; overrides U in the measurements")
    p.add_argument("--mode", choices=("l0", "l1"), default="l1")
    p.add_argument("--r", default="2", help="group norm for l1 decoding: 2 or inf")
    p.add_argument("--actuators", action="store_true", help="also allow actuator attacks")
    p.add_argument("--lambda", dest="lam", type=float,
                   help="actuator weight in the l1 actuator decoder (required there)")
    p.add_argument("--delay", type=int, default=0, help="states at the end not required unique")
    p.add_argument("--horizon", "-T", type=int, help="use only the first T samples")
    p.add_argument("--force", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("design", help="pole placement keeping every mode visible to every sensor")
    p.add_argument("--system", required=True, help="single-input system JSON")
    p.add_argument("--poles", help="JSON file of [re, im] pairs or a comma separated list; "
                   "random admissible poles if omitted")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("experiment", help="run a Monte-Carlo grid from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.add_argument("--report", help="also write a JSON report with the resolved config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_experiment)

    for name in FIGURES:
        p = sub.add_parser(name, help=f"preset grid {name}")
        p.add_argument("--out", help="CSV path (stdout if omitted)")
        p.add_argument("--report")
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=cmd_figure)

    p = sub.add_parser("swing-build", help="linearized swing model of a network description")
    p.add_argument("--network", help="network JSON (bundled 14-bus network if omitted)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_swing_build)

    p = sub.add_parser("simulate", help="simulate measurements under an attack scenario")
    p.add_argument("--system", required=True)
    p.add_argument("--x0", help="comma separated initial state")
    p.add_argument("--x0-file")
    p.add_argument("--scenario", help="attack JSON with K, L (1-based), E, W")
    p.add_argument("--inputs", help="U as CSV (m x (T-1)) or JSON")
    p.add_argument("--horizon", "-T", type=int)
    p.add_argument("--out", help="JSON with Y, X, x0 and the attack")
    p.add_argument("--csv", help="also write Y as CSV here")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, DimensionError, FileNotFoundError, KeyError) as exc:
        msg = exc.args[0] if exc.args else str(exc)
        print(f"secest {args.command}: {msg}", file=sys.stderr)
        return 2
    except SecestError as exc:
        print(f"secest {args.command}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"secest {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
