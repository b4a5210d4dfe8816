"""Command-line experiment harness.

Configuration precedence, lowest first: built-in defaults, the INI file
given by ``--config``, ``RYDGATE_<SECTION>_<KEY>`` environment variables,
then command-line flags. Unknown keys are errors everywhere.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime as _dt
import io
import json
import os
import platform
import re
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (
    EvolutionSpec,
    NonConvergenceError,
    population_trajectory,
    propagate_unitary,
    trajectory_csv,
)
from .experiments import (
    fit_critical,
    plateaus,
    point_seed,
    robustness_grid,
    sweep_omega,
    sweep_phi,
    train_protocols_per_r,
)
from .operators import CNOT4, LOGICAL_INDICES, PhysicalConfig, logical_to_density, matrix_to_json
from .optimizer import AdamConfig, TrainingConfig, TrainingError, derive_rng, train
from .protocol import ProtocolParams, pulse_table
from .robustness import trace_error
from .universality import report_json, universality_report

ENV_PREFIX = "RYDGATE_"
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


# --- value parsing ----------------------------------------------------------

_NUM = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"


def parse_angle(text) -> float:
    """Numbers with optional ``pi`` factors: ``4pi``, ``pi/2``, ``2pi*1e6``, ``0.5``."""
    if isinstance(text, (int, float)):
        return float(text)
    s = str(text).strip().lower().replace(" ", "").replace("π", "pi")
    if not s:
        raise UsageError("empty numeric value")
    tokens = re.split(r"([*/])", s)
    value = None
    op = "*"
    for tok in tokens:
        if tok in ("*", "/"):
            op = tok
            continue
        m = re.fullmatch(rf"({_NUM}|[+-])?(pi)?", tok)
        if not tok or m is None or m.group(1) in (None, "+", "-") and m.group(2) is None:
            raise UsageError(f"cannot parse number {text!r}")
        x = float(m.group(1) + "1" if m.group(1) in ("+", "-") else m.group(1) or 1.0)
        if m.group(2):
            x *= np.pi
        value = x if value is None else (value * x if op == "*" else value / x)
    return float(value)


def parse_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [parse_angle(x) for x in text]
    return [parse_angle(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _opt(parse):
    return lambda x: None if str(x).strip().lower() in ("", "none") else parse(x)


_PHYS = PhysicalConfig()
SCHEMA = {
    "physical": {
        "c6": (float, _PHYS.c6), "vdw_convention": (str, _PHYS.vdw_convention),
        "r": (float, _PHYS.r), "phi": (_opt(parse_angle), None), "tau": (float, _PHYS.tau),
        "omega_max": (parse_angle, _PHYS.omega_max), "a_max": (parse_angle, _PHYS.a_max),
        "dphi_min": (parse_angle, _PHYS.dphi_min), "dphi_max": (parse_angle, _PHYS.dphi_max),
        "b_min": (float, _PHYS.b_min), "b_max": (float, _PHYS.b_max),
        "gamma": (float, _PHYS.gamma), "branching": (float, _PHYS.branching),
        "m": (int, _PHYS.m), "n_steps": (int, _PHYS.n_steps),
    },
    "training": {
        "epochs": (int, 500), "batch_size": (int, 32), "fd_epsilon": (float, 1e-8),
        "lr": (float, AdamConfig.lr), "lr_final": (_opt(float), None), "beta1": (float, 0.9),
        "beta2": (float, 0.999), "adam_eps": (float, 1e-8),
        "resample_each_epoch": (parse_bool, True), "loss_mode": (str, "normalized"),
    },
    "sweep": {
        "phis": (parse_list, [k * np.pi / 4 for k in range(0, 17)]),
        "omegas": (parse_list, [2 * np.pi * 1e6 * k for k in (1, 2, 4, 6, 8, 10)]),
        "restarts": (int, 15),
    },
    "robustness": {
        "radii": (parse_list, [4.0 + 0.5 * k for k in range(15)]),
        "sigmas": (parse_list, [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]),
        "n_traj": (int, 50), "n_protocols": (int, 10), "protocols_dir": (_opt(str), None),
    },
    "simulate": {
        "protocol": (_opt(str), None), "state": (str, "random"), "stride": (int, 64),
    },
    "run": {"seed": (int, 0), "threads": (int, 1)},
}


def _set(cfg: dict, section: str, key: str, raw, origin: str):
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise UsageError(f"unknown config key {section}.{key} ({origin})")
    try:
        cfg[section][key] = SCHEMA[section][key][0](raw)
    except UsageError:
        raise
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad value for {section}.{key} ({origin}): {raw!r}") from exc


def load_config(path=None, env=None, overrides=()) -> dict:
    """Resolve the full configuration (see module docstring for precedence)."""
    cfg = {sec: {k: v[1] for k, v in keys.items()} for sec, keys in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise UsageError(f"malformed config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in SCHEMA:
                raise UsageError(f"unknown config section [{section}] in {path}")
            for key, raw in parser.items(section):
                _set(cfg, section, key, raw, str(path))
    env = os.environ if env is None else env
    for name in sorted(env):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section = next((s for s in SCHEMA if rest.startswith(s + "_")), None)
        if section is None:
            raise UsageError(f"environment variable {name} names no config section")
        _set(cfg, section, rest[len(section) + 1:], env[name], name)
    for section, key, raw in overrides:
        _set(cfg, section, key, raw, "command line")
    return cfg


def physical_from(cfg: dict) -> PhysicalConfig:
    p = dict(cfg["physical"])
    phi = p.pop("phi")
    phys = PhysicalConfig(**p)
    return phys.with_gate_action(phi) if phi is not None else phys


def training_from(cfg: dict, seed: int) -> TrainingConfig:
    t = cfg["training"]
    adam = AdamConfig(lr=t["lr"], beta1=t["beta1"], beta2=t["beta2"], eps=t["adam_eps"],
                      lr_final=t["lr_final"])
    return TrainingConfig(epochs=t["epochs"], batch_size=t["batch_size"],
                          fd_epsilon=t["fd_epsilon"], adam=adam, seed=seed,
                          resample_each_epoch=t["resample_each_epoch"],
                          loss_mode=t["loss_mode"])


# --- output helpers ---------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    path.write_text(buf.getvalue())


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=10)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def write_manifest(out: Path, command: str, cfg: dict, extra: dict, started) -> None:
    finished = _dt.datetime.now(_dt.timezone.utc)
    manifest = {
        "command": command,
        "config": _jsonable(cfg),
        "git": git_describe(),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started": started.isoformat(),
        "finished": finished.isoformat(),
        "wall_time_s": (finished - started).total_seconds(),
        **_jsonable(extra),
    }
    write_json(out / "run_manifest.json", manifest)


# --- commands ---------------------------------------------------------------

def cmd_optimize(cfg: dict, out: Path) -> dict:
    phys = physical_from(cfg)
    seed = point_seed(cfg["run"]["seed"], "optimize")
    tcfg = training_from(cfg, seed)
    rec = train(tcfg, phys, callback=_progress(tcfg.epochs))
    write_csv(out / "training_curve.csv", ["epoch", "loss"],
              [(k, float(v)) for k, v in enumerate(rec.losses)])
    (out / "protocol_final.json").write_text(rec.theta.to_json(phys) + "\n")
    (out / "pulses.csv").write_text(pulse_table(rec.theta, phys, n_points=1025))
    summary = {"final_loss": float(rec.losses[-1]),
               "validation_infidelity": rec.final_infidelity, "gate_action": phys.gate_action}
    write_json(out / "summary.json", summary)
    print(f"validation infidelity {rec.final_infidelity:.3e} "
          f"(last batch loss {rec.losses[-1]:.3e})")
    return {"seeds": {"training": seed}, "wall_ms": rec.wall_ms.tolist()}


def _progress(total):
    step = max(1, total // 10)

    def cb(epoch, value):
        if (epoch + 1) % step == 0 or epoch + 1 == total:
            print(f"  epoch {epoch + 1}/{total}  loss {value:.4e}", file=sys.stderr)
    return cb


def cmd_sweep_phi(cfg: dict, out: Path) -> dict:
    phys = physical_from(cfg)
    tcfg = training_from(cfg, 0)
    rows, per_key = sweep_phi(cfg["sweep"]["phis"], phys, tcfg, cfg["sweep"]["restarts"],
                              cfg["run"]["seed"], cfg["run"]["threads"])
    write_csv(out / "sweep_phi.csv", ["phi", "mean_infidelity", "stderr"],
              [(r.key, r.mean_infidelity, r.stderr) for r in rows])
    write_csv(out / "sweep_phi_restarts.csv", ["phi", "restart", "seed", "infidelity"],
              [(k, i, rec.seed, rec.final_infidelity)
               for k, recs in per_key.items() for i, rec in enumerate(recs)])
    phis = [r.key for r in rows]
    infs = [r.mean_infidelity for r in rows]
    try:
        fit = fit_critical(phis, infs)
    except Exception as exc:  # data stays on disk even if the fit breaks
        fit = {"success": False, "message": repr(exc)}
    write_json(out / "fit.json", {"fit": fit, "plateaus": plateaus(phis, infs)})
    if not fit.get("success"):
        print(f"fit failed: {fit.get('message')}", file=sys.stderr)
    return {"seeds": {str(k): [rec.seed for rec in v] for k, v in per_key.items()}}


def cmd_sweep_omega(cfg: dict, out: Path) -> dict:
    phys = physical_from(cfg)
    tcfg = training_from(cfg, 0)
    rows, per_key = sweep_omega(cfg["sweep"]["omegas"], phys, tcfg, cfg["sweep"]["restarts"],
                                cfg["run"]["seed"], cfg["run"]["threads"])
    write_csv(out / "sweep_omega.csv", ["omega_max", "mean_infidelity", "stderr"],
              [(r.key, r.mean_infidelity, r.stderr) for r in rows])
    return {"seeds": {str(k): [rec.seed for rec in v] for k, v in per_key.items()}}


def _protocol_path(root: Path, r: float, k: int) -> Path:
    return root / f"r{r:g}" / f"protocol_{k}.json"


def cmd_robustness(cfg: dict, out: Path) -> dict:
    phys = physical_from(cfg)
    rc = cfg["robustness"]
    radii = sorted(rc["radii"])
    if rc["protocols_dir"]:
        root = Path(rc["protocols_dir"])
        expected = [_protocol_path(root, r, k) for r in radii for k in range(rc["n_protocols"])]
        missing = [str(p) for p in expected if not p.is_file()]
        if missing:
            raise UsageError("missing protocol files:\n  " + "\n  ".join(missing))
        protocols = {r: [ProtocolParams.from_json(_protocol_path(root, r, k).read_text())
                         for k in range(rc["n_protocols"])] for r in radii}
    else:
        tcfg = training_from(cfg, 0)
        protocols = train_protocols_per_r(radii, phys, tcfg, rc["n_protocols"],
                                          cfg["run"]["seed"], cfg["run"]["threads"])
        for r, thetas in protocols.items():
            for k, theta in enumerate(thetas):
                path = _protocol_path(out / "protocols", r, k)
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(theta.to_json(phys.replace(r=r)) + "\n")
    rows = robustness_grid(protocols, rc["sigmas"], phys, rc["n_traj"], cfg["run"]["seed"])
    write_csv(out / "robustness.csv", ["r", "sigma_r", "epsilon", "stderr", "n_samples"],
              [(x.r, x.sigma_r, x.epsilon, x.stderr, x.n_samples) for x in rows])
    return {"excluded_samples": sum(x.n_excluded for x in rows)}


def cmd_verify_universality(cfg: dict, out: Path) -> dict:
    report = universality_report()
    (out / "universality_report.json").write_text(report_json(report) + "\n")
    print("universality checks " + ("passed" if report["passed"] else "FAILED"))
    return {"passed": report["passed"]}


def _state_from(text: str, seed: int) -> np.ndarray:
    if text == "random":
        from .operators import random_qubit_states
        return random_qubit_states(derive_rng(seed, 9), 1)[0]
    if re.fullmatch(r"[01]{2}", text):
        psi = np.zeros(4, dtype=complex)
        psi[int(text, 2)] = 1.0
        return psi
    raise UsageError(f"state must be 'random' or two bits, got {text!r}")


def cmd_simulate(cfg: dict, out: Path) -> dict:
    sc = cfg["simulate"]
    if not sc["protocol"]:
        raise UsageError("simulate needs --protocol PATH")
    try:
        theta = ProtocolParams.from_json(Path(sc["protocol"]).read_text())
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot load protocol {sc['protocol']}: {exc}") from exc
    phys = physical_from(cfg)
    if theta.m != phys.m:
        raise UsageError(f"protocol has m={theta.m} but config has m={phys.m}")
    summary = {"gate_action": phys.gate_action}
    if phys.gamma == 0:
        u = propagate_unitary(EvolutionSpec(theta, phys, mode="propagator"))
        idx = list(LOGICAL_INDICES)
        block = u[np.ix_(idx, idx)]
        (out / "logical_block.json").write_text(matrix_to_json(block, "logical (00,01,10,11)") + "\n")
        summary["trace_error"] = trace_error(block, CNOT4)
    psi = _state_from(sc["state"], cfg["run"]["seed"])
    t, pops = population_trajectory(logical_to_density(psi), EvolutionSpec(theta, phys),
                                    stride=sc["stride"])
    (out / "populations.csv").write_text(trajectory_csv(t, pops))
    write_json(out / "simulate_summary.json", summary)
    return {}


COMMANDS = {
    "optimize": cmd_optimize,
    "sweep-phi": cmd_sweep_phi,
    "sweep-omega": cmd_sweep_omega,
    "robustness": cmd_robustness,
    "verify-universality": cmd_verify_universality,
    "simulate": cmd_simulate,
}

# flag -> (section, key)
FLAGS = {
    "phi": ("physical", "phi"), "r": ("physical", "r"), "gamma": ("physical", "gamma"),
    "n_steps": ("physical", "n_steps"), "m": ("physical", "m"),
    "omega_max": ("physical", "omega_max"),
    "epochs": ("training", "epochs"), "batch_size": ("training", "batch_size"),
    "lr": ("training", "lr"), "loss_mode": ("training", "loss_mode"),
    "phis": ("sweep", "phis"), "omegas": ("sweep", "omegas"), "restarts": ("sweep", "restarts"),
    "radii": ("robustness", "radii"), "sigmas": ("robustness", "sigmas"),
    "n_traj": ("robustness", "n_traj"), "n_protocols": ("robustness", "n_protocols"),
    "protocols_dir": ("robustness", "protocols_dir"),
    "protocol": ("simulate", "protocol"), "state": ("simulate", "state"),
    "seed": ("run", "seed"), "threads": ("run", "threads"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rydgate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path)
        p.add_argument("--out", type=Path, default=Path("runs") / name)
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override any config key")
        for flag in FLAGS:
            p.add_argument("--" + flag.replace("_", "-"), dest=flag, default=None)
    return parser


def main(argv=None) -> int:
    started = _dt.datetime.now(_dt.timezone.utc)
    try:
        args = build_parser().parse_args(argv)
        overrides = []
        for item in args.set:
            m = re.fullmatch(r"(\w+)\.(\w+)=(.*)", item)
            if m is None:
                raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
            overrides.append(m.groups())
        overrides += [(*FLAGS[f], getattr(args, f)) for f in FLAGS if getattr(args, f) is not None]
        cfg = load_config(args.config, overrides=overrides)
        physical_from(cfg)
        training_from(cfg, 0)
        if cfg["run"]["threads"] < 1:
            raise UsageError("threads must be >= 1")
        args.out.mkdir(parents=True, exist_ok=True)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        extra = COMMANDS[args.command](cfg, args.out)
        write_manifest(args.out, args.command, cfg, extra, started)
        if args.command == "verify-universality" and not extra["passed"]:
            return EXIT_NUMERIC
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonConvergenceError, TrainingError, FloatingPointError, np.linalg.LinAlgError,
            ValueError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
