"""Command line interface: sweeps, thresholds, finite-size curves, validation.

Configuration precedence is defaults < config file (TOML) < explicit
flags.  Data rows go to --out (or stdout) as CSV or JSON with 12
significant digits; progress goes to stderr.  Exit codes: 0 success,
2 configuration error, 3 numerical or consistency failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .bell import (
    OptimizerOptions,
    detection_threshold,
    optimize_chsh,
    visibility_threshold,
)
from .finite_key import finite_distance_sweep
from .keyrate import NoisyPreprocessing, distance_sweep, optimize_rate, result_vector
from .measurement import ConsistencyError
from .sources import ChannelModel, TwoPhotonParams
from .validation import CHECK_NAMES, perturb_report, run_validation

__all__ = ["RunConfig", "ResultRecord", "main"]


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    """Merged settings for one command invocation."""

    protocol: str = "one_photon"
    eta_d: str = "1.0"
    visibility: float = 1.0
    distance: float = 0.0
    distance_grid: str | None = None
    rounds: str | None = None
    rep_rate: float = 1e8
    eta_c: float = 1.0
    eta_s: float = 1.0
    q: float | None = None
    quantity: str = "bell"
    variable: str = "eta"
    phase_mode: str = "calibrated"
    objective: str = "round"
    draws: int = 200
    perturb: float | None = None
    checks: str | None = None
    seed: int = 7041
    starts: int = 16
    jobs: int = 1
    out: str | None = None
    format: str = "csv"

    def validate(self) -> None:
        if self.protocol not in ("one_photon", "two_photon"):
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        if not 0.0 <= self.visibility <= 1.0:
            raise ConfigError("visibility must lie in [0, 1]")
        if self.q is not None and not 0.0 <= self.q <= 0.5:
            raise ConfigError("q must lie in [0, 0.5]")
        if self.jobs < 1 or self.starts < 1 or self.draws < 1:
            raise ConfigError("jobs, starts and draws must be positive")
        if self.rep_rate <= 0:
            raise ConfigError("rep-rate must be positive")

    def optimizer(self) -> OptimizerOptions:
        return replace(OptimizerOptions(), starts=self.starts, seed=self.seed)

    def preprocessing(self) -> NoisyPreprocessing | None:
        return None if self.q is None else NoisyPreprocessing(self.q)

    def base_params(self) -> TwoPhotonParams | None:
        """Non-default heralding efficiencies for the two-photon source."""
        if self.protocol != "two_photon":
            if self.eta_c != 1.0 or self.eta_s != 1.0:
                raise ConfigError(
                    "eta_c/eta_s overrides are only wired up for two_photon"
                )
            return None
        if self.eta_c == 1.0 and self.eta_s == 1.0:
            return None
        return TwoPhotonParams(
            g_a=0.1, t_s=0.5, eta_c=self.eta_c, eta_s=self.eta_s
        )


class ResultRecord(dict):
    """One output row; insertion order fixes the column order."""


def _parse_grid(text: str, what: str) -> list[float]:
    """Either a single value or an inclusive lo:hi:steps grid."""
    parts = str(text).split(":")
    try:
        if len(parts) == 1:
            return [float(parts[0])]
        if len(parts) == 3:
            lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
            if n < 1:
                raise ConfigError(f"{what}: steps must be >= 1")
            if n == 1:
                return [lo]
            return [float(x) for x in np.linspace(lo, hi, n)]
    except ValueError as exc:
        raise ConfigError(f"bad {what} spec {text!r}: {exc}") from None
    raise ConfigError(f"bad {what} spec {text!r} (want VALUE or LO:HI:STEPS)")


def _parse_rounds(text: str) -> list[float]:
    try:
        vals = [float(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad rounds list {text!r}: {exc}") from None
    if not vals:
        raise ConfigError("rounds list is empty")
    return vals


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def _jsonable(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, float):
        return float(f"{x:.12g}")
    return x


def write_records(records: list[ResultRecord], out: str | None, fmt: str) -> None:
    if not records:
        raise ConfigError("no rows produced; empty grid?")
    header = list(records[0])
    for rec in records:
        if list(rec) != header:
            raise ConsistencyError("inconsistent record columns")
    if fmt == "json":
        payload = json.dumps(
            [{k: _jsonable(v) for k, v in rec.items()} for rec in records],
            indent=2,
        )
        if out is None:
            sys.stdout.write(payload + "\n")
        else:
            with open(out, "w") as fh:
                fh.write(payload + "\n")
        return
    stream = sys.stdout if out is None else open(out, "w", newline="")
    try:
        writer = csv.writer(stream)
        writer.writerow(header)
        for rec in records:
            writer.writerow([_fmt(v) for v in rec.values()])
    finally:
        if out is not None:
            stream.close()


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _settings_cols(settings, include_key: bool) -> dict:
    cols = {}
    pairs = [
        ("a1", settings.alice[0]),
        ("a2", settings.alice[1]),
        ("b1", settings.bob[0]),
        ("b2", settings.bob[1]),
    ]
    if include_key:
        pairs.append(("b3", settings.bob[2]))
    for name, s in pairs:
        cols[f"{name}_mag"] = float(s.magnitude)
        cols[f"{name}_phase"] = float(s.phase)
    return cols


def cmd_chsh(cfg: RunConfig) -> tuple[list[ResultRecord], int]:
    etas = _parse_grid(cfg.eta_d, "eta-d")
    opts = cfg.optimizer()
    cfg.base_params()  # reject unsupported heralding overrides early
    channel = ChannelModel(L=cfg.distance)
    records = []
    for i, eta in enumerate(etas):
        res = optimize_chsh(cfg.protocol, eta, cfg.visibility, channel, opts)
        rec = ResultRecord(
            protocol=cfg.protocol,
            eta_d=eta,
            visibility=float(cfg.visibility),
            L=float(cfg.distance),
            S=res.S,
            S_signed=res.S_signed,
        )
        for (x, y), label in zip(
            [(0, 0), (0, 1), (1, 0), (1, 1)], ["E11", "E12", "E21", "E22"]
        ):
            rec[label] = float(res.correlators[x, y])
        rec.update({k: float(v) for k, v in res.source_params.items()})
        rec.update(_settings_cols(res.settings, include_key=False))
        rec.update(converged=True, n_evals=res.n_evals, seed=res.seed)
        records.append(rec)
        _progress(f"chsh {i + 1}/{len(etas)}: eta_d={eta:.6g} S={res.S:.6f}")
    return records, 0


def _rate_record(cfg: RunConfig, eta: float, length: float, res) -> ResultRecord:
    rec = ResultRecord(
        protocol=cfg.protocol,
        eta_d=float(eta),
        visibility=float(cfg.visibility),
        L=float(length),
        S=res.S,
        r=res.r,
        h_ec=res.h_ec,
        q_opt=res.q_opt,
        P_h=res.P_h,
        R=res.R,
        nu=res.nu,
    )
    rec.update({k: float(v) for k, v in res.source_params.items()})
    rec.update(_settings_cols(res.settings, include_key=True))
    rec.update(converged=not res.flagged, seed=cfg.seed)
    return rec


def cmd_rate(cfg: RunConfig) -> tuple[list[ResultRecord], int]:
    etas = _parse_grid(cfg.eta_d, "eta-d")
    opts = cfg.optimizer()
    base = cfg.base_params()
    channel = ChannelModel(L=cfg.distance)
    # walk from the most efficient detector down, warm-starting each point
    order = sorted(range(len(etas)), key=lambda i: -etas[i])
    results: dict[int, object] = {}
    seeds: tuple = ()
    q0 = 0.0
    for k, i in enumerate(order):
        res = optimize_rate(
            cfg.protocol,
            etas[i],
            cfg.visibility,
            channel,
            opts,
            preprocessing=cfg.preprocessing(),
            nu=cfg.rep_rate,
            objective=cfg.objective,
            base_params=base,
            extra_seeds=seeds,
            q_init=q0,
        )
        if res.r_raw > 0.0:
            seeds = (result_vector(res),)
            q0 = res.q_opt
        results[i] = res
        _progress(f"rate {k + 1}/{len(etas)}: eta_d={etas[i]:.6g} r={res.r:.6g}")
    return [_rate_record(cfg, etas[i], cfg.distance, results[i]) for i in range(len(etas))], 0


def cmd_sweep(cfg: RunConfig) -> tuple[list[ResultRecord], int]:
    if cfg.distance_grid is None:
        raise ConfigError("sweep needs --distance-grid")
    etas = _parse_grid(cfg.eta_d, "eta-d")
    if len(etas) != 1:
        raise ConfigError("sweep varies distance; give a single --eta-d")
    lengths = _parse_grid(cfg.distance_grid, "distance-grid")
    opts = cfg.optimizer()
    base = cfg.base_params()
    if cfg.rounds is not None:
        budgets = _parse_rounds(cfg.rounds)
        points = finite_distance_sweep(
            cfg.protocol,
            etas[0],
            cfg.visibility,
            budgets,
            lengths,
            nu=cfg.rep_rate,
            opts=opts,
            base_params=base,
        )
        records = []
        for p in points:
            records.append(
                ResultRecord(
                    protocol=cfg.protocol,
                    eta_d=etas[0],
                    visibility=float(cfg.visibility),
                    L=p.L,
                    n_rounds=p.n_rounds,
                    n_pulses=p.n_pulses,
                    l_per_n=p.l_per_n,
                    R=p.R,
                    r_inf=p.r_inf,
                    R_inf=p.R_inf,
                    S=p.S,
                    q_opt=p.q,
                    P_h=p.P_h,
                    nu=float(cfg.rep_rate),
                    seed=cfg.seed,
                )
            )
        _progress(f"finite sweep: {len(lengths)} lengths x {len(budgets)} budgets")
        return records, 0
    sweep = distance_sweep(
        cfg.protocol,
        etas[0],
        cfg.visibility,
        lengths,
        nu=cfg.rep_rate,
        opts=opts,
        preprocessing=cfg.preprocessing(),
        jobs=cfg.jobs,
        base_params=base,
    )
    _progress(f"sweep: {len(lengths)} lengths done")
    return [
        _rate_record(cfg, etas[0], L, res) for L, res in zip(lengths, sweep)
    ], 0


def cmd_finite(cfg: RunConfig) -> tuple[list[ResultRecord], int]:
    if cfg.rounds is None:
        raise ConfigError("finite needs --rounds")
    saved = cfg.distance_grid
    cfg.distance_grid = f"{cfg.distance}"
    try:
        return cmd_sweep(cfg)
    finally:
        cfg.distance_grid = saved


def cmd_threshold(cfg: RunConfig) -> tuple[list[ResultRecord], int]:
    opts = cfg.optimizer()
    cfg.base_params()
    if cfg.quantity not in ("bell", "keyrate"):
        raise ConfigError("quantity must be 'bell' or 'keyrate'")
    if cfg.variable == "eta":
        value = detection_threshold(
            cfg.protocol,
            cfg.visibility,
            cfg.quantity,
            opts,
            channel=ChannelModel(L=cfg.distance),
            preprocessing=cfg.preprocessing(),
            phase_mode=cfg.phase_mode,
        )
        context = {"visibility": float(cfg.visibility)}
    elif cfg.variable == "visibility":
        etas = _parse_grid(cfg.eta_d, "eta-d")
        if len(etas) != 1:
            raise ConfigError("visibility threshold needs a single --eta-d")
        value = visibility_threshold(
            cfg.protocol,
            etas[0],
            cfg.quantity,
            opts,
            channel=ChannelModel(L=cfg.distance),
            preprocessing=cfg.preprocessing(),
            phase_mode=cfg.phase_mode,
        )
        context = {"eta_d": etas[0]}
    else:
        raise ConfigError("variable must be 'eta' or 'visibility'")
    rec = ResultRecord(
        protocol=cfg.protocol,
        quantity=cfg.quantity,
        variable=cfg.variable,
        phase_mode=cfg.phase_mode,
        q="opt" if cfg.q is None else float(cfg.q),
        L=float(cfg.distance),
    )
    rec.update(context)
    rec.update(threshold=float(value), seed=cfg.seed)
    _progress(f"threshold {cfg.protocol}/{cfg.quantity}: {value:.6g}")
    return [rec], 0


def cmd_validate(cfg: RunConfig) -> tuple[list[ResultRecord], int]:
    names = None
    if cfg.checks is not None:
        names = [tok.strip() for tok in cfg.checks.split(",") if tok.strip()]
        unknown = sorted(set(names) - set(CHECK_NAMES))
        if unknown:
            raise ConfigError(f"unknown checks: {', '.join(unknown)}")
    if cfg.perturb is not None:
        report = perturb_report(
            cfg.perturb, draws=cfg.draws, seed=cfg.seed, names=names
        )
        records = [
            ResultRecord(
                check=name, perturbation=float(cfg.perturb),
                detected=detected, max_err=float(err),
            )
            for name, detected, err in report
        ]
        missed = [r["check"] for r in records if not r["detected"]]
        for name in missed:
            _progress(f"perturbation NOT detected by {name}")
        return records, 3 if missed else 0
    results = run_validation(draws=cfg.draws, seed=cfg.seed, names=names)
    records = []
    failed = []
    for chk in results:
        records.append(
            ResultRecord(
                check=chk.name,
                passed=chk.passed,
                max_err=float(chk.max_err),
                tol=float(chk.tol),
                n_draws=chk.n_draws,
                worst=chk.worst,
            )
        )
        if not chk.passed:
            failed.append(chk.name)
    for name in failed:
        _progress(f"tolerance breach in {name}")
    return records, 3 if failed else 0


COMMANDS = {
    "chsh": cmd_chsh,
    "rate": cmd_rate,
    "sweep": cmd_sweep,
    "finite": cmd_finite,
    "threshold": cmd_threshold,
    "validate": cmd_validate,
}

# flags whose absence means "use config/default", keyed by argparse dest
_FLAG_HELP = {
    "protocol": "one_photon or two_photon",
    "eta_d": "detector efficiency VALUE or LO:HI:STEPS grid",
    "visibility": "interference visibility in [0, 1]",
    "distance": "fiber length in km",
    "distance_grid": "length grid VALUE or LO:HI:STEPS (sweep)",
    "rounds": "comma list of heralded-round budgets (finite)",
    "rep_rate": "source repetition rate in Hz",
    "eta_c": "herald-path detector efficiency (two_photon)",
    "eta_s": "herald-arm collection efficiency (two_photon)",
    "q": "fix the preprocessing flip probability (default: optimize)",
    "quantity": "threshold quantity: bell or keyrate",
    "variable": "threshold variable: eta or visibility",
    "phase_mode": "Bell-threshold search family: calibrated or free",
    "objective": "rate objective: round or throughput",
    "draws": "validation parameter draws per check",
    "perturb": "validation self-test: perturb each formula by EPS",
    "checks": "comma list restricting validation checks",
    "seed": "optimizer / draw seed",
    "starts": "optimizer multistart count",
    "jobs": "worker processes for sweep points",
    "out": "output path (default: stdout)",
    "format": "output format: csv or json",
}

_INT_FLAGS = {"draws", "seed", "starts", "jobs"}
_FLOAT_FLAGS = {"visibility", "distance", "rep_rate", "eta_c", "eta_s", "q", "perturb"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diqkd",
        description="Device-independent QKD rates for heralded photonic links.",
    )
    parser.add_argument("--config", help="TOML config file merged under the flags")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fun in COMMANDS.items():
        p = sub.add_parser(name, help=fun.__doc__)
        for dest, help_text in _FLAG_HELP.items():
            flag = "--" + dest.replace("_", "-")
            if dest in _INT_FLAGS:
                p.add_argument(flag, type=int, default=None, help=help_text)
            elif dest in _FLOAT_FLAGS:
                p.add_argument(flag, type=float, default=None, help=help_text)
            else:
                p.add_argument(flag, default=None, help=help_text)
    return parser


def _load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad TOML in {path!r}: {exc}") from None
    flat = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    known = {f.name for f in fields(RunConfig)}
    merged = {}
    for key, value in flat.items():
        name = str(key).replace("-", "_")
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        merged[name] = value
    return merged


def merge_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        values.update(_load_config(args.config))
    for f in fields(RunConfig):
        given = getattr(args, f.name, None)
        if given is not None:
            values[f.name] = given
    # config files may hold numbers for string-typed grid fields
    for key in ("eta_d", "rounds", "distance_grid"):
        if key in values and values[key] is not None:
            values[key] = str(values[key])
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = merge_config(args)
        records, code = COMMANDS[args.command](cfg)
        write_records(records, cfg.out, cfg.format)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ConsistencyError, RuntimeError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return code


if __name__ == "__main__":
    sys.exit(main())
