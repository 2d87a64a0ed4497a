"""Command-line entry point: ``blockamp {model,infer,simulate,detect,econ}``.

Every subcommand reads the same flat YAML key/value config (``--config``),
accepts ``--set key=value`` overrides and writes CSV and JSON reports into
``--out``. Exit status is 0 on success, 1 for bad input and 2 when an
internal consistency check fails.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import yaml

from . import detector, econ, inference, model, simnet
from .records import InputError, InvariantError, iter_rows

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2
SUBCOMMANDS = ("model", "infer", "simulate", "detect", "econ")


def _opt_float(v):
    return None if v is None or str(v).lower() in ("", "none", "null") else float(v)


def _opt_int(v):
    return None if v is None or str(v).lower() in ("", "none", "null") else int(v)


def _opt_str(v):
    return None if v is None or str(v).lower() in ("", "none", "null") else str(v)


def _int_list(v):
    if isinstance(v, (list, tuple)):
        return [int(x) for x in v]
    return [int(x) for x in str(v).split(",") if x.strip()]


def _float_list(v):
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    return [float(x) for x in str(v).split(",") if x.strip()]


# key -> (coercion, default) per subcommand
SCHEMA: dict[str, dict[str, tuple]] = {
    "model": {
        "tx_size": (float, 560.0), "gamma": (float, 0.015), "policy": (str, "aggressive"),
        "total_nodes": (int, 6000), "connections": (float, 41.0),
        "density_file": (_opt_str, None), "samples_file": (_opt_str, None),
        "modified_connections": (int, 50), "max_connections": (int, 1000),
        "share_decimals": (_opt_int, 2), "modified_count": (_opt_float, None),
        "p_victim": (_opt_float, None), "p_attacker": (float, 20.0),
        "external_share": (float, 0.8), "external_price": (float, 90.0),
        "internal_price": (float, 20.0),
    },
    "infer": {
        "message_log": (_opt_str, None), "peer_metadata": (_opt_str, None),
        "allowlist": (_opt_str, None), "threshold": (float, inference.DEFAULT_THRESHOLD),
        "min_messages": (int, inference.DEFAULT_MIN_MESSAGES), "max_connections": (int, 1000),
    },
    "simulate": {
        "mode": (str, "sweep"), "attack_kind": (str, "amplification"),
        "sweep_start": (int, 0), "sweep_stop": (int, 400), "sweep_step": (int, 40),
        "attack_accounts": (int, 0), "total_nodes": (int, 600), "degree": (_opt_int, None),
        "gamma": (float, 0.015), "honest_accounts": (int, 80), "honest_txs_each": (int, 64),
        "attack_txs_each": (int, 32), "pool_capacity": (int, 5120),
        "block_tx_budget": (int, 128), "batch_accounts": (int, 40), "tx_size": (int, 560),
        "trace_monitors": (_int_list, []),
    },
    "detect": {
        "observations": (_opt_str, None), "chain": (_opt_str, None),
        "state": (_opt_str, None), "prices": (_opt_str, None),
        "window_days": (float, 7.0), "chain_end_ms": (_opt_int, None),
        "window_ms": (int, detector.SLOT_MS), "min_count": (int, 100),
        "min_drop_frac": (float, 0.95), "genesis_ms": (int, 0),
    },
    "econ": {
        "taf": (float, 3638.6), "p_attacker": (float, 20.0), "external_share": (float, 0.8),
        "internal_price": (float, 20.0), "pricing_file": (_opt_str, None),
        "traffic_max_tb": (float, 200.0), "traffic_step_tb": (float, 10.0),
        "modified_count": (int, 90), "regular_count": (int, 5910),
        "modified_out_bps": (float, 2.5e9), "regular_in_bps": (float, 12.5e6),
        "latency_points": (_float_list, [0.409, 1.0, 2.0, 2.5]), "ms_saved": (float, 1.0),
        "avg_bid_eth": (float, 0.06), "eth_usd": (float, 2500.0),
    },
}
_ALL_KEYS = {k for keys in SCHEMA.values() for k in keys} | {"seed"}


@dataclass
class RunConfig:
    subcommand: str
    out_dir: str = "out"
    seed: int = 0
    values: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)  # key -> (path, line) it came from

    def __getitem__(self, key):
        return self.values[key]

    def path(self, key: str) -> str:
        """An input file named by ``key``; it must be set and exist."""
        p = self.values.get(key)
        if not p:
            src, line = self.sources.get("__config__", ("<config>", None))
            raise InputError(src, line, f"missing required input {key!r}")
        if not os.path.exists(p):
            src, line = self.sources.get(key, ("<config>", None))
            where = src if line is None else f"{src}:{line}"
            raise InputError(p, None, f"file not found (named by {key!r} in {where})")
        return p


def load_config_file(path) -> tuple[dict, dict]:
    """Flat mapping from a YAML file plus the line each key sits on."""
    if not os.path.exists(path):
        raise InputError(path, None, "file not found")
    with open(path) as fh:
        text = fh.read()
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise InputError(path, mark.line + 1 if mark else None, "invalid YAML") from None
    if data is None:
        return {}, {}
    if not isinstance(data, dict):
        raise InputError(path, 1, "config must be a flat key: value mapping")
    lines = {k.value: k.start_mark.line + 1 for k, _ in node.value}
    for k, v in data.items():
        if isinstance(v, dict):
            raise InputError(path, lines.get(k), f"nested value for {k!r}; config is flat")
    return data, lines


def build_run_config(subcommand: str, config_path: str | None, overrides: Sequence[str],
                     out_dir: str | None, seed: int | None) -> RunConfig:
    raw: dict[str, Any] = {}
    sources: dict[str, tuple] = {}
    if config_path:
        data, lines = load_config_file(config_path)
        for k, v in data.items():
            if k not in _ALL_KEYS:
                raise InputError(config_path, lines.get(k), f"unknown config key {k!r}")
            raw[k] = v
            sources[k] = (config_path, lines.get(k))
        sources["__config__"] = (config_path, None)
    for i, item in enumerate(overrides, start=1):
        if "=" not in item:
            raise InputError("--set", i, f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        k = k.strip()
        if k not in _ALL_KEYS:
            raise InputError("--set", i, f"unknown config key {k!r}")
        raw[k] = yaml.safe_load(v) if v.strip() else None
        sources[k] = ("--set", i)
    values = {}
    for k, (coerce, default) in SCHEMA[subcommand].items():
        if k not in raw:
            values[k] = default
            continue
        try:
            values[k] = coerce(raw[k])
        except (TypeError, ValueError):
            src, line = sources[k]
            raise InputError(src, line, f"bad value for {k!r}: {raw[k]!r}") from None
    if seed is None:
        try:
            seed = int(raw.get("seed", 0))
        except (TypeError, ValueError):
            src, line = sources["seed"]
            raise InputError(src, line, f"bad seed {raw['seed']!r}") from None
    return RunConfig(subcommand, out_dir or "out", seed, values, sources)


# -- report emission ------------------------------------------------------------

def fmt_number(v):
    """Six significant digits for floats; ints and strings pass through."""
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            return None
        return float(f"{v:.6g}")
    return v


def _normalize(obj):
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    return fmt_number(obj)


def _csv_cell(v):
    v = fmt_number(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


def emit_report(results, fmt: str, path: str, fields: Sequence[str] | None = None) -> str:
    """Write ``results`` (a row list for CSV, any JSON-able tree for JSON)."""
    if fmt == "csv":
        rows = [results] if isinstance(results, dict) else list(results)
        fields = list(fields or (rows[0].keys() if rows else []))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(fields)
            for r in rows:
                w.writerow([_csv_cell(r.get(f)) for f in fields])
    elif fmt == "json":
        with open(path, "w") as fh:
            json.dump(_normalize(results), fh, indent=2)
            fh.write("\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


# -- subcommands -------------------------------------------------------------------

def _distribution(rc: RunConfig):
    if rc["density_file"]:
        path = rc.path("density_file")
        rows = []
        for lineno, row in iter_rows(path):
            if row[0] == "x":
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                raise InputError(path, lineno, "expected x, density") from None
        if not rows:
            raise InputError(path, None, "density file is empty")
        grid, dens = map(np.asarray, zip(*rows))
        return model.Smoothed(grid, dens)
    if rc["samples_file"]:
        path = rc.path("samples_file")
        xs = []
        for lineno, row in iter_rows(path):
            try:
                xs.append(float(row[0]))
            except ValueError:
                raise InputError(path, lineno, f"not a number: {row[0]!r}") from None
        return model.distribution_from_samples(xs)
    return model.PointMass(rc["connections"])


def cmd_model(rc: RunConfig) -> dict:
    params = model.AmplificationParams(
        tx_size=rc["tx_size"], gamma=rc["gamma"], policy=model.PropagationPolicy.parse(rc["policy"]),
        total_nodes=rc["total_nodes"], modified_connections=rc["modified_connections"],
        max_connections=rc["max_connections"], share_decimals=rc["share_decimals"])
    g = _distribution(rc)
    p_victim = rc["p_victim"]
    if p_victim is None:
        p_victim = model.blended_victim_price(rc["external_share"], rc["external_price"],
                                              rc["internal_price"])
    report = model.amplification_report(params, g, p_victim, rc["p_attacker"],
                                        rc["modified_count"])
    report["p_victim"] = p_victim
    report["p_attacker"] = rc["p_attacker"]
    emit_report(report, "json", os.path.join(rc.out_dir, "model.json"))
    emit_report([report], "csv", os.path.join(rc.out_dir, "model.csv"))
    return report


ESTIMATE_FIELDS = ("peer_id", "theta_hat", "x_hat", "ci", "epsilon", "included", "reason",
                   "m", "m2", "monitors")


def cmd_infer(rc: RunConfig) -> dict:
    records = inference.read_message_log(rc.path("message_log"))
    names = (inference.latest_names(inference.read_peer_metadata(rc.path("peer_metadata")))
             if rc["peer_metadata"] else {})
    allow = inference.read_allowlist(rc.path("allowlist")) if rc["allowlist"] else set()
    res = inference.infer_connections(records, names, allow, rc["threshold"],
                                      rc["min_messages"], rc["max_connections"])
    rows = [{
        "peer_id": e.peer_id, "theta_hat": e.theta_hat, "x_hat": e.x_hat,
        "ci": e.ci_halfwidth, "epsilon": e.error_epsilon, "included": e.included,
        "reason": res.provenance[e.peer_id], "m": e.m, "m2": e.m2,
        "monitors": ";".join(sorted(e.monitors)),
    } for e in res.estimates]
    emit_report(rows, "csv", os.path.join(rc.out_dir, "peer_estimates.csv"), ESTIMATE_FIELDS)
    density = [{"x": x, "density": d} for x, d in inference.density_table(res.distribution)]
    emit_report(density, "csv", os.path.join(rc.out_dir, "density.csv"), ("x", "density"))
    reasons: dict[str, int] = {}
    for r in res.provenance.values():
        reasons[r] = reasons.get(r, 0) + 1
    xs = [e.x_hat for e in res.estimates if e.included]
    summary = {
        "peers": len(res.estimates),
        "included": len(xs),
        "reasons": dict(sorted(reasons.items())),
        "mean_x_hat": float(np.mean(xs)) if xs else None,
        "median_x_hat": float(np.median(xs)) if xs else None,
        "estimates": rows,
    }
    emit_report(summary, "json", os.path.join(rc.out_dir, "inference.json"))
    return summary


SIM_PEER_NAME = "Geth/v1.13.5-stable-916d6a44/linux-amd64/go1.21.4"


def _sim_config(rc: RunConfig, kind: simnet.AttackKind | None) -> simnet.SimConfig:
    common = dict(honest_accounts=rc["honest_accounts"], honest_txs_each=rc["honest_txs_each"],
                  attack_txs_each=rc["attack_txs_each"], pool_capacity=rc["pool_capacity"],
                  block_tx_budget=rc["block_tx_budget"], batch_accounts=rc["batch_accounts"],
                  trace_monitors=tuple(rc["trace_monitors"]), attack_kind=kind)
    if rc["mode"] == "taf":
        return simnet.network_config(rc["total_nodes"], rc["degree"] or 41, rc["gamma"],
                                     seed=rc.seed, **common)
    return simnet.attack_config(rc["total_nodes"], rc["degree"] or 8, seed=rc.seed, **common)


def cmd_simulate(rc: RunConfig) -> dict:
    mode = rc["mode"]
    if mode not in ("sweep", "run", "taf"):
        src, line = rc.sources.get("mode", ("<config>", None))
        raise InputError(src, line, f"mode must be sweep, run or taf, got {mode!r}")
    try:
        kind = simnet.AttackKind(rc["attack_kind"].lower())
    except ValueError:
        src, line = rc.sources.get("attack_kind", ("<config>", None))
        raise InputError(src, line, f"unknown attack_kind {rc['attack_kind']!r}") from None
    cfg = _sim_config(rc, kind)
    if mode == "taf":
        m = simnet.measure_taf(cfg, rc["tx_size"])
        params = model.AmplificationParams(rc["tx_size"], rc["gamma"],
                                           total_nodes=rc["total_nodes"])
        out = {"taf": m.taf, "model_taf": model.taf(params, model.PointMass(rc["degree"] or 41)),
               "attacker_bytes": m.attacker_bytes, "modified_bytes": m.modified_bytes,
               "regular_bytes_in": m.regular_bytes_in, "modified_reached": m.modified_reached}
        emit_report(out, "json", os.path.join(rc.out_dir, "taf.json"))
        emit_report([out], "csv", os.path.join(rc.out_dir, "taf.csv"))
        return out
    if mode == "sweep":
        if rc["sweep_step"] <= 0 or rc["sweep_stop"] < rc["sweep_start"]:
            raise InputError(*rc.sources.get("sweep_step", ("<config>", None)),
                             "sweep needs sweep_step > 0 and sweep_stop >= sweep_start")
        counts = list(range(rc["sweep_start"], rc["sweep_stop"] + 1, rc["sweep_step"]))
        metrics = simnet.sweep_attack(kind, counts, cfg)
        trace = []
    else:
        m, trace = simnet.simulate_with_trace(
            simnet.replace(cfg, attack_accounts=rc["attack_accounts"]))
        metrics = [m]
    rows = [m.row() for m in metrics]
    emit_report(rows, "csv", os.path.join(rc.out_dir, "simulation.csv"),
                simnet.SimMetrics.CSV_FIELDS)
    summary = {"mode": mode, "attack_kind": kind.value, "seed": rc.seed,
               "nodes": len(cfg.nodes), "points": rows}
    emit_report(summary, "json", os.path.join(rc.out_dir, "simulation.json"))
    if rc["trace_monitors"] and mode == "run":
        _write_trace(rc.out_dir, trace, cfg)
    return summary


def _write_trace(out_dir: str, trace, cfg: simnet.SimConfig):
    """Message log, peer names and allowlist ready for ``blockamp infer``."""
    from .records import write_rows
    write_rows(os.path.join(out_dir, "messages.csv"),
               ("timestamp_ms", "monitor_id", "peer_id", "msg_type", "tx_hash", "tx_size"),
               ((t, f"n{mon}", f"n{peer}", code, h, size) for t, mon, peer, code, h, size in trace))
    peers = sorted({peer for _, _, peer, _, _, _ in trace})
    specs = {n.node_id: n for n in cfg.nodes}
    rows = []
    for p in peers:
        name = SIM_PEER_NAME if specs[p].propagation.kind is model.PolicyKind.SQRT \
            else "Geth/v1.13.5-stable-00000000/linux-amd64/go1.21.4"
        rows.append((f"n{p}", name, "add", 0))
    write_rows(os.path.join(out_dir, "peers.csv"),
               ("peer_id", "node_name", "event", "timestamp_ms"), rows)
    with open(os.path.join(out_dir, "allowlist.txt"), "w") as fh:
        fh.write("916d6a44\n")


def cmd_detect(rc: RunConfig) -> dict:
    obs = detector.read_observations(rc.path("observations"))
    chain = detector.read_chain(rc.path("chain"))
    oracle = (detector.FileStateOracle.from_file(rc.path("state")) if rc["state"]
              else detector.FileStateOracle())
    prices = detector.read_prices(rc.path("prices")) if rc["prices"] else None
    try:
        labels = detector.label_dropped(obs, chain, rc["window_days"], rc["chain_end_ms"])
    except detector.CoverageError as exc:
        raise InputError(rc["chain"], None, str(exc)) from None
    instances = detector.detect_spam_instances(obs, labels, rc["window_ms"], rc["min_count"],
                                               rc["min_drop_frac"])
    clock = detector.BlockClock(rc["genesis_ms"])
    for inst in instances:
        inst.classification = detector.classify_instance(inst, oracle, clock)
        if prices is not None:
            try:
                inst.stats = detector.instance_stats(inst, chain, prices, obs)
            except detector.CoverageError as exc:
                raise InputError(rc["prices"], None, str(exc)) from None
    detector.write_instances_json(os.path.join(rc.out_dir, "instances.json"), instances)
    summary_rows = detector.summarize(instances)
    emit_report(summary_rows, "csv", os.path.join(rc.out_dir, "summary.csv"),
                detector.SUMMARY_FIELDS)
    dropped = sum(labels.values())
    out = {"transactions": len(labels), "dropped": dropped, "instances": len(instances),
           "classes": summary_rows}
    emit_report(out, "json", os.path.join(rc.out_dir, "detect.json"))
    return out


def cmd_econ(rc: RunConfig) -> dict:
    schedule = None
    if rc["pricing_file"]:
        path = rc.path("pricing_file")
        rows = [r for _, r in iter_rows(path) if r[0] != "upper_tb"]
        try:
            schedule = econ.PricingSchedule.from_rows(rows)
        except (ValueError, IndexError) as exc:
            raise InputError(path, None, f"bad pricing schedule: {exc}") from None
    step = rc["traffic_step_tb"]
    if step <= 0:
        raise InputError(*rc.sources.get("traffic_step_tb", ("<config>", None)),
                         "traffic_step_tb must be positive")
    n = int(math.floor(rc["traffic_max_tb"] / step + 1e-9))
    grid = [i * step for i in range(n + 1)]
    curve = econ.eaf_curve(rc["taf"], grid, schedule, rc["p_attacker"], rc["external_share"],
                           rc["internal_price"])
    curve_rows = [{"traffic_tb": t, "eaf": e} for t, e in curve]
    emit_report(curve_rows, "csv", os.path.join(rc.out_dir, "eaf_curve.csv"),
                ("traffic_tb", "eaf"))
    sat = econ.saturation_cost(rc["modified_count"], rc["regular_count"],
                               rc["modified_out_bps"], rc["regular_in_bps"], schedule,
                               rc["external_share"])
    lvm = econ.LatencyValueModel(avg_bid_eth=rc["avg_bid_eth"], eth_usd=rc["eth_usd"])
    lat_rows = [vars(econ.latency_profit(lvm, x)) for x in rc["latency_points"]]
    emit_report(lat_rows, "csv", os.path.join(rc.out_dir, "latency.csv"),
                ("x", "pct_per_ms", "eth_per_ms", "usd_per_ms"))
    out = {
        "saturation": vars(sat),
        "eaf_first_tier": curve[0][1] if curve else None,
        "peak_time_s": lvm.peak_time(),
        "monthly_benefit_usd": econ.monthly_benefit(lvm, rc["ms_saved"]),
        "latency": lat_rows,
    }
    emit_report(out, "json", os.path.join(rc.out_dir, "econ.json"))
    return out


COMMANDS = {"model": cmd_model, "infer": cmd_infer, "simulate": cmd_simulate,
            "detect": cmd_detect, "econ": cmd_econ}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", default=argparse.SUPPRESS, help="flat YAML key/value file")
    p.add_argument("--out", default=argparse.SUPPRESS, help="report directory (default: out)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--set", dest="overrides", action="append", default=argparse.SUPPRESS,
                   metavar="KEY=VALUE", help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockamp", description=__doc__.splitlines()[0])
    _add_common(parser)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "model": "closed-form waste, TAF and EAF",
        "infer": "peer-count estimates from a message log",
        "simulate": "gossip/txpool attack sweeps or TAF measurement",
        "detect": "spam-instance detection in observation logs",
        "econ": "egress cost, EAF curve and latency value",
    }
    for name in SUBCOMMANDS:
        _add_common(sub.add_parser(name, help=helps[name]))
    return parser


def run(rc: RunConfig) -> int:
    try:
        os.makedirs(rc.out_dir, exist_ok=True)
        if not os.access(rc.out_dir, os.W_OK):
            raise InputError(rc.out_dir, None, "output directory is not writable")
        COMMANDS[rc.subcommand](rc)
    except InputError as exc:
        print(f"blockamp: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"blockamp: error: {exc.filename or rc.out_dir}: {exc.strerror}", file=sys.stderr)
        return EXIT_INPUT
    except (InvariantError, AssertionError) as exc:
        print(f"blockamp: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (model.ParameterError, simnet.ConfigError, ValueError, ZeroDivisionError) as exc:
        src = rc.sources.get("__config__", ("<config>", None))[0]
        print(f"blockamp: error: {src}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = build_run_config(args.command, getattr(args, "config", None),
                              getattr(args, "overrides", []) or [],
                              getattr(args, "out", None), getattr(args, "seed", None))
    except InputError as exc:
        print(f"blockamp: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return run(rc)


if __name__ == "__main__":
    sys.exit(main())
