"""Command-line entry point: config parsing, subcommand dispatch, dataset
generation/ingestion, experiment execution, and report emission.

Config files are flat `key = value` lines with `#` comments; flags override
file values, which override defaults.  The resolved config is echoed next to
the outputs so a run can be reproduced from the echo alone.
"""

import argparse
import os
import sys
from dataclasses import fields

import numpy as np

from . import domains, theory
from .diff import load_params_csv, save_params_csv
from .errors import ConfigError, MissingFile, TypeMismatch, UnknownKey
from .pipelines import (
    RegretReport,
    TrainConfig,
    evaluate,
    get_adapter,
    make_reparam,
    run_experiment,
    run_single,
    subseed,
    train_decision_focused,
    train_surrogate,
    train_two_stage,
    write_aggregate_csv,
    write_report_csv,
)
from .surrogate import export_reparam_csv

# extra keys beyond TrainConfig: single-run seed and checkpoint location
EXTRA_DEFAULTS = {"train_seed": 0, "checkpoint": ""}


def _field_types():
    types = {}
    for f in fields(TrainConfig):
        types[f.name] = f.type if isinstance(f.type, type) else type(getattr(TrainConfig(), f.name))
    for k, v in EXTRA_DEFAULTS.items():
        types[k] = type(v)
    return types


def _parse_value(key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is int:
            if "." in raw:
                raise ValueError(raw)
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            return tuple(tok.strip() for tok in raw.split(",") if tok.strip())
        return raw
    except ValueError as exc:
        raise TypeMismatch(f"key '{key}' expects {kind.__name__}, got {raw!r}") from exc


def parse_config(path=None, overrides=()):
    """Resolve a config dict: defaults <- file <- environment <- overrides.

    overrides are 'key=value' strings from --set flags.  Unknown keys raise
    UnknownKey, bad values TypeMismatch, a missing file MissingFile.
    """
    types = _field_types()
    resolved = {f.name: getattr(TrainConfig(), f.name) for f in fields(TrainConfig)}
    resolved.update(EXTRA_DEFAULTS)
    if path is not None:
        if not os.path.exists(path):
            raise MissingFile(f"config file not found: {path}")
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise TypeMismatch(f"{path}:{lineno}: expected 'key = value'")
                key, raw = (part.strip() for part in line.split("=", 1))
                if key not in types:
                    raise UnknownKey(f"{path}:{lineno}: unknown key '{key}'")
                resolved[key] = _parse_value(key, raw, types[key])
    env_out = os.environ.get("SURROGATE_DFL_OUT")
    if env_out:
        resolved["out_dir"] = env_out
    for item in overrides:
        if "=" not in item:
            raise TypeMismatch(f"--set expects key=value, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in types:
            raise UnknownKey(f"unknown key '{key}'")
        resolved[key] = _parse_value(key, raw, types[key])
    return resolved


def config_from_dict(resolved) -> TrainConfig:
    kwargs = {f.name: resolved[f.name] for f in fields(TrainConfig)}
    return TrainConfig(**kwargs)


def echo_config(resolved, path) -> None:
    with open(path, "w") as fh:
        for key in sorted(resolved):
            value = resolved[key]
            if isinstance(value, tuple):
                value = ",".join(value)
            fh.write(f"{key} = {value}\n")


class RunLog:
    def __init__(self, path):
        self.path = path
        self.fh = open(path, "w")

    def line(self, msg):
        self.fh.write(msg + "\n")
        self.fh.flush()
        print(msg)

    def close(self):
        self.fh.close()


def _prepare_out(resolved):
    out = resolved["out_dir"]
    os.makedirs(out, exist_ok=True)
    echo_config(resolved, os.path.join(out, "config_echo.txt"))
    return out, RunLog(os.path.join(out, "run.log"))


def cmd_gen_data(resolved) -> int:
    out, log = _prepare_out(resolved)
    config = config_from_dict(resolved)
    adapter = get_adapter(config)
    dataset = adapter.generate(subseed(resolved["train_seed"], 0))
    if config.domain == "portfolio":
        path = os.path.join(out, "portfolio_prices.csv")
        domains.export_portfolio_csv(dataset, path)
    else:
        path = os.path.join(out, "movierec_ratings.csv")
        domains.export_movierec_csv(dataset, path)
    log.line(f"wrote {path} ({len(dataset.instances)} instances)")
    log.close()
    return 0


def _load_dataset(config: TrainConfig, resolved):
    adapter = get_adapter(config)
    if config.data_in:
        if not os.path.exists(config.data_in):
            raise MissingFile(f"data_in not found: {config.data_in}")
        if config.domain == "portfolio":
            return adapter, domains.ingest_portfolio_csv(
                config.data_in, risk_aversion=config.risk_aversion
            )
        return adapter, domains.ingest_movierec_csv(
            config.data_in,
            config.n_movies,
            config.users_per_group,
            budget_k=config.budget_k,
            picks_per_user=config.picks_per_user,
        )
    return adapter, adapter.generate(subseed(resolved["train_seed"], 0))


def cmd_train(resolved) -> int:
    out, log = _prepare_out(resolved)
    config = config_from_dict(resolved)
    method = config.methods[0]
    seed = resolved["train_seed"]
    adapter, dataset = _load_dataset(config, resolved)
    models = adapter.init_models(subseed(seed, 1))
    rep = None
    log.line(f"training method={method} domain={config.domain} seed={seed}")
    if method == "two-stage":
        result = train_two_stage(models, dataset, config, adapter)
    elif method == "decision-focused":
        result = train_decision_focused(models, dataset, config, adapter)
    elif method == "surrogate":
        rep = make_reparam(config, adapter, subseed(seed, 2))
        result = train_surrogate(models, rep, dataset, config, adapter)
        if config.export_p:
            export_reparam_csv(rep, os.path.join(out, "reparam_final.csv"))
    else:
        log.line(f"unknown method {method}")
        log.close()
        return 2
    named = {}
    for i, arr in enumerate(adapter.params(result.models)):
        named[f"param_{i}"] = arr
    if rep is not None:
        named["rep_raw"] = rep.P_raw
    ckpt = resolved["checkpoint"] or os.path.join(out, "checkpoint.csv")
    save_params_csv(named, ckpt)
    log.line(
        f"trained {result.epochs_run} epochs "
        f"({result.train_sec_per_epoch:.4f} s/epoch); checkpoint -> {ckpt}"
    )
    log.close()
    return 0


def cmd_eval(resolved) -> int:
    out, log = _prepare_out(resolved)
    config = config_from_dict(resolved)
    method = config.methods[0]
    seed = resolved["train_seed"]
    ckpt = resolved["checkpoint"] or os.path.join(out, "checkpoint.csv")
    if not os.path.exists(ckpt):
        raise MissingFile(f"checkpoint not found: {ckpt}")
    adapter, dataset = _load_dataset(config, resolved)
    models = adapter.init_models(subseed(seed, 1))
    named = load_params_csv(ckpt)
    n_params = len(adapter.params(models))
    adapter.set_params(models, [named[f"param_{i}"] for i in range(n_params)])
    rep = None
    if method == "surrogate":
        rep = make_reparam(config, adapter, subseed(seed, 2))
        rep.P_raw = named["rep_raw"]
    result = evaluate(models, rep, dataset, config, adapter)
    path = os.path.join(out, "eval.csv")
    with open(path, "w") as fh:
        fh.write("instance,regret\n")
        for i, r in enumerate(result.regrets):
            fh.write(f"{i},{format(float(r), '.12g')}\n")
    log.line(
        f"evaluated {len(result.regrets)} instances: mean regret "
        f"{float(np.mean(result.regrets)):.6g}, inference {result.inference_sec:.4f} s, "
        f"max constraint violation {result.max_violation:.2e}"
    )
    log.line(f"wrote {path}")
    log.close()
    return 0


def cmd_run(resolved) -> int:
    out, log = _prepare_out(resolved)
    config = config_from_dict(resolved)
    log.line(
        f"running domain={config.domain} methods={','.join(config.methods)} "
        f"seeds={config.n_seeds}"
    )
    report = run_experiment(config)
    write_report_csv(report, os.path.join(out, "report.csv"))
    write_aggregate_csv(report, os.path.join(out, "aggregate.csv"))
    failures = [r for r in report.rows if r.status != "ok"]
    for method, agg in sorted(report.aggregates.items()):
        log.line(
            f"{method}: mean regret {agg['mean_regret']:.6g} "
            f"(+- {agg['stderr_regret']:.2g}), train {agg['mean_train_sec']:.4f} s/epoch, "
            f"inference {agg['mean_inference_sec']:.4f} s"
        )
    log.line(f"wrote {os.path.join(out, 'report.csv')} and aggregate.csv")
    if failures:
        for r in failures:
            log.line(f"FAILED {r.method} seed {r.seed}: {r.status}")
        log.close()
        return 1
    log.close()
    return 0


def cmd_theory_check(resolved) -> int:
    out, log = _prepare_out(resolved)
    rows = theory.run_theory_checks()
    theory.write_theory_csv(rows, os.path.join(out, "theory_report.csv"))
    all_pass = True
    for r in rows:
        status = "PASS" if r["passed"] else "FAIL"
        all_pass &= r["passed"]
        log.line(f"{status}  {r['check']} (expected {r['expected']})")
    log.line(f"wrote {os.path.join(out, 'theory_report.csv')}")
    log.close()
    return 0 if all_pass else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="surrogate-dfl",
        description="Decision-focused learning with a learnable linear surrogate layer",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, help_text in [
        ("gen-data", "generate a synthetic dataset and write its CSV"),
        ("train", "train one method on one seed and write a checkpoint"),
        ("run", "full multi-seed experiment with report CSVs"),
        ("eval", "load a checkpoint and evaluate the test split"),
        ("theory-check", "run the theory verification suite"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="flat key = value config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--domain", default=None, choices=["portfolio", "movierec"])
        if name in ("train", "eval"):
            p.add_argument("--method", default=None,
                           choices=["two-stage", "decision-focused", "surrogate"])
            p.add_argument("--seed", type=int, default=None)
            p.add_argument("--checkpoint", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = list(args.set)
    if args.domain:
        overrides.append(f"domain={args.domain}")
    if args.out:
        overrides.append(f"out_dir={args.out}")
    if getattr(args, "method", None):
        overrides.append(f"methods={args.method}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train_seed={args.seed}")
    if getattr(args, "checkpoint", None):
        overrides.append(f"checkpoint={args.checkpoint}")
    try:
        resolved = parse_config(args.config, overrides)
        handler = {
            "gen-data": cmd_gen_data,
            "train": cmd_train,
            "run": cmd_run,
            "eval": cmd_eval,
            "theory-check": cmd_theory_check,
        }[args.subcommand]
        return handler(resolved)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
