"""Command-line surface: reproducible runs driven by a YAML config.

Commands compose in the order init-base -> gen-data -> train-all -> merge ->
eval. Every command prints a machine-readable JSON result on stdout and
exits non-zero on failure (2 config, 3 data, 4 numeric invariant).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .bench import compose_for_query, run_benchmark
from .checkpoint import file_digest, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, NumericError, ScenemodError
from .pipeline import (
    bootstrap_halves,
    generate_dataset,
    load_sequences,
    make_training_items,
    scenario_queries,
    sequence_dirs,
)
from .report import render_figures, write_loss_figure, write_table
from .routing import AdapterModule, ModuleInventory, soft_route
from .toynet import (
    ToyNetwork,
    bootstrap_train,
    fresh_inventory,
    gradcheck_suite,
    jsonl_logger,
    train_all_modules,
    train_module,
)


def _parse_query(config: RunConfig, pairs: list[str]) -> dict[str, str]:
    query = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects attribute=value, got {pair!r}")
        key, value = pair.split("=", 1)
        query[key.strip()] = value.strip()
    config.schema.validate_query(query)
    return query


def _module_path(config: RunConfig, attribute: str, value: str) -> Path:
    return config.paths.inventory_dir / f"{attribute}.{value}.ckpt"


def _load_inventory(config: RunConfig) -> ModuleInventory:
    inventory = ModuleInventory(config.schema)
    for attribute, value in config.schema.module_keys():
        path = _module_path(config, attribute, value)
        if not path.is_file():
            raise DataError(f"missing module checkpoint {path}; run train-all first")
        inventory.add(AdapterModule.from_store(load_checkpoint(path)))
    inventory.validate_complete()
    return inventory


def _load_base(config: RunConfig) -> ToyNetwork:
    path = config.paths.base_checkpoint
    if not path.is_file():
        raise DataError(f"missing base checkpoint {path}; run init-base first")
    return ToyNetwork(config.net, load_checkpoint(path))


def _training_dataset(config: RunConfig):
    dirs = sequence_dirs(config, "train")
    return make_training_items(load_sequences(dirs), config.net.grid_spec())


def cmd_gen_data(args) -> dict:
    config = load_config(args.config)
    summary = generate_dataset(config)
    summary["data_dir"] = str(config.paths.data_dir)
    return summary


def cmd_init_base(args) -> dict:
    config = load_config(args.config)
    boot_dirs, rest_dirs = bootstrap_halves(config)
    items = make_training_items(load_sequences(boot_dirs), config.net.grid_spec())
    params, losses = bootstrap_train(config.net, items, config.training)
    save_checkpoint(params, config.paths.base_checkpoint)

    out_dir = config.paths.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    boot_manifest = {
        "bootstrap_sequences": [str(p) for p in boot_dirs],
        "held_for_modules": [str(p) for p in rest_dirs],
        "seed": config.seed,
        "iterations": config.training.base_iterations,
    }
    (out_dir / "bootstrap_split.json").write_text(
        json.dumps(boot_manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    loss_fig = write_loss_figure(losses, out_dir / "bootstrap_loss.png")
    return {
        "base_checkpoint": str(config.paths.base_checkpoint),
        "digest": file_digest(config.paths.base_checkpoint),
        "final_loss": losses[-1] if losses else None,
        "bootstrap_frames": len(items),
        "loss_figure": str(loss_fig),
    }


def cmd_train_module(args) -> dict:
    config = load_config(args.config)
    net = _load_base(config)
    dataset = _training_dataset(config)
    if args.value not in config.schema.values(args.attribute):
        raise ConfigError(
            f"invalid value {args.value!r} for attribute {args.attribute!r}"
        )
    inventory = fresh_inventory(config.schema, config.net, config.training)
    per_module = max(1, config.training.iterations // len(config.schema.module_keys()))
    log_path = config.paths.output_dir / f"train_{args.attribute}.{args.value}.jsonl"
    log_path.unlink(missing_ok=True)
    module = train_module(
        net,
        inventory,
        args.attribute,
        args.value,
        dataset,
        config.training,
        iterations=per_module,
        log=jsonl_logger(log_path),
    )
    path = _module_path(config, args.attribute, args.value)
    save_checkpoint(module.to_store(), path)
    return {
        "module": f"{args.attribute}.{args.value}",
        "checkpoint": str(path),
        "digest": file_digest(path),
        "iterations": per_module,
        "log": str(log_path),
    }


def cmd_train_all(args) -> dict:
    config = load_config(args.config)
    net = _load_base(config)
    dataset = _training_dataset(config)
    inventory = fresh_inventory(config.schema, config.net, config.training)
    log_path = config.paths.output_dir / "train_all.jsonl"
    log_path.unlink(missing_ok=True)
    counts = train_all_modules(
        net, inventory, dataset, config.training, log=jsonl_logger(log_path)
    )
    digests = {}
    for module in inventory.modules():
        path = _module_path(config, module.attribute, module.value)
        save_checkpoint(module.to_store(), path)
        digests[f"{module.attribute}.{module.value}"] = file_digest(path)
    return {
        "inventory_dir": str(config.paths.inventory_dir),
        "backward_counts": {f"{a}.{v}": n for (a, v), n in counts.items()},
        "modules": digests,
        "log": str(log_path),
    }


def cmd_route(args) -> dict:
    config = load_config(args.config)
    query = _parse_query(config, args.set)
    rho = config.rho if args.rho is None else args.rho
    weights = soft_route(config.schema, query, rho)
    return {"rho": rho, "query": query, "weights": weights}


def cmd_merge(args) -> dict:
    config = load_config(args.config)
    query = _parse_query(config, args.set)
    strategy = args.strategy or config.strategy
    rho = config.rho if args.rho is None else args.rho
    net = _load_base(config)
    inventory = _load_inventory(config)
    theta_c, plan = compose_for_query(
        inventory, net.params, query, selection=args.selection, strategy=strategy, rho=rho
    )
    out_path = config.paths.output_dir / "merged.ckpt"
    save_checkpoint(theta_c, out_path)

    module_digests = {
        f"{a}.{v}": file_digest(_module_path(config, a, v))
        for a, v in config.schema.module_keys()
    }
    manifest = {
        "strategy": plan.strategy,
        "rho": rho,
        "selection": args.selection,
        "query": query,
        "lambdas": plan.lambdas,
        "routing": plan.routing,
        "inputs": {
            "base": file_digest(config.paths.base_checkpoint),
            "modules": module_digests,
        },
        "output": str(out_path),
        "output_digest": file_digest(out_path),
    }
    manifest_path = config.paths.output_dir / "merged.manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return manifest


def _load_scenarios(config: RunConfig, args) -> list[dict[str, str]]:
    if args.scenarios:
        path = Path(args.scenarios)
        if not path.is_file():
            raise DataError(f"scenario file not found: {path}")
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        if not isinstance(raw, list):
            raise ConfigError(f"{path}: expected a YAML list of attribute mappings")
        scenarios = []
        for entry in raw:
            if not isinstance(entry, dict):
                raise ConfigError(f"{path}: scenario entries must be mappings")
            query = {str(k): str(v) for k, v in entry.items()}
            config.schema.validate_query(query)
            scenarios.append(query)
        return scenarios
    return scenario_queries(config, args.preset, args.count)


def cmd_eval(args) -> dict:
    config = load_config(args.config)
    scenarios = _load_scenarios(config, args)
    net = _load_base(config)
    strategy = args.strategy or config.strategy
    rho = config.rho if args.rho is None else args.rho

    checkpoint = None
    inventory = None
    if args.checkpoint:
        ckpt_path = Path(args.checkpoint)
        if not ckpt_path.is_file():
            raise DataError(f"checkpoint not found: {ckpt_path}")
        checkpoint = load_checkpoint(ckpt_path)
    else:
        inventory = _load_inventory(config)

    rows = run_benchmark(
        inventory if inventory is not None else ModuleInventory(config.schema),
        net.params,
        scenarios,
        strategy=strategy,
        rho=rho,
        seed=config.seed,
        selection=args.selection,
        length=config.data.length,
        spec=config.net,
        checkpoint=checkpoint,
    )
    eval_dir = config.paths.output_dir / "eval"
    table = write_table(rows, eval_dir / "metrics.csv")
    figures = render_figures(rows, eval_dir / "figures")
    motas = [r.metrics.mota for r in rows]
    idf1s = [r.metrics.idf1 for r in rows]
    return {
        "scenarios": len(rows),
        "mean_mota": float(np.mean(motas)),
        "mean_idf1": float(np.mean(idf1s)),
        "table": str(table),
        "figures": [str(p) for p in figures],
    }


def cmd_gradcheck(args) -> dict:
    config = load_config(args.config)
    worst, errors = gradcheck_suite(cases=args.cases, h=args.step, seed=config.seed)
    result = {
        "cases": args.cases,
        "step": args.step,
        "max_rel_error": worst,
        "tolerance": args.tolerance,
    }
    if worst > args.tolerance:
        raise NumericError(
            f"gradient check failed: max relative error {worst:.3e} "
            f"> {args.tolerance:.1e}"
        )
    return result


def cmd_inspect(args) -> dict:
    path = Path(args.checkpoint)
    store = load_checkpoint(path)
    entries = [
        {
            "name": name,
            "shape": list(value.shape),
            "digest": hashlib.sha256(value.astype("<f8").tobytes()).hexdigest(),
        }
        for name, value in store.items()
    ]
    return {"file": str(path), "file_digest": file_digest(path), "entries": entries}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenemod",
        description="Train, route, merge, and evaluate attribute-expert adapter modules.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="YAML run configuration")
        return p

    with_config(sub.add_parser("gen-data", help="generate tagged synthetic sequences")).set_defaults(
        func=cmd_gen_data
    )
    with_config(sub.add_parser("init-base", help="bootstrap-train the base network")).set_defaults(
        func=cmd_init_base
    )

    p = with_config(sub.add_parser("train-module", help="train one expert module"))
    p.add_argument("--attribute", required=True)
    p.add_argument("--value", required=True)
    p.set_defaults(func=cmd_train_module)

    with_config(sub.add_parser("train-all", help="train every module, balanced")).set_defaults(
        func=cmd_train_all
    )

    p = with_config(sub.add_parser("route", help="print routing weights for a query"))
    p.add_argument("--set", action="append", default=[], metavar="ATTR=VALUE")
    p.add_argument("--rho", type=float, default=None)
    p.set_defaults(func=cmd_route)

    p = with_config(sub.add_parser("merge", help="compose and save merged parameters"))
    p.add_argument("--set", action="append", default=[], metavar="ATTR=VALUE")
    p.add_argument("--strategy", choices=["mean", "weighted", "sum"], default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--selection", choices=["expert", "all", "opposite"], default="expert")
    p.set_defaults(func=cmd_merge)

    p = with_config(sub.add_parser("eval", help="evaluate on scenario sets"))
    p.add_argument("--checkpoint", default=None, help="fixed merged checkpoint to evaluate")
    p.add_argument("--scenarios", default=None, help="YAML list of attribute queries")
    p.add_argument("--preset", choices=["train", "holdout"], default="train")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--selection", choices=["expert", "all", "opposite"], default="expert")
    p.add_argument("--strategy", choices=["mean", "weighted", "sum"], default=None)
    p.add_argument("--rho", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = with_config(sub.add_parser("gradcheck", help="finite-difference gradient audit"))
    p.add_argument("--cases", type=int, default=50)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="list checkpoint names/shapes/digests")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except ScenemodError as exc:
        print(
            json.dumps({"error": str(exc), "kind": type(exc).__name__}),
            file=sys.stderr,
        )
        return exc.exit_code
    print(json.dumps(result, sort_keys=True))
    return 0


def entry() -> None:
    sys.exit(main())
