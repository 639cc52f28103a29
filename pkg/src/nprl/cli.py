"""Command-line entry point: ``nprl <command> [options]``.

Each command builds an effective configuration from built-in defaults, an
optional ``--config`` JSON file, and explicit flags (highest precedence),
writes it to ``effective-config.json`` in its output directory, and can be
re-run from that file alone.

Exit codes: 0 success, 1 runtime numeric failure or failed verification,
2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, NprlError, NumericError

log = logging.getLogger("nprl")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


# ---------------------------------------------------------------------------- configuration


def _dqn_defaults() -> dict:
    from .dqn import DqnConfig

    d = DqnConfig().to_dict()
    d.pop("seed", None)  # the global seed governs
    return d


def _sup_defaults() -> dict:
    from .supervised import SupConfig

    d = SupConfig().to_dict()
    d.pop("seed", None)
    return d


def defaults_for(command: str) -> dict:
    if command == "train-dqn":
        return {"task": "simpler-basic", "seed": 0, "out": None, "dqn": _dqn_defaults()}
    if command == "train-sup":
        return {
            "seed": 0,
            "out": None,
            "resolution": 64,
            "resume": None,
            "data": {"kind": "mix", "path": None, "objects": 10, "textures": 10, "per_class": 20,
                     "test_fraction": 0.2},
            "supervised": _sup_defaults(),
        }
    if command == "synth":
        return {
            "kind": "assembly",
            "seed": 0,
            "out": None,
            "resolution": 64,
            "mix": {"objects": 10, "textures": 10, "per_class": 100, "test_fraction": 0.2},
            "assembly": {"layer": "conv2", "neurons": 102, "sigma": 0.5, "stimuli": 500, "area": "V1",
                         "model": None, "model_seed": 0, "n_axes": 5, "fan_in": 3, "stimulus_kinds": "objects"},
        }
    if command == "score":
        return {
            "model": None,
            "untrained_seed": None,
            "resolution": 64,
            "assemblies": [],
            "out": None,
            "chart": True,
            "workers": None,
            "eval": {"k": 25, "lam": 0.01, "splits": 10, "seed": 0, "layers": ["conv1", "conv2", "conv3", "conv4", "fc"]},
        }
    if command == "rollout":
        return {"task": "simpler-basic", "policy": "random", "model": None, "episodes": 10, "seed": 0,
                "resolution": 64, "epsilon": 0.0, "action_repeat": 4, "record": None, "out": None}
    if command == "verify":
        return {"long": False, "oracles": None, "out": None}
    if command == "convert-cifar":
        return {"src": None, "out": None, "limit": None}
    if command == "convert-assembly":
        return {"responses": None, "stimuli": None, "area": "V1", "provenance": "user-supplied", "out": None}
    raise ConfigError(f"unknown command {command!r}")


def _merge_strict(base: dict, update: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in update.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown configuration key {path!r}; valid keys here: {sorted(base)}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"configuration key {path!r} must be an object")
            out[key] = _merge_strict(base[key], val, path + ".")
        else:
            out[key] = val
    return out


def build_config(command: str, config_path, flags: dict) -> dict:
    """defaults <- config file <- flags (dotted keys address nested sections)."""
    cfg = defaults_for(command)
    if config_path is not None:
        try:
            doc = json.loads(Path(config_path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
        doc.pop("command", None)
        cfg = _merge_strict(cfg, doc)
    for dotted, val in flags.items():
        if val is None:
            continue
        node, *rest = dotted.split(".")
        update = {node: val} if not rest else {node: {rest[0]: val}}
        cfg = _merge_strict(cfg, update)
    return cfg


def write_effective_config(command: str, cfg: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, **cfg}
    (out / "effective-config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _require_out(cfg: dict) -> Path:
    if not cfg.get("out"):
        raise ConfigError("an output directory is required (--out or 'out' in the config file)")
    return Path(cfg["out"])


# ---------------------------------------------------------------------------- commands


def cmd_train_dqn(cfg: dict) -> int:
    from .dqn import DqnConfig, train_dqn
    from .env import load_task

    out = _require_out(cfg)
    task = load_task(cfg["task"])
    try:
        dq = DqnConfig(**{**cfg["dqn"], "seed": cfg["seed"]})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    write_effective_config("train-dqn", cfg, out)
    result = train_dqn(task, dq, out_dir=out, progress=lambda row: log.info("episode %(episode)d step %(step)d "
                                                                             "return %(return).2f", row))
    _metrics_chart(result.metrics, out)
    print(f"{task.task_id}: {len(result.metrics)} episodes, {result.updates} updates -> {out / 'model.nprl'}")
    return EXIT_OK


def _metrics_chart(rows, out: Path) -> None:
    from .charts import line_chart_svg

    if not rows:
        return
    (out / "returns.svg").write_text(line_chart_svg([r["step"] for r in rows], {"return": [r["return"] for r in rows]},
                                                    title="Episode return", xlabel="tick", ylabel="return"))


def _load_sup_dataset(cfg: dict):
    from .datasets import load_image_dataset, make_gratings, make_synthetic_mix

    data = cfg["data"]
    kind = data["kind"]
    if kind == "manifest":
        if not data["path"]:
            raise ConfigError("data.kind 'manifest' needs data.path (--dataset)")
        return load_image_dataset(data["path"], cfg["resolution"])
    if kind == "mix":
        return make_synthetic_mix(data["objects"], data["textures"], data["per_class"], cfg["resolution"],
                                  cfg["seed"], data["test_fraction"])
    if kind == "gratings":
        return make_gratings(data["per_class"], cfg["resolution"], cfg["seed"], data["test_fraction"])
    raise ConfigError(f"data.kind must be manifest, mix or gratings, got {kind!r}")


def cmd_train_sup(cfg: dict) -> int:
    from .charts import line_chart_svg
    from .model import TrunkConfig
    from .supervised import SupConfig, train_classifier

    out = _require_out(cfg)
    try:
        sc = SupConfig(**{**cfg["supervised"], "seed": cfg["seed"]})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    dataset = _load_sup_dataset(cfg)
    write_effective_config("train-sup", cfg, out)
    result = train_classifier(dataset, sc, out_dir=out, resume=cfg["resume"],
                              trunk=TrunkConfig(resolution=cfg["resolution"]))
    if result.curves:
        epochs = [r["epoch"] for r in result.curves]
        (out / "accuracy.svg").write_text(line_chart_svg(
            epochs, {"train": [r["train_acc"] for r in result.curves], "test": [r["test_acc"] for r in result.curves]},
            title="Accuracy", xlabel="epoch", ylabel="accuracy"))
        last = result.curves[-1]
        print(f"epoch {last['epoch']}: train {last['train_acc']:.3f} test {last['test_acc']:.3f} "
              f"(best epoch {result.best_epoch})")
    return EXIT_OK


def _reference_model(a: dict, resolution: int):
    from .checkpoint import load_checkpoint
    from .model import Head, TrunkConfig, build_model

    if a["model"]:
        return load_checkpoint(a["model"])
    return build_model(TrunkConfig(resolution=resolution), Head.classifier(20), seed=a["model_seed"])


def cmd_synth(cfg: dict) -> int:
    from .datasets import make_synthetic_mix
    from .predictivity import generate_synthetic_assembly, make_stimuli, write_synthetic_assembly

    out = _require_out(cfg)
    if cfg["kind"] == "mix":
        m = cfg["mix"]
        ds = make_synthetic_mix(m["objects"], m["textures"], m["per_class"], cfg["resolution"], cfg["seed"],
                                m["test_fraction"])
        ds.save(out)
        write_effective_config("synth", cfg, out)
        print(f"{len(ds)} images in {ds.n_classes} classes -> {out}")
        return EXIT_OK
    if cfg["kind"] != "assembly":
        raise ConfigError(f"synth kind must be 'mix' or 'assembly', got {cfg['kind']!r}")
    a = cfg["assembly"]
    model = _reference_model(a, cfg["resolution"])
    stimuli = make_stimuli(a["stimuli"], model.trunk.resolution, cfg["seed"], a["stimulus_kinds"])
    assembly, truth, readout = generate_synthetic_assembly(model, a["layer"], a["neurons"], a["sigma"], stimuli,
                                                           seed=cfg["seed"], area=a["area"], n_axes=a["n_axes"],
                                                           fan_in=a["fan_in"])
    truth["reference_checkpoint"] = a["model"]
    write_synthetic_assembly(out, assembly, stimuli, truth, readout)
    write_effective_config("synth", cfg, out)
    print(f"{a['area']}: {len(stimuli)} stimuli x {a['neurons']} neurons, ceiling {truth['ceiling']:.4f} -> {out}")
    return EXIT_OK


def cmd_score(cfg: dict) -> int:
    from .charts import write_report_charts
    from .checkpoint import load_checkpoint
    from .model import Head, TrunkConfig, build_model
    from .predictivity import load_assembly, score_model, write_report

    out = _require_out(cfg)
    if bool(cfg["model"]) == (cfg["untrained_seed"] is not None):
        raise ConfigError("give exactly one of --model CHECKPOINT or --untrained SEED")
    if cfg["model"]:
        model = load_checkpoint(cfg["model"])
    else:
        model = build_model(TrunkConfig(resolution=cfg["resolution"]), Head.classifier(20), seed=cfg["untrained_seed"])
    if not cfg["assemblies"]:
        raise ConfigError("at least one --assembly directory is required")
    pairs = []
    for path in cfg["assemblies"]:
        assembly, stimuli = load_assembly(path)
        pairs.append((stimuli, assembly))
    ev = cfg["eval"]
    write_effective_config("score", cfg, out)
    report = score_model(model, pairs, layers=ev["layers"], k=ev["k"], lam=ev["lam"], splits=ev["splits"],
                         seed=ev["seed"], workers=cfg["workers"])
    write_report(report, out)
    if cfg["chart"]:
        write_report_charts(report, out)
    for row in report.rows:
        print(f"{row['layer']:6} {row['area']:4} {row['score']:.4f} +- {row['se']:.4f}")
    return EXIT_OK


def cmd_rollout(cfg: dict) -> int:
    from .checkpoint import load_checkpoint
    from .dqn import model_policy
    from .env import load_task
    from .env.rollout import episode_seeds, random_policy, record_episode, run_episode

    out = _require_out(cfg)
    task = load_task(cfg["task"])
    if cfg["policy"] == "random":
        make_policy = lambda: random_policy(task, cfg["seed"])  # noqa: E731
        render = False
    elif cfg["policy"] == "model":
        if not cfg["model"]:
            raise ConfigError("--policy model needs --model CHECKPOINT")
        model = load_checkpoint(cfg["model"])
        if model.trunk.resolution != cfg["resolution"]:
            raise ConfigError(f"model expects {model.trunk.resolution}px frames; set --resolution accordingly")
        make_policy = lambda: model_policy(model, task, cfg["epsilon"], cfg["seed"], cfg["action_repeat"])  # noqa: E731
        render = True
    else:
        raise ConfigError(f"policy must be 'random' or 'model', got {cfg['policy']!r}")
    if cfg["episodes"] < 1:
        raise ConfigError("episodes must be at least 1")
    write_effective_config("rollout", cfg, out)
    policy = make_policy()
    seeds = episode_seeds(cfg["seed"], cfg["episodes"])
    rows = []
    for i, s in enumerate(seeds):
        ret, ticks, actions, _ = run_episode(task, policy, s, cfg["resolution"], render_frames=render)
        rows.append((i, s, ret, ticks))
    if cfg["record"]:
        rec = record_episode(task, make_policy(), seeds[0], cfg["record"], cfg["resolution"])
        log.info("recorded episode with return %s to %s", rec["return"], rec["path"])
    with open(out / "episodes.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("episode", "seed", "return", "ticks"))
        for i, s, ret, ticks in rows:
            w.writerow((i, s, repr(float(ret)), ticks))
    returns = np.array([r[2] for r in rows])
    summary = {"task": task.task_id, "policy": cfg["policy"], "episodes": len(rows), "mean": float(returns.mean()),
               "std": float(returns.std(ddof=1)) if len(rows) > 1 else 0.0}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{task.task_id} {cfg['policy']}: mean {summary['mean']:.3f} sd {summary['std']:.3f} over {len(rows)} episodes")
    return EXIT_OK


def cmd_verify(cfg: dict) -> int:
    from .verify import run_checks

    out = Path(cfg["out"]) if cfg["out"] else None
    if out is not None:
        write_effective_config("verify", cfg, out)
    results = run_checks(long=cfg["long"], oracles_path=cfg["oracles"], out=out)
    failed = [r.name for r in results if not r.passed]
    if out is not None:
        (out / "verify.json").write_text(json.dumps([dataclasses.asdict(r) | {"seconds": None} for r in results],
                                                    indent=2, sort_keys=True) + "\n")
    if failed:
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_convert_cifar(cfg: dict) -> int:
    from .datasets import convert_cifar

    out = _require_out(cfg)
    if not cfg["src"]:
        raise ConfigError("--src directory with CIFAR-10 binary batches is required")
    convert_cifar(cfg["src"], out, cfg["limit"])
    write_effective_config("convert-cifar", cfg, out)
    print(f"converted {cfg['src']} -> {out}")
    return EXIT_OK


def cmd_convert_assembly(cfg: dict) -> int:
    from .predictivity import convert_assembly

    out = _require_out(cfg)
    if not cfg["responses"] or not cfg["stimuli"]:
        raise ConfigError("--responses CSV and --stimuli directory are required")
    convert_assembly(cfg["responses"], cfg["stimuli"], cfg["area"], out, cfg["provenance"])
    write_effective_config("convert-assembly", cfg, out)
    print(f"assembly ({cfg['area']}) -> {out}")
    return EXIT_OK


COMMANDS = {
    "train-dqn": cmd_train_dqn,
    "train-sup": cmd_train_sup,
    "synth": cmd_synth,
    "score": cmd_score,
    "rollout": cmd_rollout,
    "verify": cmd_verify,
    "convert-cifar": cmd_convert_cifar,
    "convert-assembly": cmd_convert_assembly,
}


# ---------------------------------------------------------------------------- argument parsing

# flag dest -> dotted config key
FLAG_KEYS = {
    "train-dqn": {"task": "task", "seed": "seed", "out": "out", "steps": "dqn.total_steps",
                  "resolution": "dqn.resolution", "lr": "dqn.lr", "action_repeat": "dqn.action_repeat",
                  "batch_size": "dqn.batch_size"},
    "train-sup": {"seed": "seed", "out": "out", "resolution": "resolution", "resume": "resume",
                  "dataset": "data.path", "data_kind": "data.kind", "per_class": "data.per_class",
                  "epochs": "supervised.epochs", "lr": "supervised.lr", "batch_size": "supervised.batch_size"},
    "synth": {"kind": "kind", "seed": "seed", "out": "out", "resolution": "resolution", "layer": "assembly.layer",
              "neurons": "assembly.neurons", "sigma": "assembly.sigma", "stimuli": "assembly.stimuli",
              "area": "assembly.area", "model": "assembly.model", "model_seed": "assembly.model_seed",
              "per_class": "mix.per_class", "objects": "mix.objects", "textures": "mix.textures"},
    "score": {"model": "model", "untrained": "untrained_seed", "resolution": "resolution", "assembly": "assemblies",
              "out": "out", "chart": "chart", "workers": "workers", "k": "eval.k", "lam": "eval.lam",
              "splits": "eval.splits", "seed": "eval.seed", "layers": "eval.layers"},
    "rollout": {"task": "task", "policy": "policy", "model": "model", "episodes": "episodes", "seed": "seed",
                "resolution": "resolution", "epsilon": "epsilon", "action_repeat": "action_repeat",
                "record": "record", "out": "out"},
    "verify": {"long": "long", "oracles": "oracles", "out": "out"},
    "convert-cifar": {"src": "src", "out": "out", "limit": "limit"},
    "convert-assembly": {"responses": "responses", "stimuli": "stimuli", "area": "area",
                         "provenance": "provenance", "out": "out"},
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nprl", description="Train, probe and score convolutional agents and classifiers.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON configuration file (flags take precedence)")
        if out:
            sp.add_argument("--out", help="output directory")

    s = sub.add_parser("train-dqn", help="train a dueling DQN on a raycast task")
    common(s)
    s.add_argument("--task")
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int, help="environment ticks")
    s.add_argument("--resolution", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--action-repeat", type=int)
    s.add_argument("--batch-size", type=int)

    s = sub.add_parser("train-sup", help="train a classifier on an image dataset")
    common(s)
    s.add_argument("--dataset", help="directory with manifest.csv (implies --data-kind manifest)")
    s.add_argument("--data-kind", choices=("manifest", "mix", "gratings"))
    s.add_argument("--profile", choices=("quick", "gratings", "mix20"), help="pinned dataset and schedule")
    s.add_argument("--per-class", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--resolution", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--resume", help="checkpoint to continue from")

    s = sub.add_parser("synth", help="generate a synthetic dataset or assembly")
    common(s)
    s.add_argument("kind", nargs="?", choices=("mix", "assembly"))
    s.add_argument("--seed", type=int)
    s.add_argument("--resolution", type=int)
    s.add_argument("--layer")
    s.add_argument("--neurons", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--stimuli", type=int)
    s.add_argument("--area")
    s.add_argument("--model", help="reference checkpoint (default: initialized classifier)")
    s.add_argument("--model-seed", type=int)
    s.add_argument("--objects", type=int)
    s.add_argument("--textures", type=int)
    s.add_argument("--per-class", type=int)

    s = sub.add_parser("score", help="predictivity of every layer against assemblies")
    common(s)
    s.add_argument("--model", help="checkpoint to score")
    s.add_argument("--untrained", type=int, metavar="SEED", help="score a freshly initialized classifier instead")
    s.add_argument("--resolution", type=int, help="input resolution of the --untrained model")
    s.add_argument("--assembly", action="append", help="assembly directory (repeatable)")
    s.add_argument("--k", type=int)
    s.add_argument("--lam", type=float)
    s.add_argument("--splits", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--layers", nargs="+")
    s.add_argument("--workers", type=int, help="parallel scoring jobs (default NPRL_WORKERS or 1)")
    s.add_argument("--no-chart", dest="chart", action="store_const", const=False)

    s = sub.add_parser("rollout", help="play episodes with a random or trained policy")
    common(s)
    s.add_argument("--task")
    s.add_argument("--policy", choices=("random", "model"))
    s.add_argument("--model")
    s.add_argument("--episodes", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--resolution", type=int)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--action-repeat", type=int)
    s.add_argument("--record", help="directory for the first episode's frames and log")

    s = sub.add_parser("verify", help="run the verification bundle")
    common(s)
    s.add_argument("--long", action="store_const", const=True, help="add the desk-scale training fixtures")
    s.add_argument("--oracles", help="alternative stored-oracle JSON")

    s = sub.add_parser("convert-cifar", help="CIFAR-10 binary batches -> manifest directory")
    common(s)
    s.add_argument("--src")
    s.add_argument("--limit", type=int, help="items per split")

    s = sub.add_parser("convert-assembly", help="response matrix CSV + stimuli -> assembly directory")
    common(s)
    s.add_argument("--responses")
    s.add_argument("--stimuli", help="directory with manifest.csv (stimulus_id, relative_path)")
    s.add_argument("--area")
    s.add_argument("--provenance")
    return p


SUP_PROFILES = {
    "quick": {"resolution": 32, "data": {"kind": "mix", "per_class": 10}, "supervised": {"epochs": 2}},
    "gratings": {"resolution": 64, "data": {"kind": "gratings", "per_class": 256}, "supervised": {"epochs": 1}},
    "mix20": {"resolution": 64, "data": {"kind": "mix", "per_class": 150}, "supervised": {"epochs": 8}},
}


def config_from_args(args: argparse.Namespace) -> dict:
    command = args.command
    flags = {}
    for dest, key in FLAG_KEYS[command].items():
        val = getattr(args, dest, None)
        if val is not None:
            flags[key] = val
    if command == "train-sup":
        if getattr(args, "dataset", None) and "data.kind" not in flags:
            flags["data.kind"] = "manifest"
        if args.profile:
            base = _merge_strict(defaults_for(command), SUP_PROFILES[args.profile])
            cfg = base if args.config is None else _merge_strict(base, json.loads(Path(args.config).read_text()))
            for dotted, val in flags.items():
                node, *rest = dotted.split(".")
                cfg = _merge_strict(cfg, {node: val} if not rest else {node: {rest[0]: val}})
            return cfg
    return build_config(command, args.config, flags)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg)
    except NumericError as exc:
        print(f"nprl {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except NprlError as exc:
        print(f"nprl {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        print(f"nprl {args.command}: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
