"""Experiment command line.

One subcommand per experiment: train, attack-eval, svd-swap, sr-visualize,
grey-box, param-count, ablate. Every run writes its artifacts under a fresh
run directory (timestamp + seed) including the resolved configuration, so any
run can be reproduced from its own config file.

Value resolution: built-in defaults, then the --config file (flat
``key = value`` lines), then explicit command-line flags. Flags win.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import re
import sys
import time
import traceback
from pathlib import Path

import torch

from . import data as dio
from .attacks import AttackConfig
from .complexity import count_overhead
from .data import DatasetSpec, load_cifar10
from .losses import LossWeights
from .model import SRNet, build_model
from .spectral import difference_map
from .training import (
    TrainConfig,
    adversarial_train,
    evaluate_robustness,
    grey_box_sr_eval,
    svd_swap_experiment,
    train_isolated_sr,
)


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


DEFAULTS = {
    "data_root": "data",
    "out_root": "runs",
    "seed": 0,
    "synthetic": False,
    "with_sr": True,
    "num_proj": 3,
    "epochs": 10,
    "train_size": 4096,
    "eval_size": 1000,
    "batch_size": 128,
    "lr": 0.1,
    "momentum": 0.9,
    "weight_decay": 5e-4,
    "lambda1": 20.0,
    "lambda2": 1e-4,
    "train_eps": 8 / 255,
    "train_alpha": 2 / 255,
    "train_steps": 10,
    "attacks": "pgd20",
    "eps": None,
    "alpha": None,
    "checkpoint": None,
    "backbone_checkpoint": None,
    "sr_epochs": 5,
    "panels": 8,
    "lambda1_values": None,
    "num_proj_values": None,
    "adv_archive": None,
    "archive_eps": 8 / 255,
    "milestones": None,
}

_NUMERIC = {
    "seed": int, "num_proj": int, "epochs": int, "train_size": int, "eval_size": int,
    "batch_size": int, "train_steps": int, "sr_epochs": int, "panels": int,
    "lr": float, "momentum": float, "weight_decay": float, "lambda1": float,
    "lambda2": float, "train_eps": float, "train_alpha": float, "eps": float,
    "alpha": float, "archive_eps": float,
}
_BOOLS = ("synthetic", "with_sr")


def parse_number(text: str) -> float:
    """Accept plain floats and fractions like 8/255."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def parse_attack(token: str, eps: float | None = None, alpha: float | None = None) -> AttackConfig:
    """Token grammar: <objective><steps>[-l2], e.g. pgd20, cw100, svd20, ce+svd20-l2."""
    m = re.fullmatch(r"(pgd|cw|svd|info|ce\+svd|ce\+info|ce\+svd\+info)(\d+)(-l2)?", token.strip())
    if not m:
        raise ConfigError(f"cannot parse attack token {token!r}")
    objective = {"pgd": "ce"}.get(m.group(1), m.group(1))
    norm = "l2" if m.group(3) else "linf"
    if eps is None:
        eps = 8 / 255 if norm == "linf" else 0.5
    if alpha is None:
        alpha = 2 / 255 if norm == "linf" else 0.1
    return AttackConfig(
        norm=norm, eps=eps, alpha=alpha, steps=int(m.group(2)), objective=objective
    )


def resolve(args: argparse.Namespace) -> dict:
    """defaults <- config file <- explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            raw = dio.read_config(args.config)
        except (FileNotFoundError, ValueError) as e:
            raise ConfigError(str(e)) from e
        for key, value in raw.items():
            if key in ("command", "taps"):  # informational in persisted run configs
                continue
            if key not in cfg:
                raise ConfigError(f"unknown config key {key!r}")
            if key in _BOOLS:
                cfg[key] = value.lower() in ("1", "true", "yes", "on")
            elif value.lower() == "none":
                cfg[key] = None
            elif key in _NUMERIC:
                caster = _NUMERIC[key]
                cfg[key] = caster(parse_number(value)) if caster is float else caster(value)
            else:
                cfg[key] = value
    for key in cfg:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    cfg["command"] = args.command
    return cfg


def make_run_dir(cfg: dict) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run_dir = Path(cfg["out_root"]) / f"{cfg['command']}-{stamp}-seed{cfg['seed']}"
    run_dir.mkdir(parents=True, exist_ok=False)
    resolved = {k: v for k, v in cfg.items() if v is not None}
    dio.write_config(run_dir / "config.txt", resolved)
    return run_dir


def load_split(cfg: dict, split: str, size: int | None) -> tuple[torch.Tensor, torch.Tensor]:
    root = Path(cfg["data_root"])
    has_files = any(root.glob("*.bin")) if root.exists() else False
    if not has_files:
        if not cfg["synthetic"]:
            raise ConfigError(
                f"no CIFAR-10 .bin files under {root}; point --data-root at the dataset "
                f"or pass --synthetic to generate a stand-in corpus"
            )
        from .synthetic import write_synthetic_cifar

        print(f"[data] writing synthetic corpus to {root}")
        write_synthetic_cifar(root)
    balanced = size is None or size % 10 == 0  # sizes like 4096 fall back to uniform sampling
    try:
        spec = DatasetSpec(
            root=str(root), split=split, subset_size=size, balanced=balanced, seed=cfg["seed"]
        )
        return load_cifar10(spec)
    except (FileNotFoundError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_model_from(cfg: dict, key: str = "checkpoint"):
    path = cfg.get(key)
    if not path:
        raise ConfigError(f"--{key.replace('_', '-')} is required for this command")
    try:
        ckpt = dio.load_checkpoint(path)
        return dio.restore_model(ckpt)
    except (FileNotFoundError, ValueError) as e:
        raise ConfigError(str(e)) from e


def train_config(cfg: dict) -> TrainConfig:
    milestones = cfg["milestones"]
    if isinstance(milestones, str):
        milestones = tuple(int(v) for v in milestones.split(","))
    return TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        lr=cfg["lr"],
        momentum=cfg["momentum"],
        weight_decay=cfg["weight_decay"],
        milestones=milestones,
        attack=AttackConfig(
            norm="linf",
            eps=cfg["train_eps"],
            alpha=cfg["train_alpha"],
            steps=cfg["train_steps"],
            objective="ce",
        ),
        weights=LossWeights(lambda1=cfg["lambda1"], lambda2=cfg["lambda2"]),
        seed=cfg["seed"],
    )


def eval_attacks(cfg: dict) -> list[AttackConfig]:
    return [parse_attack(tok, cfg["eps"], cfg["alpha"]) for tok in cfg["attacks"].split(",")]


# --- commands ---


def cmd_train(cfg: dict, run_dir: Path) -> dict:
    x, y = load_split(cfg, "train", cfg["train_size"])
    xt, yt = load_split(cfg, "test", cfg["eval_size"])
    taps = (0, 1, 2)[: cfg["num_proj"]]
    if cfg["with_sr"]:  # record the injection plan next to the resolved config
        with open(run_dir / "config.txt", "a") as f:
            f.write(f"taps = {','.join(map(str, taps))}\n")
    model = build_model(with_sr=cfg["with_sr"], taps=taps)
    tc = train_config(cfg)
    history = adversarial_train(tc, model, x, y, run_dir=run_dir)
    print(f"[train] {len(history)} epochs, final train robust acc "
          f"{history[-1]['train_robust_acc']:.2f}%")
    results = evaluate_robustness(model, eval_attacks(cfg), xt, yt, seed=cfg["seed"])
    dio.write_results(run_dir / "results", results)
    for name, acc in results.items():
        print(f"[eval] {name}: {acc:.2f}%")
    return results


def cmd_attack_eval(cfg: dict, run_dir: Path) -> dict:
    model = load_model_from(cfg)
    xt, yt = load_split(cfg, "test", cfg["eval_size"])
    results = evaluate_robustness(model, eval_attacks(cfg), xt, yt, seed=cfg["seed"])
    if cfg["adv_archive"]:
        x_adv, y_adv = dio.load_adv_archive(cfg["adv_archive"])
        if x_adv.shape != xt.shape:
            raise ConfigError(
                f"archive shape {tuple(x_adv.shape)} does not match the eval subset "
                f"{tuple(xt.shape)}; ingest with the dataset spec the archive was built for"
            )
        report = dio.check_archive_budget(x_adv, xt, cfg["archive_eps"])
        print(f"[archive] budget check: {report}")
        from .training import accuracy

        results["archive"] = accuracy(model, x_adv, y_adv)
        dio.append_jsonl(run_dir / "archive_check.jsonl", report)
    dio.write_results(run_dir / "results", results)
    for name, acc in results.items():
        print(f"[eval] {name}: {acc:.2f}%")
    return results


def cmd_svd_swap(cfg: dict, run_dir: Path) -> dict:
    model = load_model_from(cfg)
    xt, yt = load_split(cfg, "test", cfg["eval_size"])
    out = {}
    for attack in eval_attacks(cfg):
        res = svd_swap_experiment(model, attack, xt, yt, seed=cfg["seed"])
        out[attack.label()] = res.robust_acc
        out[attack.label() + "+swap"] = res.swapped_acc
        print(f"[swap] {attack.label()}: robust {res.robust_acc:.2f}% -> "
              f"swapped {res.swapped_acc:.2f}% (gain {res.gain:+.2f})")
    dio.write_results(run_dir / "results", out)
    return out


def cmd_sr_visualize(cfg: dict, run_dir: Path) -> dict:
    model = load_model_from(cfg)
    if not isinstance(model, SRNet):
        raise ConfigError("sr-visualize needs a checkpoint of a model with the SR side branch")
    xt, yt = load_split(cfg, "test", cfg["eval_size"])
    n = min(cfg["panels"], len(yt))
    attack = eval_attacks(cfg)[0]
    from .attacks import pgd_attack

    x, y = xt[:n], yt[:n]
    x_adv = pgd_attack(model, x, y, attack, generator=torch.Generator().manual_seed(cfg["seed"]))
    with torch.no_grad():
        model.eval()
        x_avg = model.side.compute_x_avg(x_adv)
    paths = []
    for i in range(n):
        panel = [
            x[i],
            x_adv[i],
            x_avg[i],
            difference_map(x_adv[i], x[i]).float(),
            difference_map(x_avg[i], x_adv[i]).float(),
        ]
        paths.append(dio.export_png(run_dir / "images" / f"panel_{i:02d}.png", panel))
    print(f"[visualize] wrote {len(paths)} panels (x | x_adv | x_avg | D1 | D2) "
          f"under {run_dir / 'images'}")
    return {"panels": len(paths)}


def cmd_grey_box(cfg: dict, run_dir: Path) -> dict:
    backbone = load_model_from(cfg, "backbone_checkpoint")
    if isinstance(backbone, SRNet):
        raise ConfigError("grey-box expects a bare backbone checkpoint")
    x, y = load_split(cfg, "train", cfg["train_size"])
    xt, yt = load_split(cfg, "test", cfg["eval_size"])
    tc = train_config(cfg)
    tc = TrainConfig(
        epochs=cfg["sr_epochs"], batch_size=tc.batch_size, lr=0.01, momentum=tc.momentum,
        weight_decay=tc.weight_decay, attack=tc.attack, weights=tc.weights, seed=tc.seed,
    )
    side = train_isolated_sr(backbone, x, y, tc)
    attack = eval_attacks(cfg)[0]
    clean_attack = AttackConfig(norm=attack.norm, eps=0.0, alpha=attack.alpha, steps=0,
                                objective=attack.objective, random_start=False)
    clean_plain, clean_reg = grey_box_sr_eval(side, backbone, clean_attack, xt, yt, seed=cfg["seed"])
    adv_plain, adv_reg = grey_box_sr_eval(side, backbone, attack, xt, yt, seed=cfg["seed"])
    results = {
        "clean": clean_plain,
        "clean+reg": clean_reg,
        attack.label(): adv_plain,
        attack.label() + "+reg": adv_reg,
    }
    dio.write_results(run_dir / "results", results)
    for name, acc in results.items():
        print(f"[grey-box] {name}: {acc:.2f}%")
    return results


def cmd_param_count(cfg: dict, run_dir: Path) -> dict:
    base = build_model(with_sr=False)
    full = build_model(with_sr=True, taps=(0, 1, 2)[: cfg["num_proj"]])
    report = count_overhead(base, full)
    for line in report.lines():
        print(line)
    (run_dir / "results.txt").write_text("\n".join(report.lines()) + "\n")
    return {
        "base_params": report.base_params,
        "full_params": report.full_params,
        "param_overhead": report.param_overhead,
    }


def cmd_ablate(cfg: dict, run_dir: Path) -> dict:
    lambda1_values = cfg["lambda1_values"]
    num_proj_values = cfg["num_proj_values"]
    if not lambda1_values and not num_proj_values:
        raise ConfigError("ablate needs --lambda1-values and/or --num-proj-values")
    x, y = load_split(cfg, "train", cfg["train_size"])
    xt, yt = load_split(cfg, "test", cfg["eval_size"])
    attack = eval_attacks(cfg)[0]
    rows = []
    sweeps = []
    if lambda1_values:
        sweeps += [("lambda1", float(v)) for v in str(lambda1_values).split(",")]
    if num_proj_values:
        sweeps += [("num_proj", int(v)) for v in str(num_proj_values).split(",")]
    for key, value in sweeps:
        sub = dict(cfg)
        sub[key] = value
        taps = (0, 1, 2)[: sub["num_proj"]]
        model = build_model(with_sr=True, taps=taps)
        adversarial_train(train_config(sub), model, x, y)
        res = evaluate_robustness(model, [attack], xt, yt, seed=cfg["seed"])
        row = {"param": key, "value": value, "clean": res["clean"], attack.label(): res[attack.label()]}
        rows.append(row)
        print(f"[ablate] {key}={value}: clean {res['clean']:.2f}%, "
              f"{attack.label()} {res[attack.label()]:.2f}%")
    with open(run_dir / "results.json", "w") as f:
        import json

        json.dump(rows, f, indent=2)
    header = f"{'param':<10} {'value':>8} {'clean':>8} {attack.label():>10}"
    lines = [header] + [
        f"{r['param']:<10} {r['value']:>8} {r['clean']:>8.2f} {r[attack.label()]:>10.2f}" for r in rows
    ]
    (run_dir / "results.txt").write_text("\n".join(lines) + "\n")
    return {"rows": len(rows)}


COMMANDS = {
    "train": cmd_train,
    "attack-eval": cmd_attack_eval,
    "svd-swap": cmd_svd_swap,
    "sr-visualize": cmd_sr_visualize,
    "grey-box": cmd_grey_box,
    "param-count": cmd_param_count,
    "ablate": cmd_ablate,
}


def build_parser() -> _Parser:
    parser = _Parser(
        prog="specreg",
        description="Spectral-analysis and singular-regularization experiments. "
        "Precedence: defaults < --config file < explicit flags.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--data-root", dest="data_root")
        p.add_argument("--out-root", dest="out_root")
        p.add_argument("--seed", type=int)
        p.add_argument("--synthetic", action="store_const", const=True, default=None,
                       help="generate a synthetic CIFAR-format corpus if data is missing")
        p.add_argument("--eval-size", dest="eval_size", type=int)
        p.add_argument("--attacks", help="comma list: pgd20, pgd100, cw100, svd20, ce+svd20, ...-l2")
        p.add_argument("--eps", type=parse_number)
        p.add_argument("--alpha", type=parse_number)

    def add_train_like(p):
        p.add_argument("--epochs", type=int)
        p.add_argument("--train-size", dest="train_size", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--lambda1", type=float)
        p.add_argument("--lambda2", type=float)
        p.add_argument("--num-proj", dest="num_proj", type=int)
        p.add_argument("--milestones")
        p.add_argument("--train-steps", dest="train_steps", type=int)
        p.add_argument("--train-eps", dest="train_eps", type=parse_number)
        p.add_argument("--train-alpha", dest="train_alpha", type=parse_number)

    p = sub.add_parser("train", help="adversarially train a model (PGD-AT)")
    add_common(p)
    add_train_like(p)
    p.add_argument("--no-sr", dest="with_sr", action="store_const", const=False, default=None)

    p = sub.add_parser("attack-eval", help="robust-accuracy table for a checkpoint")
    add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--adv-archive", dest="adv_archive",
                   help="prefix of an external adversarial-example archive to ingest")
    p.add_argument("--archive-eps", dest="archive_eps", type=parse_number)

    p = sub.add_parser("svd-swap", help="robust accuracy before/after clean singular values")
    add_common(p)
    p.add_argument("--checkpoint")

    p = sub.add_parser("sr-visualize", help="PNG panels: x, x_adv, x_avg, difference maps")
    add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--panels", type=int)

    p = sub.add_parser("grey-box", help="isolated side branch defending a bare backbone")
    add_common(p)
    add_train_like(p)
    p.add_argument("--backbone-checkpoint", dest="backbone_checkpoint")
    p.add_argument("--sr-epochs", dest="sr_epochs", type=int)

    p = sub.add_parser("param-count", help="parameter / multiply-add table")
    add_common(p)
    p.add_argument("--num-proj", dest="num_proj", type=int)

    p = sub.add_parser("ablate", help="sweep lambda1 and/or projection count")
    add_common(p)
    add_train_like(p)
    p.add_argument("--lambda1-values", dest="lambda1_values")
    p.add_argument("--num-proj-values", dest="num_proj_values")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        run_dir = make_run_dir(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    print(f"[run] {run_dir}")
    try:
        COMMANDS[args.command](cfg, run_dir)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        traceback.print_exc()
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
