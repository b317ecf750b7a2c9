"""Command-line pipeline: gen -> train -> unlearn -> eval -> attack, plus sweep and report.

Layout under ``--out``::

    seed_<N>/dataset.jsonl          samples, first line echoes the config
    seed_<N>/vanilla.json           checkpoint
    seed_<N>/unlearned_<method>.json, audit_<method>.json
    seed_<N>/eval_<method>.{csv,json}, attack_<method>.{csv,json}
    seed_<N>/timing.json            wall-clock sidecar (not reproducible)
    sweep_<parameter>.{csv,json}, summary.{csv,json}

Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import evaluation as ev
from . import synthbench as sb
from . import toy_mllm as tm
from . import unlearn as ul
from .numerics import NumericError, Rng

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

# child streams of Rng(seed), one per pipeline stage
STREAM_INIT, STREAM_VANILLA, STREAM_UNLEARN, STREAM_ATTACK = 1, 2, 3, 4


class PipelineIOError(OSError):
    pass


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _json(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _echo(cfg: cfgmod.ExperimentConfig, seed: int | None) -> dict:
    return {"config": cfg.raw, "seed": seed}


def seed_dir(cfg: cfgmod.ExperimentConfig, seed: int) -> Path:
    return cfg.out / f"seed_{seed}"


def _record_timing(cfg, seed: int, command: str, seconds: float) -> None:
    path = seed_dir(cfg, seed) / "timing.json"
    try:
        timing = json.loads(path.read_text()) if path.exists() else {}
    except json.JSONDecodeError:
        timing = {}
    timing[command] = seconds
    write_atomic(path, _json(timing))


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise PipelineIOError(f"missing {what}: {path} (run the earlier pipeline step first)")
    return path


def _load_data(cfg, seed: int) -> sb.SplitDatasets:
    return sb.load(_require(seed_dir(cfg, seed) / "dataset.jsonl", "dataset"))


def _load_model(path: Path, what: str) -> tm.ToyMLLM:
    model, _ = tm.load_checkpoint(_require(path, what))
    return model


# commands -------------------------------------------------------------------


def cmd_gen(cfg, seed: int) -> list[Path]:
    data = sb.generate(seed, **cfg.data)
    path = seed_dir(cfg, seed) / "dataset.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    sb.save(data, path, meta=_echo(cfg, seed))
    return [path]


def cmd_train(cfg, seed: int) -> list[Path]:
    data = _load_data(cfg, seed)
    root = Rng(seed)
    v = cfg.vanilla
    base = tm.ToyMLLM.init(cfg.dims(), root.spawn(STREAM_INIT))
    model, losses = tm.train_vanilla(base, data.all_samples(), v["epochs"], v["lr"],
                                     root.spawn(STREAM_VANILLA), v["batch_size"])
    d = seed_dir(cfg, seed)
    ckpt = d / "vanilla.json"
    tm.save_checkpoint(model, ckpt, seed, {"config": cfg.raw, "train_loss": losses})
    report = ev.evaluate(model, data, label="vanilla", seed=seed, config=cfg.raw)
    write_atomic(d / "vanilla_report.json", _json({**_echo(cfg, seed), "report": report.to_dict()}))
    write_atomic(d / "vanilla_report.csv", ev.report_csv([report], _echo(cfg, seed)))
    return [ckpt, d / "vanilla_report.json", d / "vanilla_report.csv"]


def run_unlearning(cfg, vanilla: tm.ToyMLLM, data: sb.SplitDatasets, seed: int,
                   **overrides) -> tuple[tm.ToyMLLM, ul.Audit]:
    hyper = cfg.unlearn_config(**overrides)
    rng = Rng(seed).spawn(STREAM_UNLEARN)
    if cfg.method == "vkd":
        return ul.unlearn_vkd(vanilla, data, hyper, rng)
    return ul.unlearn_baseline(vanilla, data, cfgmod.BASELINE_NAMES[cfg.method], hyper.scope, hyper, rng)


def cmd_unlearn(cfg, seed: int) -> list[Path]:
    data = _load_data(cfg, seed)
    d = seed_dir(cfg, seed)
    vanilla = _load_model(d / "vanilla.json", "vanilla checkpoint")
    model, audit = run_unlearning(cfg, vanilla, data, seed)
    ckpt = d / f"unlearned_{cfg.method}.json"
    tm.save_checkpoint(model, ckpt, seed, {"config": cfg.raw, "method": cfg.method})
    audit_path = d / f"audit_{cfg.method}.json"
    write_atomic(audit_path, _json({**_echo(cfg, seed), "audit": audit.to_dict()}))
    return [ckpt, audit_path]


def _delta_table(vanilla: ev.RunReport, unlearned: ev.RunReport, seed: int) -> list[list]:
    rows = [vanilla.csv_row(), unlearned.csv_row()]
    delta = ["delta", seed]
    for split in sb.SPLITS:
        a, b = vanilla.accuracies.get(split), unlearned.accuracies.get(split)
        delta.append("" if a is None or b is None else repr(b - a))
    return rows + [delta]


def cmd_eval(cfg, seed: int) -> list[Path]:
    data = _load_data(cfg, seed)
    d = seed_dir(cfg, seed)
    vanilla = _load_model(d / "vanilla.json", "vanilla checkpoint")
    model = _load_model(d / f"unlearned_{cfg.method}.json", "unlearned checkpoint")
    r0 = ev.evaluate(vanilla, data, label="vanilla", seed=seed)
    r1 = ev.evaluate(model, data, label=cfg.method, seed=seed)
    buf = io.StringIO()
    buf.write("# config=" + json.dumps(_echo(cfg, seed), sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ev.REPORT_COLUMNS)
    writer.writerows(_delta_table(r0, r1, seed))
    csv_path, json_path = d / f"eval_{cfg.method}.csv", d / f"eval_{cfg.method}.json"
    write_atomic(csv_path, buf.getvalue())
    write_atomic(json_path, _json({**_echo(cfg, seed), "columns": list(ev.REPORT_COLUMNS),
                                   "reports": [r0.to_dict(), r1.to_dict()]}))
    return [csv_path, json_path]


def cmd_attack(cfg, seed: int) -> list[Path]:
    data = _load_data(cfg, seed)
    d = seed_dir(cfg, seed)
    model = _load_model(d / f"unlearned_{cfg.method}.json", "unlearned checkpoint")
    a = cfg.attack
    scope = cfg.attack_scope()
    stream = Rng(seed).spawn(STREAM_ATTACK)
    rows = []
    for i, fraction in enumerate(a["fractions"]):
        curve = ev.relearn_attack(model, data.forget_vqa, fraction, a["epochs"], a["lr"], scope,
                                  stream.spawn(i), a["batch_size"])
        rows.append((cfg.method, seed, curve))
    csv_path, json_path = d / f"attack_{cfg.method}.csv", d / f"attack_{cfg.method}.json"
    write_atomic(csv_path, ev.attack_csv(rows, a["epochs"], _echo(cfg, seed)))
    write_atomic(json_path, _json({**_echo(cfg, seed), "method": cfg.method,
                                   "curves": [c.to_dict() for _, _, c in rows]}))
    return [csv_path, json_path]


SWEEP_COLUMNS = ("parameter", "value", "seed") + sb.SPLITS


def cmd_sweep(cfg, seeds: list[int]) -> list[Path]:
    if cfg.method != "vkd":
        raise ul.ConfigError("sweep varies alpha/beta of the vkd objective; set method = \"vkd\"")
    param, grid = cfg.sweep["parameter"], cfg.sweep["grid"]
    rows = []
    for seed in seeds:
        data = _load_data(cfg, seed)
        vanilla = _load_model(seed_dir(cfg, seed) / "vanilla.json", "vanilla checkpoint")
        for value in grid:
            model, _ = run_unlearning(cfg, vanilla, data, seed, **{param: value})
            accs = ev.evaluate(model, data).accuracies
            rows.append([param, repr(float(value)), seed] + [ev.format_cell(accs[s]) for s in sb.SPLITS])
    buf = io.StringIO()
    buf.write("# config=" + json.dumps(_echo(cfg, None), sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    writer.writerows(rows)
    csv_path, json_path = cfg.out / f"sweep_{param}.csv", cfg.out / f"sweep_{param}.json"
    write_atomic(csv_path, buf.getvalue())
    records = [dict(zip(SWEEP_COLUMNS, r)) for r in rows]
    write_atomic(json_path, _json({**_echo(cfg, None), "rows": records}))
    return [csv_path, json_path]


SUMMARY_COLUMNS = ("label", "n_seeds") + sb.SPLITS


def cmd_report(cfg, seeds: list[int]) -> list[Path]:
    """Mean accuracies per label over seeds, plus mean accuracy gap per attack fraction."""
    per_label: dict[str, list[dict]] = {}
    gaps: dict[tuple[str, float], list[float]] = {}
    for seed in seeds:
        d = seed_dir(cfg, seed)
        evals = sorted(d.glob("eval_*.json"))
        if not evals:
            raise PipelineIOError(f"no eval reports under {d}")
        seen_vanilla = False
        for path in evals:
            for rep in json.loads(path.read_text())["reports"]:
                if rep["label"] == "vanilla":
                    if seen_vanilla:
                        continue
                    seen_vanilla = True
                per_label.setdefault(rep["label"], []).append(rep["accuracies"])
        for path in sorted(d.glob("attack_*.json")):
            doc = json.loads(path.read_text())
            for c in doc["curves"]:
                gaps.setdefault((doc["method"], c["fraction"]), []).append(c["accuracy_gap"])
    table = []
    for label in sorted(per_label, key=lambda k: (k != "vanilla", k)):
        accs = per_label[label]
        means = {}
        for s in sb.SPLITS:
            vals = [a[s] for a in accs if a[s] is not None]
            means[s] = float(np.mean(vals)) if vals else None
        table.append({"label": label, "n_seeds": len(accs), **means})
    attack = [{"method": m, "fraction": f, "n_seeds": len(v), "mean_accuracy_gap": float(np.mean(v))}
              for (m, f), v in sorted(gaps.items())]
    buf = io.StringIO()
    buf.write("# config=" + json.dumps(_echo(cfg, None), sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in table:
        writer.writerow([row["label"], row["n_seeds"]] + [ev.format_cell(row[s]) for s in sb.SPLITS])
    csv_path, json_path = cfg.out / "summary.csv", cfg.out / "summary.json"
    write_atomic(csv_path, buf.getvalue())
    write_atomic(json_path, _json({**_echo(cfg, None), "seeds": seeds, "accuracy": table,
                                   "attack": attack}))
    return [csv_path, json_path]


PER_SEED = {"gen": cmd_gen, "train": cmd_train, "unlearn": cmd_unlearn, "eval": cmd_eval,
            "attack": cmd_attack}
ACROSS_SEEDS = {"sweep": cmd_sweep, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment config (defaults if omitted)")
    common.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
    common.add_argument("--out", type=Path, help="output directory (overrides config 'out')")
    parser = argparse.ArgumentParser(prog="vkdlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(PER_SEED) + list(ACROSS_SEEDS):
        sub.add_parser(name, parents=[common])
    return parser


def run(command: str, cfg) -> list[Path]:
    written: list[Path] = []
    if command in PER_SEED:
        for seed in cfg.seeds:
            start = time.perf_counter()
            written += PER_SEED[command](cfg, seed)
            _record_timing(cfg, seed, f"{command}_seconds", time.perf_counter() - start)
    else:
        written += ACROSS_SEEDS[command](cfg, cfg.seeds)
    return written


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.resolve()
        if args.seed is not None:
            if args.seed < 0:
                raise ul.ConfigError("--seed must be non-negative")
            cfg = cfg.with_seed(args.seed)
        if args.out is not None:
            cfg = cfg.with_out(args.out)
    except ul.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        for path in run(args.command, cfg):
            print(path)
    except ul.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, sb.DatasetError, tm.ModelError, json.JSONDecodeError, KeyError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
