"""Command-line entry point.

Subcommands::

    gen             write synthetic stream files from the config's synth spec
    train           train on stream files, write model state + metrics report
    eval            recompute final-task accuracies from a saved state
    predict         one-shot inference over an embedding file
    check-theorems  run the numerical bound suites on random tables
    fewshot         run the few-shot episode protocol on a saved state
    report          render a metrics file as a table (optionally an SVG)

Exit codes: 0 success, 1 assertion or bound failure, 2 usage error.
Heavy imports happen after argument parsing so ``--deterministic`` can pin
the numeric thread pools before the numeric stack loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="path to a run-config JSON file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--deterministic", action="store_true",
                        help="force single-threaded numerics")
    parser.add_argument("--verbose", action="store_true",
                        help="emit line-delimited progress records on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hicl",
        description="continual learning over embeddings, with bound checking")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic stream files")
    _common(p)

    p = sub.add_parser("train", help="train a task sequence")
    _common(p)

    p = sub.add_parser("eval", help="re-evaluate a saved state")
    _common(p)

    p = sub.add_parser("predict", help="predict labels for an embedding file")
    _common(p)
    p.add_argument("--state", required=True)
    p.add_argument("--input", required=True)

    p = sub.add_parser("check-theorems", help="run the numerical bound suites")
    _common(p)
    p.add_argument("--random-tables", type=int, default=10000)

    p = sub.add_parser("fewshot", help="run few-shot episodes on a state")
    _common(p)

    p = sub.add_parser("report", help="render a metrics file")
    _common(p)
    p.add_argument("--metrics", required=True)
    p.add_argument("--svg", help="also write an SVG accuracy heatmap here")
    return parser


def _require(cfg, section: str, key: str):
    from .errors import ConfigError

    value = cfg.paths.get(key) if section == "paths" else None
    if not value:
        raise ConfigError(f"config is missing paths.{key}")
    return value


def _load_config(args):
    from .data_io import RunConfig, load_run_config

    cfg = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _progress_printer(verbose: bool):
    if not verbose:
        return None

    def emit(record: dict):
        print(json.dumps(record, sort_keys=True), flush=True)

    return emit


def _cmd_gen(args) -> int:
    from .data_io import save_stream, synth_stream

    cfg = _load_config(args)
    stream = synth_stream(cfg.seed, cfg.synth_spec())
    save_stream(stream, _require(cfg, "paths", "train"),
                _require(cfg, "paths", "test"))
    print(f"wrote {stream.num_tasks} tasks "
          f"({sum(len(t.train_y) for t in stream.tasks)} train samples)")
    return 0


def _metrics_doc(matrix, scenario: str, seed: int) -> dict:
    from .evaluation import caa, faa, ffm

    return {
        "format": 1,
        "scenario": scenario,
        "seed": seed,
        "matrix": matrix.to_lists(),
        "faa": faa(matrix),
        "caa": caa(matrix),
        "ffm": ffm(matrix) if matrix.num_tasks >= 2 else None,
    }


def _cmd_train(args) -> int:
    from .data_io import load_stream, save_state
    from .engine import TrainConfig, train_sequence

    cfg = _load_config(args)
    train_cfg = TrainConfig.from_dict({**cfg.train, "seed": cfg.seed})
    stream = load_stream(_require(cfg, "paths", "train"),
                         _require(cfg, "paths", "test"), cfg.scenario)
    state, matrix = train_sequence(stream, train_cfg,
                                   progress=_progress_printer(args.verbose))
    save_state(state, _require(cfg, "paths", "state"))
    doc = _metrics_doc(matrix, cfg.scenario, cfg.seed)
    with open(_require(cfg, "paths", "metrics"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"faa={doc['faa']:.4f} caa={doc['caa']:.4f} "
          f"ffm={doc['ffm'] if doc['ffm'] is not None else 'n/a'}")
    return 0


def _cmd_eval(args) -> int:
    import numpy as np

    from .data_io import load_state, load_stream
    from .evaluation import evaluate_scenario

    cfg = _load_config(args)
    state = load_state(_require(cfg, "paths", "state"))
    stream = load_stream(_require(cfg, "paths", "train"),
                         _require(cfg, "paths", "test"), cfg.scenario)
    row = evaluate_scenario(state, stream.test_sets(), cfg.scenario)
    print(json.dumps({"final_row": row, "faa": float(np.mean(row))},
                     sort_keys=True))
    return 0


def _cmd_predict(args) -> int:
    from .data_io import load_embeddings, load_state
    from .engine import predict

    state = load_state(args.state)
    data = load_embeddings(args.input)
    pred = predict(state, data.X)
    for i in range(len(pred.labels)):
        record = {"index": i, "task": int(pred.task_ids[i]),
                  "label": int(pred.labels[i])}
        if args.verbose:
            record["task_probs"] = [round(float(p), 6)
                                    for p in pred.task_probs[i]]
            record["class_probs"] = [round(float(p), 6)
                                     for p in pred.class_probs[i]]
        print(json.dumps(record, sort_keys=True))
    return 0


def _cmd_check_theorems(args) -> int:
    import numpy as np

    from .theory import (check_cil_identity, check_necessity,
                         check_theorem_cil, check_theorem_dil,
                         check_til_reduction, random_prob_table)

    cfg = _load_config(args)
    n = args.random_tables
    rng = np.random.default_rng(cfg.seed)
    failures = 0

    worst = 0.0
    for _ in range(n):
        worst = max(worst, check_cil_identity(random_prob_table(rng)))
    ok = worst <= 1e-9
    failures += not ok
    print(f"factorization identity   max dev {worst:.3e}  "
          f"[{'ok' if ok else 'FAIL'}]")

    viol = 0
    for _ in range(n):
        if not check_theorem_cil(random_prob_table(rng)).holds:
            viol += 1
    failures += viol > 0
    print(f"cil sufficiency bound    {n - viol}/{n} hold  "
          f"[{'ok' if viol == 0 else 'FAIL'}]")

    viol = 0
    for _ in range(n):
        if not check_theorem_dil(random_prob_table(rng, dil=True)).holds:
            viol += 1
    failures += viol > 0
    print(f"dil sufficiency bound    {n - viol}/{n} hold  "
          f"[{'ok' if viol == 0 else 'FAIL'}]")

    viol = skipped = 0
    for _ in range(n):
        table = random_prob_table(rng)
        report = check_necessity(table, xi=10.0)
        if not report.applicable:
            skipped += 1
        elif not report.holds:
            viol += 1
    failures += viol > 0
    print(f"necessity inequalities   {n - skipped - viol}/{n - skipped} hold, "
          f"{skipped} not applicable  [{'ok' if viol == 0 else 'FAIL'}]")

    worst = 0.0
    for _ in range(n):
        worst = max(worst, check_til_reduction(random_prob_table(rng)))
    ok = worst <= 1e-12
    failures += not ok
    print(f"til reduction            max dev {worst:.3e}  "
          f"[{'ok' if ok else 'FAIL'}]")
    return 1 if failures else 0


def _cmd_fewshot(args) -> int:
    import numpy as np

    from .data_io import load_state, synth_episode
    from .engine import FewShotConfig, few_shot_eval
    from .errors import ConfigError

    cfg = _load_config(args)
    state = load_state(_require(cfg, "paths", "state"))
    fs_doc = dict(cfg.fewshot)
    known = {"n_way", "k_shot", "episodes", "query_per_class", "steps",
             "learning_rate", "use_shared_adapter", "episode_adapter"}
    unknown = set(fs_doc) - known
    if unknown:
        raise ConfigError(f"unknown fewshot keys: {sorted(unknown)}")
    n_way = fs_doc.get("n_way", 5)
    k_shot = fs_doc.get("k_shot", 5)
    episodes = fs_doc.get("episodes", 10)
    query = fs_doc.get("query_per_class", 15)
    fs = FewShotConfig(
        steps=fs_doc.get("steps", 150),
        learning_rate=fs_doc.get("learning_rate", 0.05),
        use_shared_adapter=fs_doc.get("use_shared_adapter", True),
        episode_adapter=fs_doc.get("episode_adapter", False))
    spec = cfg.synth_spec()
    accs = []
    for ep in range(episodes):
        # episodes draw unseen classes that share the generated stream's
        # structure (same seed domain as `gen`)
        sx, sy, qx, qy = synth_episode(cfg.seed + ep, spec, n_way, k_shot,
                                       query, stream_seed=cfg.seed)
        accs.append(few_shot_eval(state, sx, sy, qx, qy, fs,
                                  seed=cfg.seed + ep))
        if args.verbose:
            print(json.dumps({"event": "episode", "index": ep,
                              "accuracy": accs[-1]}, sort_keys=True))
    print(json.dumps({"episodes": episodes, "n_way": n_way, "k_shot": k_shot,
                      "mean_accuracy": float(np.mean(accs))}, sort_keys=True))
    return 0


def _render_matrix(doc: dict) -> str:
    rows = doc["matrix"]
    t_final = len(rows)
    width = 7
    lines = ["accuracy matrix (row: after task, column: task)"]
    header = "      " + "".join(f"T{i + 1:<2}".rjust(width) for i in range(t_final))
    lines.append(header)
    for i, row in enumerate(rows):
        cells = "".join(f"{a:.3f}".rjust(width) for a in row)
        lines.append(f"after T{i + 1:<2}".ljust(6 + width - 7) + cells)
    ffm_text = f"{doc['ffm']:.4f}" if doc.get("ffm") is not None else "n/a"
    lines.append(f"faa={doc['faa']:.4f}  caa={doc['caa']:.4f}  ffm={ffm_text}")
    return "\n".join(lines)


def _heatmap_svg(rows: list[list[float]]) -> str:
    cell = 34
    t = len(rows)
    pad = 46
    w = pad + t * cell + 10
    h = pad + t * cell + 10
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
             '<style>text{font:10px monospace}</style>']
    for i in range(t):
        parts.append(f'<text x="{pad + i * cell + 6}" y="{pad - 6}">T{i + 1}</text>')
        parts.append(f'<text x="4" y="{pad + i * cell + 20}">#{i + 1}</text>')
    for r, row in enumerate(rows):
        for c, acc in enumerate(row):
            shade = int(round(235 - 160 * acc))
            color = f"rgb({shade},{int(round(250 - 90 * (1 - acc)))},{shade})"
            x, y = pad + c * cell, pad + r * cell
            parts.append(f'<rect x="{x}" y="{y}" width="{cell - 2}" '
                         f'height="{cell - 2}" fill="{color}"/>')
            parts.append(f'<text x="{x + 2}" y="{y + 20}">{acc:.2f}</text>')
    parts.append("</svg>")
    return "".join(parts)


def _cmd_report(args) -> int:
    with open(args.metrics, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    print(_render_matrix(doc))
    if args.svg:
        with open(args.svg, "w", encoding="utf-8") as fh:
            fh.write(_heatmap_svg(doc["matrix"]))
        print(f"wrote heatmap to {args.svg}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "check-theorems": _cmd_check_theorems,
    "fewshot": _cmd_fewshot,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    if "--deterministic" in argv:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, "1")
    args = build_parser().parse_args(argv)
    from .errors import HiclError

    try:
        return _COMMANDS[args.command](args)
    except HiclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        # downstream closed the pipe (e.g. | head); exit quietly without
        # the interpreter's shutdown traceback
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 1


if __name__ == "__main__":
    sys.exit(main())
