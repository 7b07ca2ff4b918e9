"""Command line entry point: ``encbridge <command> ...`` or ``python -m encbridge``.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage error.
Outputs land in ``<root>/<name>/`` where ``root`` is ``--out-root``, else
``$ENCBRIDGE_RUN_ROOT``, else ``run``.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
from pathlib import Path

from . import analysis
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .data import TASKS, Vocab, gen_held_out, gen_synthetic, load_tsv, task_vocab
from .eval import BleuReport, evaluate
from .experiments import MissingBaseCheckpoint, experiment_config, workflow_experiment, write_report_csv
from .gradcheck import gradcheck_model, tiny_config
from .init import VARIANTS
from .model import ModelConfig
from .train import TrainConfig, TrainingHalted, write_loss_csv

log = logging.getLogger("encbridge")

ENV_ROOT = "ENCBRIDGE_RUN_ROOT"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config files


def read_kv_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = raw  # argparse applies ``type`` to string defaults
    parser.set_defaults(**defaults)


# ---------------------------------------------------------------- parser


def _add_data_args(p):
    g = p.add_argument_group("data")
    g.add_argument("--data", default="subst",
                   help=f"synthetic task ({', '.join(TASKS)}) or a two-column TSV file")
    g.add_argument("--eval-data", help="TSV of held-out pairs (default: tail of --data)")
    g.add_argument("--n-pairs", type=int, default=5000)
    g.add_argument("--eval-pairs", type=int, default=500)
    g.add_argument("--data-seed", type=int, default=1)
    g.add_argument("--len-min", type=int, default=3)
    g.add_argument("--len-max", type=int, default=10)


def _add_run_args(p):
    p.add_argument("--config", help="key = value file; command line flags win")
    p.add_argument("--name", help="run directory name")
    p.add_argument("--out-root", help=f"output root (default ${ENV_ROOT} or ./run)")


def _add_train_args(p):
    g = p.add_argument_group("training")
    g.add_argument("--steps", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int, default=16)
    g.add_argument("--lr", type=float, default=3e-4)
    g.add_argument("--clip-norm", type=float, default=1.0)
    g.add_argument("--warmup-steps", type=int, default=0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--log-every", type=int, default=1)
    g.add_argument("--bridge-init", choices=VARIANTS + ("none",))
    g.add_argument("--body-init", choices=("xavier", "ones"))
    g.add_argument("--freeze-base", action="store_true")
    m = p.add_argument_group("model (retrain only)")
    m.add_argument("--d-model", type=int, default=64)
    m.add_argument("--n-heads", type=int, default=4)
    m.add_argument("--d-ff", type=int, default=128)
    m.add_argument("--n-enc-layers", type=int, default=4)
    m.add_argument("--n-dec-layers", type=int, default=4)
    m.add_argument("--max-seq-len", type=int, default=16)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="encbridge", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from scratch (retrain workflow)")
    _add_run_args(p), _add_data_args(p), _add_train_args(p)

    p = sub.add_parser("finetune", help="attach a bridge to a base checkpoint and keep training")
    _add_run_args(p), _add_data_args(p), _add_train_args(p)
    p.add_argument("--base", required=True, help="base checkpoint")

    p = sub.add_parser("experiment", help="run experiment 0-4 and write a report row")
    _add_run_args(p), _add_data_args(p), _add_train_args(p)
    p.add_argument("--id", type=int, required=True, choices=range(5))
    p.add_argument("--base", help="base checkpoint (required for ids 1-3)")

    p = sub.add_parser("eval", help="print evaluate loss and BLEU of a checkpoint")
    _add_run_args(p), _add_data_args(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("analyze", help="bridge block-norm heatmaps and drift")
    _add_run_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--baseline", help="checkpoint to measure drift against")
    p.add_argument("--raw", action="store_true", help="also export raw bridge matrices as PGM")
    p.add_argument("--upscale", type=int, default=16, help="pixels per heatmap cell")

    p = sub.add_parser("gradcheck", help="autograd vs central differences on a tiny bridged model")
    _add_run_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e-4)

    p = sub.add_parser("rerun", help="replay the command recorded in a run manifest")
    p.add_argument("manifest")
    p.add_argument("--name", help="write into a different run directory")
    p.add_argument("--out-root")
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        try:
            _apply_config(sub, read_kv_config(args.config))
        except (OSError, UsageError) as exc:
            parser.error(str(exc))
        args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------- helpers


def run_dir(args) -> Path:
    root = Path(args.out_root or os.environ.get(ENV_ROOT, "run"))
    name = args.name or (f"experiment-{args.id}" if args.command == "experiment" else args.command)
    return root / name


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat()


def write_manifest(out: Path, args: argparse.Namespace, argv) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    resolved = {k: v for k, v in vars(args).items() if k not in ("config",)}
    resolved.update(out_root=str(out.parent), name=out.name)
    manifest = {
        "argv": list(argv),
        "args": resolved,
        "seed": getattr(args, "seed", None),
        "started": _now(),
        "outputs": str(out),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _finish_manifest(path: Path, **extra) -> None:
    manifest = json.loads(path.read_text())
    manifest.update(finished=_now(), **extra)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_pairs(args, vocab: Vocab | None = None):
    """(train pairs, held-out pairs, vocab) for a synthetic task or TSV corpus."""
    if args.data in TASKS:
        rng = (args.len_min, args.len_max)
        train = gen_synthetic(args.data, args.n_pairs, args.data_seed, rng)
        held = gen_held_out(args.data, args.eval_pairs, args.data_seed + 1, train, rng)
        v = task_vocab(args.data)
    else:
        path = Path(args.data)
        if not path.is_file():
            raise UsageError(f"--data: no such task or file: {args.data}")
        train = load_tsv(path)
        if args.eval_data:
            held = load_tsv(args.eval_data)
        else:
            k = min(args.eval_pairs, len(train) // 2)
            train, held = train[:len(train) - k], train[len(train) - k:]
        v = Vocab.build(train)
    if vocab is not None:
        if args.data in TASKS and v != vocab:
            raise UsageError(f"task {args.data!r} vocabulary does not match the checkpoint's")
        v = vocab
    return train, held, v


def _load_ckpt(path) -> Checkpoint:
    if not Path(path).is_file():
        raise UsageError(f"no such checkpoint: {path}")
    return load_checkpoint(path)


def _model_config(args, vocab: Vocab) -> ModelConfig:
    return ModelConfig(vocab_size=len(vocab), d_model=args.d_model, n_heads=args.n_heads,
                       d_ff=args.d_ff, n_enc_layers=args.n_enc_layers,
                       n_dec_layers=args.n_dec_layers, max_seq_len=args.max_seq_len,
                       pad_id=vocab.pad_id, bos_id=vocab.bos_id, eos_id=vocab.eos_id)


def _train_config(args, mode: str, exp_id: int | None) -> TrainConfig:
    overrides = {}
    if args.bridge_init is not None:
        overrides["bridge_init"] = None if args.bridge_init == "none" else args.bridge_init
    if args.body_init is not None:
        overrides["body_init"] = args.body_init
    if args.steps is not None and args.epochs is not None:
        raise UsageError("--steps and --epochs are mutually exclusive")
    steps = 2000 if args.steps is None and args.epochs is None else args.steps
    base = TrainConfig(
        mode=mode, steps=steps, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        clip_norm=args.clip_norm, warmup_steps=args.warmup_steps, seed=args.seed,
        log_every=args.log_every, freeze_base=args.freeze_base,
    )
    if exp_id is None:
        exp_id = 0 if mode == "retrain" else 2
        overrides["mode"] = mode
    return experiment_config(exp_id, base, **overrides)


def _write_heatmaps(out: Path, name: str, values, upscale: int) -> None:
    d = out / name
    d.mkdir(parents=True, exist_ok=True)
    analysis.export_heatmap(values, d / f"{name}.csv", "csv")
    analysis.export_heatmap(values, d / f"{name}.pgm", "pgm", upscale)


# ---------------------------------------------------------------- commands


def cmd_train(args, argv) -> int:
    exp_id = args.id if args.command == "experiment" else None
    mode = {"train": "retrain", "finetune": "finetune"}.get(args.command)
    if exp_id is not None:
        if exp_id in (1, 2, 3) and not args.base:
            raise UsageError(f"experiment {exp_id} requires --base (a checkpoint from experiment 0)")
        mode = experiment_config(exp_id).mode
    cfg = _train_config(args, mode, exp_id)
    base = _load_ckpt(args.base) if getattr(args, "base", None) else None
    if cfg.mode == "retrain":
        base = None
    train, held, vocab = load_pairs(args, base.get_vocab() if base else None)
    out = run_dir(args)
    manifest = write_manifest(out, args, argv)
    model_config = None if base else _model_config(args, vocab)
    log.info("%s: %d training pairs, %d held out, %s", args.command, len(train), len(held), cfg)
    try:
        report = workflow_experiment(exp_id if exp_id is not None else 0, train, held, vocab,
                                     base=base, model_config=model_config, train_config=cfg)
    except TrainingHalted as exc:
        write_loss_csv(exc.losses, out / "loss.csv", cfg.log_every)
        save_checkpoint(exc.checkpoint, out / "ckpt" / "halted.ckpt")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    result = report.result
    write_loss_csv(result.losses, out / "loss.csv", cfg.log_every)
    save_checkpoint(result.checkpoint, out / "ckpt" / "final.ckpt")
    row = report.row()
    if exp_id is None:
        row["experiment"] = args.command
    write_report_csv([row], out / "report.csv")
    if report.final_norms is not None:
        hm = out / "heatmaps"
        _write_heatmaps(hm, "initial", report.initial_norms.values, 16)
        _write_heatmaps(hm, "block_norms", report.final_norms.values, 16)
        _write_heatmaps(hm, "drift", report.drift, 16)
    print((out / "report.csv").read_text(), end="")
    _finish_manifest(manifest, bleu=report.bleu, evaluate_loss=report.evaluate_loss)
    return 0


def cmd_eval(args, argv) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    out = run_dir(args)
    manifest = write_manifest(out, args, argv)
    _, held, vocab = load_pairs(args, ckpt.get_vocab())
    loss, bleu = evaluate(ckpt.to_model(), held, vocab)
    print("evaluate_loss,bleu")
    print(f"{loss!r},{bleu.bleu!r}")
    (out / "bleu.csv").write_text(BleuReport.CSV_HEADER + "\n" + bleu.csv_row() + "\n")
    _finish_manifest(manifest, bleu=bleu.bleu, evaluate_loss=loss)
    return 0


def cmd_analyze(args, argv) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    if not ckpt.has_bridge:
        raise RuntimeError(f"{args.checkpoint} has no bridge weights to analyze")
    baseline = _load_ckpt(args.baseline) if args.baseline else None
    out = run_dir(args)
    manifest = write_manifest(out, args, argv)
    hm = out / "heatmaps"
    norms = analysis.block_norms(ckpt.bridge_arrays(), ckpt.config, ckpt.step)
    _write_heatmaps(hm, "block_norms", norms.values, args.upscale)
    if baseline is not None:
        if not baseline.has_bridge:
            raise RuntimeError(f"{args.baseline} has no bridge weights to compare against")
        _write_heatmaps(hm, "drift", analysis.weight_drift(baseline.bridge_arrays(),
                                                           ckpt.bridge_arrays()), args.upscale)
    if args.raw:
        raw = hm / "raw"
        raw.mkdir(parents=True, exist_ok=True)
        for i, w in enumerate(ckpt.bridge_arrays()):
            sub = raw / f"dec{i}"
            sub.mkdir(exist_ok=True)
            analysis.export_raw_matrix(w, sub / f"bridge{i}.pgm")
    print((hm / "block_norms" / "block_norms.csv").read_text(), end="")
    _finish_manifest(manifest)
    return 0


def cmd_gradcheck(args, argv) -> int:
    out = run_dir(args)
    manifest = write_manifest(out, args, argv)
    report = gradcheck_model(tiny_config(), seed=args.seed, threshold=args.threshold)
    for name, err in report.errors.items():
        log.info("%-32s %.3e", name, err)
    status = "PASS" if report.passed else "FAIL"
    print(f"{status} max relative error {report.max_error:.3e} ({report.worst}), "
          f"threshold {args.threshold:g}")
    _finish_manifest(manifest, max_relative_error=report.max_error, passed=report.passed)
    return 0 if report.passed else 1


def cmd_rerun(args, argv) -> int:
    path = Path(args.manifest)
    if not path.is_file():
        raise UsageError(f"no such manifest: {path}")
    recorded = json.loads(path.read_text())["args"]
    ns = argparse.Namespace(config=None, **recorded)
    if args.name:
        ns.name = args.name
    if args.out_root:
        ns.out_root = args.out_root
    return COMMANDS[ns.command](ns, argv)


COMMANDS = {
    "train": cmd_train,
    "finetune": cmd_train,
    "experiment": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
    "rerun": cmd_rerun,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args, argv)
    except (UsageError, MissingBaseCheckpoint) as exc:
        print(f"encbridge {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, RuntimeError, ValueError, FloatingPointError, OSError) as exc:
        print(f"encbridge {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
