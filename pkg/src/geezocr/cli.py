"""``geezocr`` command line: synth, train-char, train-word, meta-train, evaluate, predict.

Every training command writes a run directory::

    config.txt       resolved key=value settings (including the seed)
    model.json       model family and hyperparameters
    charset.txt      one character per line, index order
    checkpoint.gzoc  final parameters and batch-norm statistics
    log.jsonl        one JSON record per epoch
    metrics.json     metrics on the training data after the final epoch

Flags can also come from ``--config FILE`` (key=value lines, ``#`` comments);
flags given on the command line take precedence over the file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path


from .data import (
    DatasetError,
    LabelCodec,
    PGMError,
    Sample,
    load_dataset,
    read_pgm,
    resize_bilinear,
    synth_generate,
    write_dataset,
)
from .meta import MetaConfig, adaptation_gain, make_tasks, meta_train, word_loss_fn
from .nn import (
    CharCNN,
    CharCNNConfig,
    CheckpointError,
    WordCRNN,
    WordCRNNConfig,
    load_checkpoint,
    load_state,
    save_checkpoint,
)
from .rng import make_rng
from .train import TrainConfig, decode_words, evaluate_char, evaluate_word, predict_char, train_char, train_word


CHECKPOINT = "checkpoint.gzoc"
CHARSET = "charset.txt"


class UsageError(Exception):
    """Bad arguments or inconsistent inputs; reported without a traceback."""


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=42, help="seed for every random stream (default 42)")
    p.add_argument("--config", type=Path, help="key=value file with defaults for any flag")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _training(p: argparse.ArgumentParser, epochs: int, batch: int) -> None:
    p.add_argument("--data", type=Path, required=True, help="dataset directory with labels.tsv")
    p.add_argument("--out", type=Path, required=True, help="run directory to create")
    p.add_argument("--charset", type=Path, help="charset file (default: <data>/charset.txt, else derived from labels)")
    p.add_argument("--num-classes", type=int, help="expected charset size; must match the charset")
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=batch)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--augment", type=_bool, default=False, help="random affine augmentation (true/false)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geezocr", description="Ethiopic handwriting recognition toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic glyph dataset")
    _common(p)
    p.add_argument("--out", type=Path, required=True, help="dataset directory to create")
    p.add_argument("--kind", choices=("char", "word"), default="char")
    p.add_argument("--classes", type=int, default=10, help="number of glyph classes")
    p.add_argument("--per-class", type=int, default=50, help="samples per class (char) or per word (word)")
    p.add_argument("--styles", type=int, default=10, help="number of distinct styles")
    p.add_argument("--style-offset", type=int, default=0, help="index of the first style")
    p.add_argument("--vocab", type=int, default=20, help="vocabulary size in word mode")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-char", help="train the character classifier")
    _common(p)
    _training(p, epochs=20, batch=32)
    p.add_argument("--conv-channels", type=_int_list, default=[32, 64, 128, 256])
    p.add_argument("--fc-units", type=_int_list, default=[512, 256])
    p.add_argument("--dropout", type=float, default=0.5)
    p.set_defaults(func=cmd_train_char)

    p = sub.add_parser("train-word", help="train the word recognizer with CTC")
    _common(p)
    _training(p, epochs=50, batch=8)
    _word_model_flags(p)
    p.set_defaults(func=cmd_train_word)

    p = sub.add_parser("meta-train", help="meta-train the word recognizer over style tasks")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--init", type=Path, help="run directory whose word model is the starting point")
    p.add_argument("--charset", type=Path)
    p.add_argument("--num-classes", type=int)
    _word_model_flags(p)
    d = MetaConfig()
    p.add_argument("--num-tasks", type=int, default=d.num_tasks)
    p.add_argument("--task-size", type=int, default=d.task_size)
    p.add_argument("--support-fraction", type=float, default=d.support_fraction)
    p.add_argument("--inner-steps", type=int, default=d.inner_steps)
    p.add_argument("--alpha", type=float, default=d.alpha, help="inner learning rate")
    p.add_argument("--beta", type=float, default=d.beta, help="outer learning rate")
    p.add_argument("--meta-batch", type=int, default=d.meta_batch)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--mode", choices=("first_order", "second_order"), default=d.mode)
    p.set_defaults(func=cmd_meta_train)

    p = sub.add_parser("evaluate", help="score a trained run on a dataset; prints metrics JSON")
    _common(p)
    p.add_argument("--run", type=Path, required=True, help="run directory from a training command")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--decoder", choices=("greedy", "beam"), default="greedy")
    p.add_argument("--beam-width", type=int, default=10)
    p.add_argument("--output", type=Path, help="also write the JSON here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="print the decoded string for each image")
    _common(p)
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("images", nargs="+", type=Path, help="PGM files")
    p.add_argument("--decoder", choices=("greedy", "beam"), default="greedy")
    p.add_argument("--beam-width", type=int, default=10)
    p.set_defaults(func=cmd_predict)
    return parser


def _word_model_flags(p: argparse.ArgumentParser) -> None:
    d = WordCRNNConfig()
    p.add_argument("--block-channels", type=_int_list, default=d.block_channels)
    p.add_argument("--lstm-hidden", type=int, default=d.lstm_hidden)
    p.add_argument("--lstm-layers", type=int, default=d.lstm_layers)
    p.add_argument("--dropout", type=float, default=d.dropout)


# -- config file and echo ----------------------------------------------------


def read_config_file(path: Path) -> dict[str, str]:
    values = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e.strerror}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _flag_dests(subparser: argparse.ArgumentParser) -> dict[str, argparse.Action]:
    return {a.dest: a for a in subparser._actions if a.option_strings and a.dest not in ("help", "config")}


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = _flag_dests(sub)
    values = read_config_file(args.config)
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise UsageError(f"{args.config}: unknown setting(s) for {args.command}: {', '.join(unknown)}")
    for key, text in values.items():
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            action.default = _bool(text)
        else:
            action.default = text  # converted by argparse like a command-line string
        action.required = False
    return parser.parse_args(argv)


def _echo_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(_echo_value(x) for x in v)
    return str(v)


def echo_config(args: argparse.Namespace, path: Path) -> None:
    """Write every resolved setting as sorted key=value lines."""
    items = {k: v for k, v in vars(args).items() if k not in ("func", "config", "verbose")}
    path.write_text("".join(f"{k}={_echo_value(items[k])}\n" for k in sorted(items)), encoding="utf-8")


# -- shared helpers ----------------------------------------------------------


def _resolve_codec(args, samples) -> LabelCodec:
    path = args.charset or (args.data / CHARSET)
    if path.is_file():
        codec = LabelCodec.load(path)
    elif args.charset is not None:
        raise UsageError(f"charset file {path} does not exist")
    else:
        codec = LabelCodec.from_labels(s.label for s in samples)
    if args.num_classes is not None and args.num_classes != len(codec):
        raise UsageError(f"--num-classes {args.num_classes} contradicts the charset, which has {len(codec)} characters")
    return codec


def _load_training_data(args, image_hw):
    samples = load_dataset(args.data, image_hw=image_hw)
    if not samples:
        raise UsageError(f"{args.data} holds no samples")
    codec = _resolve_codec(args, samples)
    for i, s in enumerate(samples):
        bad = codec.unknown_chars(s.label)
        if bad:
            raise UsageError(f"sample {i} label {s.label!r} uses {bad[0]!r}, which is not in the charset")
    return samples, codec


def _start_run(args) -> Path:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    echo_config(args, out / "config.txt")
    return out


def _log_writer(path: Path):
    fh = path.open("w", encoding="utf-8")

    def write(record: dict) -> None:
        fh.write(json.dumps(record) + "\n")
        fh.flush()

    return fh, write


def _save_model(out: Path, model, params, buffers, codec: LabelCodec) -> None:
    save_checkpoint(params, buffers, out / CHECKPOINT)
    codec.save(out / CHARSET)
    meta = {"kind": model.kind, "config": dataclasses.asdict(model.config)}
    (out / "model.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def load_run(run: Path):
    """(model, params, buffers, codec) from a run directory."""
    try:
        meta = json.loads((run / "model.json").read_text(encoding="utf-8"))
        codec = LabelCodec.load(run / CHARSET)
    except FileNotFoundError as e:
        raise UsageError(f"{run} is not a run directory: missing {Path(e.filename).name}") from None
    kind = meta.get("kind")
    if kind == "char":
        model = CharCNN(CharCNNConfig(**meta["config"]))
    elif kind == "word":
        model = WordCRNN(WordCRNNConfig(**meta["config"]))
    else:
        raise UsageError(f"{run}/model.json names unknown model kind {kind!r}")
    if model.config.num_classes != len(codec):
        raise UsageError(
            f"model expects {model.config.num_classes} classes but {run}/{CHARSET} has {len(codec)} characters"
        )
    params, buffers = load_state(model, load_checkpoint(run / CHECKPOINT))
    return model, params, buffers, codec


def _word_config(args, codec) -> WordCRNNConfig:
    return WordCRNNConfig(
        num_classes=len(codec),
        block_channels=args.block_channels,
        lstm_hidden=args.lstm_hidden,
        lstm_layers=args.lstm_layers,
        dropout=args.dropout,
    )


def _write_metrics(path: Path, report) -> str:
    text = report.to_json() + "\n"
    path.write_text(text, encoding="utf-8")
    return text


# -- commands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    samples, codec = synth_generate(
        args.classes, args.per_class, args.styles, args.kind, args.seed, args.vocab, args.style_offset
    )
    write_dataset(args.out, samples)
    codec.save(args.out / CHARSET)
    echo_config(args, args.out / "config.txt")
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train_char(args) -> int:
    samples, codec = _load_training_data(args, (28, 28))
    model = CharCNN(CharCNNConfig(len(codec), conv_channels=args.conv_channels, fc_units=args.fc_units, dropout_fc=args.dropout))
    out = _start_run(args)
    params, buffers = model.init_params(args.seed), model.init_buffers()
    cfg = TrainConfig(args.epochs, args.batch_size, args.lr, args.augment, args.seed)
    fh, write = _log_writer(out / "log.jsonl")
    with fh:
        train_char(model, params, buffers, samples, codec, cfg, on_epoch=write)
    _save_model(out, model, params, buffers, codec)
    report = evaluate_char(model, params, buffers, samples, codec)
    _write_metrics(out / "metrics.json", report)
    print(f"train accuracy {report.word_accuracy:.4f}")
    return 0


def cmd_train_word(args) -> int:
    samples, codec = _load_training_data(args, (32, 128))
    model = WordCRNN(_word_config(args, codec))
    out = _start_run(args)
    params, buffers = model.init_params(args.seed), model.init_buffers()
    cfg = TrainConfig(args.epochs, args.batch_size, args.lr, args.augment, args.seed)
    fh, write = _log_writer(out / "log.jsonl")
    with fh:
        train_word(model, params, buffers, samples, codec, cfg, on_epoch=write)
    _save_model(out, model, params, buffers, codec)
    report = evaluate_word(model, params, buffers, samples, codec)
    _write_metrics(out / "metrics.json", report)
    print(f"train CER {report.cer:.4f}, word accuracy {report.word_accuracy:.4f}")
    return 0


def cmd_meta_train(args) -> int:
    samples, codec = _load_training_data(args, (32, 128))
    if args.init is not None:
        model, params, buffers, init_codec = load_run(args.init)
        if model.kind != "word":
            raise UsageError(f"{args.init} holds a {model.kind} model; meta-training needs a word model")
        if init_codec != codec:
            raise UsageError(f"charset of {args.init} differs from the dataset charset")
    else:
        model = WordCRNN(_word_config(args, codec))
        params, buffers = model.init_params(args.seed), model.init_buffers()
    cfg = MetaConfig(
        num_tasks=args.num_tasks,
        task_size=args.task_size,
        support_fraction=args.support_fraction,
        inner_steps=args.inner_steps,
        alpha=args.alpha,
        beta=args.beta,
        meta_batch=args.meta_batch,
        epochs=args.epochs,
        mode=args.mode,
    )
    tasks = make_tasks(samples, cfg, make_rng(args.seed, "tasks"))
    out = _start_run(args)
    loss_fn = word_loss_fn(model, buffers, codec)
    fh, write = _log_writer(out / "log.jsonl")
    with fh:
        meta_train(params, tasks, cfg, loss_fn, args.seed, on_epoch=write)
    _save_model(out, model, params, buffers, codec)
    report = evaluate_word(model, params, buffers, samples, codec)
    _write_metrics(out / "metrics.json", report)
    gains = adaptation_gain(model, params, buffers, tasks, codec, cfg, args.seed)
    (out / "adaptation.json").write_text(json.dumps(gains, indent=2) + "\n", encoding="utf-8")
    better = sum(r["cer_after"] < r["cer_before"] for r in gains)
    print(f"train CER {report.cer:.4f}; adaptation lowered query CER on {better}/{len(gains)} tasks")
    return 0


def cmd_evaluate(args) -> int:
    model, params, buffers, codec = load_run(args.run)
    samples = load_dataset(args.data, codec=codec, image_hw=model.config.input_hw)
    if not samples:
        raise UsageError(f"{args.data} holds no samples")
    if model.kind == "char":
        report = evaluate_char(model, params, buffers, samples, codec)
    else:
        report = evaluate_word(model, params, buffers, samples, codec, args.decoder, args.beam_width)
    text = report.to_json() + "\n"
    if args.output is not None:
        args.output.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_predict(args) -> int:
    model, params, buffers, codec = load_run(args.run)
    samples = []
    for path in args.images:
        pixels = read_pgm(path)
        if pixels.mean() > 0.5:
            pixels = 1.0 - pixels
        if pixels.shape != tuple(model.config.input_hw):
            pixels = resize_bilinear(pixels, model.config.input_hw)
        samples.append(Sample(pixels, "", "", ""))
    if model.kind == "char":
        preds = [codec.chars[int(i)] for i in predict_char(model, params, buffers, samples)]
    else:
        preds = decode_words(model, params, buffers, samples, codec, args.decoder, args.beam_width)
    for path, text in zip(args.images, preds):
        print(f"{path}\t{text}")
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(f"geezocr: error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # argparse already printed the diagnostic
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, DatasetError, PGMError, CheckpointError, ValueError, OSError) as e:
        print(f"geezocr: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
