"""Command line for the whole pipeline.

Exit codes: 0 on success, 2 for usage, config, data or checkpoint errors and
3 when training hits a non-finite loss or gradient.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Any

from molang.ablation import TOGGLES, ablation_run, write_ablation
from molang.config import (
    EvalConfig,
    StageConfig,
    merge_config,
    read_config_file,
    write_resolved,
)
from molang.dataset import load_manifest, paired_samples, save_manifest
from molang.evaluation import (
    build_retrieval_questions,
    embed_motions,
    embed_texts,
    eval_recognition,
    eval_retrieval,
    export_embeddings,
    write_recognition_artifacts,
    write_retrieval_artifacts,
)
from molang.exception import (
    MolangConfigException,
    MolangException,
    MolangNumericalException,
)
from molang.model import MoLang, load_model, load_molang
from molang.stage import TrainingStage
from molang.stages import *  # noqa: F403
from molang.synth import SynthSpec, default_spec, synth_generate

if TYPE_CHECKING:
    from collections.abc import Sequence

    from molang.typing import Payload

LOGGER = logging.getLogger("molang")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

STAGE_COMMANDS = {
    "pretrain": "mmp_pretrain",
    "train": "contrastive",
    "finetune": "finetune",
}


def _file_layer(path: str | None, command: str) -> Payload:
    """Top-level keys of the config file, overridden by its command section."""
    data = read_config_file(path)
    sections = {*STAGE_COMMANDS, "eval", "ablate", "embed", "synth"}
    common = {k: v for k, v in data.items() if k not in sections}
    return merge_config(common, data.get(command))


def _stage_flags(args: argparse.Namespace) -> Payload:
    flags: Payload = {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "preset": args.preset,
        "lr": args.lr,
        "train_manifest": args.train,
        "test_manifest": getattr(args, "test", None),
        "out_dir": args.out,
        "init_checkpoint": getattr(args, "ckpt", None),
        "alpha": getattr(args, "alpha", None),
        "tau_init": getattr(args, "tau", None),
    }
    # store_true flags only override when given
    if args.no_gcb:
        flags["gcb"] = False
    if args.no_masking:
        flags["masking"] = False
    if args.resume:
        flags["resume"] = True
    if getattr(args, "no_recon", False):
        flags["cstar_recon"] = False
    if getattr(args, "no_mmp", False):
        flags["mmp_init"] = False
    if getattr(args, "all_frames", False):
        flags["mmp_all_frames"] = True
    if getattr(args, "allow_duplicate_texts", False):
        flags["unique_texts_per_batch"] = False
    return flags


def resolve_stage_config(
    stage: str, command: str, args: argparse.Namespace
) -> StageConfig:
    file_layer = _file_layer(args.config, command)
    options = merge_config(file_layer, _stage_flags(args))
    options.pop("stage", None)
    return StageConfig.for_stage(stage, **options)


def resolve_eval_config(args: argparse.Namespace) -> EvalConfig:
    flags = {
        "task": args.task,
        "checkpoint": args.ckpt,
        "data": args.data,
        "n_labels": args.n_labels,
        "n_questions": args.n_questions,
        "n_candidates": args.n_candidates,
        "seed": args.seed,
        "out_dir": args.out,
    }
    options = merge_config(_file_layer(args.config, "eval"), flags)
    return EvalConfig.from_dict(options)


def cmd_synth(args: argparse.Namespace) -> int:
    if args.spec:
        spec = SynthSpec.from_json(Path(args.spec).read_text())
    else:
        spec = default_spec()
    train, test = synth_generate(spec, args.seed)

    out = Path(args.out)
    save_manifest(train, out / "train.jsonl")
    save_manifest(test, out / "test.jsonl")
    (out / "spec.json").write_text(spec.to_json() + "\n")
    fingerprints = {"train": train.fingerprint, "test": test.fingerprint}
    write_resolved(out, {"seed": args.seed, "spec": args.spec}, fingerprints)

    summary: dict[str, object] = {"train": len(train), "test": len(test)}
    for split, fingerprint in fingerprints.items():
        summary[f"{split}_fingerprint"] = fingerprint
    print(json.dumps(summary))
    return EXIT_OK


def cmd_stage(args: argparse.Namespace) -> int:
    stage = STAGE_COMMANDS[args.command]
    config = resolve_stage_config(stage, args.command, args)
    if not config.train_manifest:
        raise MolangConfigException(f"{args.command} needs --train MANIFEST")

    manifest = load_manifest(config.train_manifest)
    result = TrainingStage.from_config(config, manifest).run()
    loss = result.report.final_loss
    shown = "n/a" if loss is None else f"{loss:.6f}"
    print(f"final loss {shown} checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = resolve_eval_config(args)
    if not config.checkpoint or not config.data:
        raise MolangConfigException("eval needs --ckpt and --data")

    model = load_molang(config.checkpoint)
    manifest = load_manifest(config.data)
    samples = list(paired_samples(manifest))
    out = Path(config.out_dir or Path(config.checkpoint).parent / "eval")

    metrics: dict[str, Any]
    if config.task == "recognition":
        labels = sorted({s.label for s in samples})
        recognition = eval_recognition(
            model, samples, labels, config.batch_size
        )
        write_recognition_artifacts(
            recognition, out, [s.label for s in samples]
        )
        metrics = recognition.to_dict()
    else:
        questions = build_retrieval_questions(
            samples,
            config.n_labels,
            config.n_questions,
            config.seed,
            config.n_candidates,
        )
        retrieval = eval_retrieval(
            model, samples, questions, config.batch_size
        )
        write_retrieval_artifacts(retrieval, questions, out)
        metrics = retrieval.to_dict()

    write_resolved(
        out, {"eval": config.to_dict()}, {"data": manifest.fingerprint}
    )
    (out / f"{config.task}.json").write_text(json.dumps(metrics) + "\n")
    print(json.dumps(metrics))
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    base = resolve_stage_config("contrastive", "ablate", args)
    if not base.train_manifest or not base.test_manifest:
        raise MolangConfigException("ablate needs --train and --test")
    evaluation = EvalConfig(
        n_labels=args.n_labels or 8,
        n_questions=200 if args.n_questions is None else args.n_questions,
        n_candidates=args.n_candidates or 15,
    )
    axes = tuple(a.strip() for a in args.grid.split(",") if a.strip())
    first = base.seed
    seeds = tuple(range(first, first + args.seeds))

    train = load_manifest(base.train_manifest)
    test = load_manifest(base.test_manifest)
    rows = ablation_run(
        base, train, test, evaluation, seeds, args.pretrain_epochs, axes
    )
    path = write_ablation(rows, base.out_dir)
    print((Path(base.out_dir) / "ablation.txt").read_text(), end="")
    LOGGER.info(f"Wrote {path}.")
    return EXIT_OK


def cmd_embed(args: argparse.Namespace) -> int:
    model = load_model(args.ckpt)
    manifest = load_manifest(args.data)
    samples = list(paired_samples(manifest))
    ids = [s.sample_id for s in samples]
    labels = [s.label for s in samples]

    if args.modality == "text":
        if not isinstance(model, MoLang):
            m = f"{args.ckpt} has no text encoder to embed with"
            raise MolangConfigException(m)
        vectors = embed_texts(model, [s.text for s in samples])
    else:
        encoder = model.motion if isinstance(model, MoLang) else model
        vectors = embed_motions(encoder, samples)

    path = export_embeddings(ids, labels, vectors, args.out)
    write_resolved(
        Path(path).parent,
        {"embed": {k: vars(args)[k] for k in ("ckpt", "data", "modality")}},
        {"data": manifest.fingerprint},
    )
    print(json.dumps({"rows": len(ids), "out": str(path)}))
    return EXIT_OK


def _add_stage_arguments(
    parser: argparse.ArgumentParser, command: str
) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--train", help="training manifest")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--preset", choices=("desk", "paper"))
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--lr", type=float, help="peak learning rate")
    parser.add_argument("--no-gcb", action="store_true")
    parser.add_argument("--no-masking", action="store_true")
    parser.add_argument("--resume", action="store_true")
    if command == "pretrain":
        parser.add_argument(
            "--all-frames",
            action="store_true",
            help="score every valid frame, not only masked ones",
        )
        return

    parser.add_argument("--alpha", type=float, help="reconstruction weight")
    parser.add_argument("--tau", type=float, help="initial temperature")
    parser.add_argument("--no-recon", action="store_true")
    parser.add_argument("--allow-duplicate-texts", action="store_true")
    if command == "train":
        parser.add_argument("--motion-ckpt", dest="ckpt")
        parser.add_argument("--no-mmp", action="store_true")
    elif command == "finetune":
        parser.add_argument("--ckpt", help="contrastive-stage checkpoint")
    elif command == "ablate":
        parser.add_argument("--test", help="test manifest")
        parser.add_argument("--grid", default=",".join(TOGGLES))
        parser.add_argument("--seeds", type=int, default=3)
        parser.add_argument("--pretrain-epochs", type=int, default=50)
        _add_retrieval_arguments(parser)


def _add_retrieval_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-labels", type=int)
    parser.add_argument("--n-questions", type=int)
    parser.add_argument("--n-candidates", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="molang")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="generate the synthetic set")
    synth.add_argument("--spec", help="synthetic spec JSON")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.set_defaults(handler=cmd_synth)

    for command in (*STAGE_COMMANDS, "ablate"):
        sub = commands.add_parser(command)
        _add_stage_arguments(sub, command)
        sub.set_defaults(
            handler=cmd_ablate if command == "ablate" else cmd_stage
        )

    evaluate = commands.add_parser("eval")
    evaluate.add_argument("--config")
    evaluate.add_argument("--task", choices=("recognition", "retrieval"))
    evaluate.add_argument("--ckpt")
    evaluate.add_argument("--data")
    evaluate.add_argument("--out")
    evaluate.add_argument("--seed", type=int)
    _add_retrieval_arguments(evaluate)
    evaluate.set_defaults(handler=cmd_eval)

    embed = commands.add_parser("embed")
    embed.add_argument("--ckpt", required=True)
    embed.add_argument("--data", required=True)
    embed.add_argument("--out", required=True)
    embed.add_argument(
        "--modality", choices=("motion", "text"), default="motion"
    )
    embed.set_defaults(handler=cmd_embed)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose > 1 else logging.INFO
    if not args.verbose:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")

    try:
        return args.handler(args)
    except MolangNumericalException as e:
        LOGGER.error(f"numerical failure: {e}")
        return EXIT_NUMERICAL
    except (MolangException, OSError) as e:
        LOGGER.error(str(e))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
