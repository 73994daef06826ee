"""Command line entry point: ``mcpt {synth,mdc,pretrain,finetune,eval,export}``.

Exit codes: 0 success, 1 invalid input (nothing written), 2 failure during the run
(the output directory then holds a ``FAILED`` marker next to any partial files).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import imaging, pipeline
from .aft import write_token_energy_csv
from .evaluation import evaluate, write_embeddings_csv
from .mdc import DiscrepancyCurve, build_mdc_masks, compute_mdc, write_curves_csv
from .pipeline import Ablation, Checkpoint, ConfigError, RunConfig
from .tensor import load_tensors, save_tensors

log = logging.getLogger("mcpt")

FINETUNE_NOTE = "fine-tuning uses a prototype-classifier approximation of the ProtoGCD objective"


class UsageError(Exception):
    """Bad arguments or inputs; reported with exit code 1 before anything is written."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _override(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected path=value, got {text!r}")
    path, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path.strip(), value


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file (sections data, encoder, aft, fer, loss, schedule, ablation, seed)")
    common.add_argument("--seed", type=int, help="run seed; overrides the config value")
    common.add_argument("--set", dest="overrides", action="append", type=_override, default=[], metavar="PATH=VALUE",
                        help="override one config entry, e.g. --set schedule.pretrain.epochs=5 (repeatable)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = _Parser(prog="mcpt", description="MDC-guided cross-modal prior transfer for SAR category discovery.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic paired corpus and a GCD corpus")
    p.add_argument("--out", type=Path, required=True, help="output directory (pairs.json, classes.json, PNGs)")

    p = sub.add_parser("mdc", parents=[common], help="compute discrepancy curves for a paired corpus")
    p.add_argument("--pairs", type=Path, required=True, help="pair manifest (JSON)")
    p.add_argument("--bands", type=int, help="number of MDC bands (default: data.mdc_bands)")
    p.add_argument("--out", type=Path, required=True, help="curve CSV")

    p = sub.add_parser("pretrain", parents=[common], help="paired contrastive pretraining")
    p.add_argument("--pairs", type=Path, help="pair manifest; default: synthetic corpus from the config")
    p.add_argument("--ablation", choices=sorted(Ablation.ROWS), help="ablation row a-f (sets the component flags)")
    p.add_argument("--init-checkpoint", type=Path, help="tensor container with starting weights (partial allowed)")
    p.add_argument("--out", type=Path, required=True, help="run directory")

    p = sub.add_parser("finetune", parents=[common], help="GCD fine-tuning from a stripped checkpoint")
    p.add_argument("--checkpoint", type=Path, help="stripped pretrain checkpoint; omit to start from random init")
    p.add_argument("--classes", type=Path, help="class manifest; default: synthetic GCD corpus from the config")
    p.add_argument("--ablation", choices=sorted(Ablation.ROWS), help="ablation row a-f (recorded in the config)")
    p.add_argument("--out", type=Path, required=True, help="run directory")

    p = sub.add_parser("eval", parents=[common], help="score a fine-tuned checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True, help="fine-tune checkpoint (with prototypes)")
    p.add_argument("--classes", type=Path, help="class manifest; default: synthetic GCD corpus from the config")
    p.add_argument("--protocol", choices=["transductive", "inductive"], default="transductive")
    p.add_argument("--out", type=Path, required=True, help="report JSON; embeddings go next to it")

    p = sub.add_parser("export", parents=[common], help="re-emit stored artifacts as CSV")
    p.add_argument("--what", choices=["curves", "tokens", "embeddings"], required=True)
    p.add_argument("--from", dest="source", type=Path, required=True,
                   help="artifact container: <run>/artifacts.mcpt (curves, tokens) or <report>.embeddings.mcpt")
    p.add_argument("--out", type=Path, required=True, help="CSV path")
    return parser


# ---------------------------------------------------------------------------
# helpers


def _resolve_config(args, base: RunConfig | None = None) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(("seed", args.seed))
    if getattr(args, "ablation", None):
        for name, on in zip(Ablation.ORDER, Ablation.ROWS[args.ablation]):
            overrides.append((f"ablation.{name}", on))
    if args.config is not None and not args.config.exists():
        raise UsageError(f"config file {args.config} not found")
    if base is None:
        config = pipeline.load_config(args.config, overrides)
    else:
        d = base.to_dict()
        if args.config is not None:
            pipeline._merge(d, json.loads(args.config.read_text()), "")
        for path, value in overrides:
            pipeline.apply_override(d, path, value)
        config = RunConfig.from_dict(d)
    log.info("resolved config (flags > file > defaults):\n%s", config.to_json())
    return config


def _require(path: Path | None, what: str) -> None:
    if path is not None and not path.exists():
        raise UsageError(f"{what} {path} not found")


def _load_checkpoint(path: Path) -> Checkpoint:
    _require(path, "checkpoint")
    try:
        return Checkpoint.load(path)
    except (ValueError, OSError) as e:
        raise UsageError(f"cannot read checkpoint {path}: {e}") from e


def _class_split(config: RunConfig, manifest: Path | None):
    if manifest is None:
        return pipeline.synthetic_data(config)[1]
    train, test = imaging.read_class_manifest(manifest)
    return pipeline.gcd_split(config, train, test)


def _jsonl_writer(path: Path):
    fh = open(path, "w")

    def write(rec):
        fh.write(json.dumps(rec, sort_keys=True) + "\n")

    return fh, write


def _prepare_out_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    marker = path / "FAILED"
    if marker.exists():
        marker.unlink()
    return path


def _curve_tensors(curves) -> dict:
    return {
        "curves.centers": torch.as_tensor(np.stack([c.centers for c in curves])),
        "curves.ratios": torch.as_tensor(np.stack([c.ratios for c in curves])),
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> None:
    config = _resolve_config(args)
    _prepare_out_dir(args.out)
    pairs, split = pipeline.synthetic_data(config)
    imaging.write_pair_corpus(args.out, pairs)
    train = split.labeled + split.unlabeled
    train.sort(key=lambda s: s.sample_id)
    imaging.write_class_corpus(args.out, train, split.test)
    (args.out / "config.json").write_text(config.to_json())
    log.info("wrote %d pairs and %d/%d class samples to %s", len(pairs), len(train), len(split.test), args.out)


def cmd_mdc(args) -> None:
    config = _resolve_config(args)
    _require(args.pairs, "pair manifest")
    bands = args.bands if args.bands is not None else config.data.mdc_bands
    if bands < 2:
        raise UsageError("--bands must be >= 2")
    pairs = imaging.read_pair_manifest(args.pairs)
    if not pairs:
        raise UsageError("pair manifest is empty")
    h, w = pairs[0].eo.shape[:2]
    masks = build_mdc_masks(bands, h, w)
    rows = [(p.pair_id, compute_mdc(p, masks)) for p in pairs]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_curves_csv(args.out, rows)
    log.info("wrote %d curves x %d bands to %s", len(rows), bands, args.out)


def cmd_pretrain(args) -> None:
    config = _resolve_config(args)
    if not config.ablation.mcpt:
        raise UsageError("ablation row without mcpt skips pretraining; run finetune without --checkpoint")
    _require(args.pairs, "pair manifest")
    _require(args.init_checkpoint, "init checkpoint")
    pairs = imaging.read_pair_manifest(args.pairs) if args.pairs else pipeline.synthetic_data(config)[0]
    if not pairs:
        raise UsageError("paired corpus is empty")
    init = load_tensors(args.init_checkpoint) if args.init_checkpoint else None

    out = _prepare_out_dir(args.out)
    (out / "config.json").write_text(config.to_json())
    fh, write = _jsonl_writer(out / "pretrain_log.jsonl")
    try:
        result = pipeline.pretrain(config, pairs, log_fn=write, dump_dir=out, init_state=init)
    finally:
        fh.close()
    result.checkpoint.save(out / "pretrain.mcpt")
    result.inference_checkpoint.save(out / "pretrain_inference.mcpt")
    curves = pipeline.corpus_curves(pairs, config.data.mdc_bands, config.data.curve_source)
    artifacts = _curve_tensors(curves)
    meta = {"curve_pair_ids": [p.pair_id for p in pairs], "token_pair_ids": result.token_pair_ids}
    if result.token_energy is not None:
        artifacts["tokens.energy"] = result.token_energy.double()
    save_tensors(out / "artifacts.mcpt", artifacts)
    pipeline.sidecar(out / "artifacts.mcpt").write_text(json.dumps(meta, indent=1))
    log.info("pretrain epoch losses: first %.4f last %.4f", result.epoch_losses[0], result.epoch_losses[-1])


def cmd_finetune(args) -> None:
    config = _resolve_config(args)
    _require(args.classes, "class manifest")
    init = _load_checkpoint(args.checkpoint) if args.checkpoint else None
    if init is not None and pipeline.has_auxiliary_tensors(init.model_state):
        raise UsageError("checkpoint still holds AFT/FER tensors; use the stripped pretrain_inference checkpoint")
    split = _class_split(config, args.classes)
    log.info(FINETUNE_NOTE)

    out = _prepare_out_dir(args.out)
    (out / "config.json").write_text(config.to_json())
    fh, write = _jsonl_writer(out / "finetune_log.jsonl")
    try:
        result = pipeline.finetune(config, init, split, log_fn=write)
    finally:
        fh.close()
    result.checkpoint.save(out / "finetune.mcpt")


def cmd_eval(args) -> None:
    ckpt = _load_checkpoint(args.checkpoint)
    if ckpt.prototypes is None or "config" not in ckpt.meta:
        raise UsageError(f"{args.checkpoint} is not a fine-tune checkpoint (no prototypes or config)")
    config = _resolve_config(args, base=ckpt.config())
    _require(args.classes, "class manifest")
    split = _class_split(config, args.classes)
    model, prototypes = pipeline.load_finetuned(ckpt)

    args.out.parent.mkdir(parents=True, exist_ok=True)
    report, z, samples = evaluate(model, prototypes, split, args.protocol)
    args.out.write_text(report.to_json())
    emb = args.out.with_name(args.out.stem + ".embeddings.mcpt")
    save_tensors(emb, {"embeddings": torch.as_tensor(z)})
    pipeline.sidecar(emb).write_text(json.dumps({
        "sample_ids": [s.sample_id for s in samples],
        "labels": [int(s.class_id) for s in samples],
        "old_classes": sorted(split.old_classes),
    }, indent=1))
    log.info("%s: All %.2f Old %.2f New %.2f (%s)", args.protocol, report.all, report.old, report.new, FINETUNE_NOTE)


def cmd_export(args) -> None:
    _require(args.source, "artifact container")
    tensors = load_tensors(args.source)
    meta_path = pipeline.sidecar(args.source)
    if not meta_path.exists():
        raise UsageError(f"{meta_path} not found")
    meta = json.loads(meta_path.read_text())
    args.out.parent.mkdir(parents=True, exist_ok=True)
    if args.what == "curves":
        if "curves.ratios" not in tensors:
            raise UsageError(f"{args.source} holds no curves")
        centers, ratios = tensors["curves.centers"].numpy(), tensors["curves.ratios"].numpy()
        rows = [(pid, DiscrepancyCurve(c, r)) for pid, c, r in zip(meta["curve_pair_ids"], centers, ratios)]
        write_curves_csv(args.out, rows)
    elif args.what == "tokens":
        if "tokens.energy" not in tensors:
            raise UsageError(f"{args.source} holds no token energies")
        write_token_energy_csv(args.out, meta["token_pair_ids"], tensors["tokens.energy"])
    else:
        if "embeddings" not in tensors:
            raise UsageError(f"{args.source} holds no embeddings")
        samples = [imaging.Sample(sid, np.zeros((1, 1, 1)), lab) for sid, lab in zip(meta["sample_ids"], meta["labels"])]
        write_embeddings_csv(args.out, samples, tensors["embeddings"].numpy(), set(meta["old_classes"]))


COMMANDS = {
    "synth": cmd_synth,
    "mdc": cmd_mdc,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "export": cmd_export,
}


def _run_dir(args) -> Path | None:
    if args.command in ("synth", "pretrain", "finetune"):
        return args.out
    return None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - any failure past validation is a runtime failure
        print(f"run failed: {type(e).__name__}: {e}", file=sys.stderr)
        run_dir = _run_dir(args)
        if run_dir is not None and run_dir.is_dir():
            (run_dir / "FAILED").write_text(f"{type(e).__name__}: {e}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
