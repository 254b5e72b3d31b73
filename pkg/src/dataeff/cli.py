"""``dataeff`` command line: augment, train, predict, ensemble, synth, score, replay.

Every command writes a JSON run manifest next to its outputs; ``dataeff
replay MANIFEST`` re-executes the recorded command and reproduces the same
bytes.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import (
    parse_config_text,
    train_config_from_mapping,
    train_config_to_mapping,
)
from .ensemble import EnsembleConfig, plurality_vote, tta_predict_many
from .errors import ConfigError, DataEffError
from .formats import (
    load_dataset,
    read_fused,
    read_predictions,
    write_fused,
    write_predictions,
)
from .image import AugmentPolicy, apply_augment, lsb_swap_corpus, read_image, write_image
from .synthetic import make_synthetic, write_dataset
from .trainer import format_log_csv, load_checkpoint, predict, save_checkpoint, train


class CommandError(DataEffError):
    pass


def _write_manifest(path: Path, command: str, argv: Sequence[str], resolved: dict,
                    seed=None, config_file=None, classes=None) -> None:
    manifest = {
        "tool": "dataeff",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "config_file": config_file,
        "resolved": resolved,
        "seed": seed,
        "classes": classes,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _image_sources(root: Path) -> list[Path]:
    if not root.is_dir():
        raise CommandError(f"input directory not found: {root}")
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    files = []
    for d in dirs or [root]:
        files += sorted(p for p in d.iterdir()
                        if p.is_file() and p.suffix.lower() in (".ppm", ".pgm"))
    if not files:
        raise CommandError(f"no .ppm/.pgm images under {root}")
    return files


def cmd_augment(args, argv) -> None:
    src_root, out_root = Path(args.input_dir), Path(args.output_dir)
    paths = _image_sources(src_root)
    images = [read_image(p) for p in paths]
    groups = [p.parent.name for p in paths] if args.same_class else None
    swapped = lsb_swap_corpus(images, args.k, args.pair_seed, groups)
    policy = AugmentPolicy(args.ops_per_image, args.magnitude, args.policy_seed)
    if policy.ops_per_image:
        seeds = [int(np.random.SeedSequence([policy.seed, i]).generate_state(1, np.uint64)[0])
                 for i in range(len(swapped))]
        swapped = [apply_augment(img, AugmentPolicy(policy.ops_per_image, policy.magnitude, s))
                   for img, s in zip(swapped, seeds)]
    suffix = args.suffix if args.suffix is not None else f"_lsb{args.k}"
    out_root.mkdir(parents=True, exist_ok=True)
    for path, original, img in zip(paths, images, swapped):
        rel = path.relative_to(src_root)
        dest = out_root / rel.parent
        dest.mkdir(parents=True, exist_ok=True)
        if args.mode == "offline":
            write_image(dest / rel.name, original)
        write_image(dest / f"{path.stem}{suffix}{path.suffix}", img)
    resolved = {"k": args.k, "mode": args.mode, "pair_seed": args.pair_seed,
                "same_class": args.same_class, "suffix": suffix,
                "ops_per_image": policy.ops_per_image, "magnitude": policy.magnitude,
                "policy_seed": policy.seed, "inputs": [str(p.relative_to(src_root)) for p in paths]}
    _write_manifest(out_root / "manifest.json", "augment", argv, resolved, seed=args.pair_seed)


def cmd_train(args, argv) -> None:
    config_path = Path(args.config_file)
    try:
        mapping = parse_config_text(config_path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        mapping[key.strip()] = value.strip()
    cfg = train_config_from_mapping(mapping)
    data = load_dataset(args.data_dir)
    if data.labels is None:
        raise CommandError(f"{args.data_dir} has no class subdirectories")
    params, ema, log = train(data.images, data.labels, cfg, num_classes=len(data.classes))
    resolved = train_config_to_mapping(cfg)
    out = Path(args.out_checkpoint)
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = {"classes": data.classes, "input_shape": list(data.images[0].shape),
            "version": __version__}
    save_checkpoint(out, params, ema, resolved, meta)
    Path(f"{out}.log.csv").write_text(format_log_csv(log))
    _write_manifest(Path(f"{out}.manifest.json"), "train", argv, resolved,
                    seed=cfg.seed, config_file=str(config_path), classes=data.classes)
    if log:
        last = log[-1]
        print(f"epoch {last.epoch}: loss {last.mean_loss:.6f} train-accuracy "
              f"{last.train_accuracy:.4f}", file=sys.stderr)


def cmd_predict(args, argv) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data_dir)
    train_cfg = ckpt.config
    policy = AugmentPolicy(
        train_cfg["ops_per_image"] if args.ops_per_image is None else args.ops_per_image,
        train_cfg["magnitude"] if args.magnitude is None else args.magnitude,
        train_cfg["augment_seed"] if args.policy_seed is None else args.policy_seed,
    )
    model = ckpt.ema if args.weights == "ema" else ckpt.params
    items = list(zip(data.item_ids, data.images))
    if args.tta > 0:
        records = tta_predict_many(model, items, policy, args.tta)
    else:
        records = predict(model, items)
    out = Path(args.out_csv)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(out, records)
    resolved = {"tta": args.tta, "weights": args.weights,
                "ops_per_image": policy.ops_per_image, "magnitude": policy.magnitude,
                "policy_seed": policy.seed}
    _write_manifest(Path(f"{out}.manifest.json"), "predict", argv, resolved,
                    seed=policy.seed, classes=ckpt.meta.get("classes"))


def _model_ids(paths: Sequence[str]) -> list[str]:
    stems = [Path(p).stem for p in paths]
    return stems if len(set(stems)) == len(stems) else list(paths)


def cmd_ensemble(args, argv) -> None:
    ids = _model_ids(args.predictions)
    models = {}
    for model_id, path in zip(ids, args.predictions):
        models[model_id] = read_predictions(path)
    num_classes = {len(recs[0].probs) for recs in models.values() if recs}
    if len(num_classes) > 1:
        raise CommandError(f"prediction files disagree on the class count: {sorted(num_classes)}")
    base = args.base if args.base is not None else ids[0]
    if base not in models:
        matches = [i for i, p in zip(ids, args.predictions) if p == base or Path(p).stem == base]
        if len(matches) != 1:
            raise CommandError(f"--base {base!r} does not name one of the prediction files")
        base = matches[0]
    cfg = EnsembleConfig(base_model_id=base, threshold=args.threshold)
    fused = plurality_vote(models, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_fused(out, fused)
    resolved = {"base_model_id": base, "threshold": cfg.threshold,
                "tie_break": list(cfg.tie_break), "models": ids}
    _write_manifest(Path(f"{out}.manifest.json"), "ensemble", argv, resolved)


def cmd_synth(args, argv) -> None:
    images, labels = make_synthetic(args.classes, args.per_class, args.size, args.seed,
                                    args.noise, args.distractor, args.prototype_seed)
    out = Path(args.output_dir)
    if out.exists() and any(out.iterdir()):
        raise CommandError(f"output directory is not empty: {out}")
    write_dataset(out, images, labels)
    resolved = {k: getattr(args, k) for k in
                ("output_dir", "classes", "per_class", "size", "seed", "noise", "distractor",
                 "prototype_seed")}
    _write_manifest(out / "manifest.json", "synth", argv, resolved, seed=args.seed)


def cmd_score(args, argv) -> None:
    data = load_dataset(args.data_dir)
    if data.labels is None:
        raise CommandError(f"{args.data_dir} has no class subdirectories")
    truth = dict(zip(data.item_ids, data.labels.tolist()))
    with open(args.csv) as fh:
        header = fh.readline()
    if header.startswith("item_id,predicted_class"):
        pairs = [(r.item_id, r.predicted_class) for r in read_fused(args.csv)]
    else:
        pairs = [(r.item_id, r.predicted_class) for r in read_predictions(args.csv)]
    missing = [i for i, _ in pairs if i not in truth]
    if missing:
        raise CommandError(f"{len(missing)} predicted items are not in {args.data_dir}, e.g. {missing[0]!r}")
    hits = sum(truth[i] == c for i, c in pairs)
    print(f"{hits / len(pairs):.6f}")


def cmd_replay(args, argv) -> None:
    manifest = json.loads(Path(args.manifest).read_text())
    if manifest.get("tool") != "dataeff" or "argv" not in manifest:
        raise CommandError(f"{args.manifest} is not a dataeff manifest")
    if manifest["command"] == "synth":
        out = Path(manifest["resolved"]["output_dir"])
        if out.exists():
            shutil.rmtree(out)
    code = main(manifest["argv"])
    if code:
        raise CommandError(f"replayed command exited with status {code}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dataeff", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dataeff {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def policy_flags(p, defaults=(None, None, None)):
        p.add_argument("--ops-per-image", type=int, default=defaults[0])
        p.add_argument("--magnitude", type=float, default=defaults[1])
        p.add_argument("--policy-seed", type=int, default=defaults[2])

    p = sub.add_parser("augment", help="LSB-swap (and optionally augment) an image corpus")
    p.add_argument("input_dir")
    p.add_argument("output_dir")
    p.add_argument("--k", type=int, default=2, help="low bits exchanged per sample")
    p.add_argument("--mode", choices=("pair-seed", "offline"), default="pair-seed",
                   help="pair-seed writes only swapped images; offline also keeps the originals")
    p.add_argument("--pair-seed", type=int, default=0)
    p.add_argument("--same-class", action="store_true", help="pair images only within a class")
    p.add_argument("--suffix", default=None, help="file-name suffix (default _lsb<k>)")
    policy_flags(p, defaults=(0, 0.5, 0))
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train a classifier from a class-per-directory corpus")
    p.add_argument("data_dir")
    p.add_argument("config_file")
    p.add_argument("out_checkpoint")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config-file key (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write a probability CSV for a corpus")
    p.add_argument("checkpoint")
    p.add_argument("data_dir")
    p.add_argument("out_csv")
    p.add_argument("--tta", type=int, default=0, help="TTA replicates (0 = plain predict)")
    p.add_argument("--weights", choices=("ema", "raw"), default="ema")
    policy_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ensemble", help="fuse prediction CSVs by thresholded plurality voting")
    p.add_argument("predictions", nargs="+")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--base", default=None, help="base model id (file stem); default: first file")
    p.add_argument("--threshold", type=float, default=0.7)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("synth", help="write a seeded synthetic corpus")
    p.add_argument("output_dir")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prototype-seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=30.0)
    p.add_argument("--distractor", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("score", help="accuracy of a prediction or ensemble CSV")
    p.add_argument("csv")
    p.add_argument("data_dir")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        args.func(args, argv)
    except (DataEffError, OSError, ValueError, KeyError) as exc:
        print(f"dataeff {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
