"""``beam`` command: synth, preprocess, augment, train, eval, ablate, gradcheck, verify.

Exit status is 0 on success, 1 on a validation error (bad flags, malformed
input, refused overwrite, failed checks) and 2 on a runtime failure.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import gradcheck, synthgen
from .augment import AugmentConfig, balance
from .eeg_io import View, read_manifest, read_recording, write_manifest
from .encoder import EncoderConfig
from .preprocess import (PreprocessConfig, cohort_labels, preprocess_recording, read_sample_dataset,
                         sample_file_info, write_samples)
from .trainer import (Arm, TrainConfig, TrainingDiverged, ablate, ablation_lines, ablation_table, evaluate,
                      load_model, save_trained, train)

log = logging.getLogger("beam")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _band(text: str) -> tuple[float, float]:
    try:
        low, high = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"band must look like LOW:HIGH, got {text!r}") from None
    return low, high


def _seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None


def _fractions(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        vals = ()
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"split must be three comma-separated fractions, got {text!r}")
    return vals


def _training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="directory of preprocessed sample files")
    p.add_argument("--seeds", type=_seeds, help="comma-separated seeds (default: 5 seeds from --seed)")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda-fusion", type=float, default=1.0)
    p.add_argument("--lambda-contrast", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--split", type=_fractions, default=(0.7, 0.2, 0.1), help="train,val,test fractions")
    p.add_argument("--no-augment", action="store_true", help="skip minority-class augmentation of the training split")
    p.add_argument("--separate-encoders", action="store_true")
    p.add_argument("--fusion-projection", action="store_true", help="learned com/sep projections instead of halves")
    p.add_argument("--patch-len", type=int, default=200)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-ff", type=int, default=128)
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--seed", type=int, default=None, help="root seed (per-command default when omitted)")
    g.add_argument("--threads", type=int, default=1, help="worker threads for data-parallel stages")
    g.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    g.add_argument("--overwrite", action="store_true", help="replace an existing output")

    parser = _Parser(prog="beam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    p.add_argument("--subjects", type=int, default=57)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--rate", type=float, default=1000.0)
    p.add_argument("--effect", type=float, default=0.5)
    p.add_argument("--noise-floor", type=float, default=1.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="filter, resample, re-reference and window recordings")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--band", type=_band, default=(0.1, 75.0))
    p.add_argument("--rate", type=float, default=200.0)
    p.add_argument("--window", type=float, default=4.0)
    p.add_argument("--stride", type=float, default=1.0)

    p = sub.add_parser("augment", parents=[common], help="balance classes with STFT-noise copies")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--std", type=float, default=0.001)
    p.add_argument("--mean", type=float, default=0.0)

    p = sub.add_parser("train", parents=[common], help="train one arm over several seeds")
    p.add_argument("--arm", choices=["em", "tom", "tom+em"], default="tom+em")
    p.add_argument("--fusion", action="store_true")
    p.add_argument("--contrast", action="store_true")
    _training_flags(p)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a sample directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--subjects", help="comma-separated subject ids (default: all)")
    p.add_argument("--out", help="write the report here instead of standard output")

    p = sub.add_parser("ablate", parents=[common], help="run the empathy-component and module ablations")
    _training_flags(p)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the autodiff core")
    p.add_argument("--points", type=int, default=gradcheck.DEFAULT_POINTS)

    p = sub.add_parser("verify", parents=[common], help="check a synthetic cohort")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write the JSON report here as well")
    return parser


def _prepare_output(path: Path, overwrite: bool, is_dir: bool = True) -> None:
    occupied = path.exists() and not (path.is_dir() and not any(path.iterdir()))
    if occupied:
        if not overwrite:
            raise UsageError(f"output {path} exists; pass --overwrite to replace it")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    (path if is_dir else path.parent).mkdir(parents=True, exist_ok=True)


def _echo_config(args: argparse.Namespace) -> None:
    for key, value in sorted(vars(args).items()):
        log.info("config %s=%s", key, value)


def _seed(args, default: int) -> int:
    return default if args.seed is None else args.seed


# -- subcommands --------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = synthgen.SynthConfig(n_subjects=args.subjects, channels=args.channels, sample_rate_hz=args.rate,
                               class_effect=args.effect, noise_floor=args.noise_floor, rng_seed=_seed(args, 42))
    synthgen.check_clip_plan(cfg, PreprocessConfig())
    out = Path(args.out)
    _prepare_output(out, args.overwrite)
    ids = synthgen.generate(cfg, out, args.threads)
    log.info("wrote %d recordings to %s", len(ids), out)
    return 0


def cmd_preprocess(args) -> int:
    cfg = PreprocessConfig(args.band[0], args.band[1], args.rate, args.window, args.stride)
    ids = read_manifest(args.inp)
    recordings = [read_recording(Path(args.inp, sid)) for sid in ids]
    labels = cohort_labels(recordings)
    out = Path(args.out)
    _prepare_output(out, args.overwrite)

    def one(rec):
        samples = preprocess_recording(rec, cfg, labels[rec.subject_id])
        write_samples(samples, out / rec.subject_id, cfg.target_rate_hz, rec.channels)
        return rec.subject_id, len(samples)

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        done = list(pool.map(one, recordings))
    write_manifest(out, ids)
    for sid, n in done:
        log.info("%s: %d samples (%s)", sid, n, labels[sid].name)
    return 0


def cmd_augment(args) -> int:
    data = read_sample_dataset(args.inp)
    cfg = AugmentConfig(noise_mean=args.mean, noise_std=args.std, rng_seed=_seed(args, 0))
    out = Path(args.out)
    _prepare_output(out, args.overwrite)
    extra: dict[str, list] = {sid: [] for sid in data}
    for view in View:
        groups = [(s,) for sid in sorted(data) for s in data[sid] if s.view is view]
        # distinct stream offsets per view keep the two views' noise independent
        vcfg = dataclasses.replace(cfg, rng_seed=cfg.rng_seed * 2 + (view is View.EM))
        for (s,) in balance(groups, vcfg):
            extra[s.subject_id].append(s)
    for sid, samples in data.items():
        info = sample_file_info(Path(args.inp, sid))
        write_samples(samples + extra[sid], out / sid, info["sample_rate_hz"], info["channels"])
    write_manifest(out, list(data))
    log.info("added %d augmented samples", sum(len(v) for v in extra.values()))
    return 0


def _train_config(args, arm: Arm) -> TrainConfig:
    seeds = args.seeds or tuple(range(_seed(args, 1), _seed(args, 1) + 5))
    enc = EncoderConfig(patch_len=args.patch_len, d_model=args.d_model, n_layers=args.layers, n_heads=args.heads,
                        d_ff=args.d_ff)
    return TrainConfig(arm=arm, encoder=enc, lambda_fusion=args.lambda_fusion, lambda_contrast=args.lambda_contrast,
                       tau=args.tau, batch_size=args.batch_size, epochs=args.epochs, learning_rate=args.lr,
                       seeds=seeds, split_fractions=args.split, shared_encoder=not args.separate_encoders,
                       fusion_projection=args.fusion_projection, augment=not args.no_augment)


def _fit_encoder(cfg: TrainConfig, data) -> TrainConfig:
    first = next(iter(next(iter(data.values()))))
    c, w = first.data.shape
    enc = cfg.encoder
    if w % enc.patch_len:
        raise ValueError(f"window of {w} samples is not a multiple of patch_len {enc.patch_len}")
    enc = dataclasses.replace(enc, max_channels=max(enc.max_channels, c), max_patches=max(enc.max_patches, w // enc.patch_len))
    return dataclasses.replace(cfg, encoder=enc)


def cmd_train(args) -> int:
    arm = Arm(args.arm, args.contrast, args.fusion)
    data = read_sample_dataset(args.data)
    cfg = _fit_encoder(_train_config(args, arm), data)
    out = Path(args.out)
    _prepare_output(out, args.overwrite)
    runs, report = train(arm, data, cfg)
    for run in runs:
        save_trained(run, out / f"seed-{run.result.seed}.ckpt")
    (out / "report.jsonl").write_text(report.text(), encoding="utf-8")
    cells = report.formatted()
    (out / "summary.md").write_text(
        "| Arm | Accuracy | Specificity | Sensitivity |\n|---|---|---|---|\n"
        f"| {arm.name} | {cells['accuracy']} | {cells['specificity']} | {cells['sensitivity']} |\n", encoding="utf-8")
    log.info("%s: %s", arm.name, cells)
    return 0


def cmd_eval(args) -> int:
    model, meta = load_model(args.checkpoint)
    data = read_sample_dataset(args.data)
    subjects = args.subjects.split(",") if args.subjects else None
    unknown = sorted(set(subjects or ()) - set(data))
    if unknown:
        raise ValueError(f"unknown subjects: {unknown}")
    report = evaluate(model, data, subjects, seed=int(meta.get("seed", -1)))
    if args.out:
        path = Path(args.out)
        _prepare_output(path, args.overwrite, is_dir=False)
        path.write_text(report.text(), encoding="utf-8")
    else:
        sys.stdout.write(report.text())
    return 0


def cmd_ablate(args) -> int:
    data = read_sample_dataset(args.data)
    cfg = _fit_encoder(_train_config(args, Arm()), data)
    out = Path(args.out)
    _prepare_output(out, args.overwrite)
    rows, baseline = ablate(data, cfg)
    (out / "ablation.jsonl").write_text("\n".join(ablation_lines(rows, baseline)) + "\n", encoding="utf-8")
    (out / "ablation.md").write_text(ablation_table(rows, baseline), encoding="utf-8")
    failed = [r.arm.name for r in rows if r.error]
    if failed:
        log.error("failed arms: %s", ", ".join(failed))
        return 2
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suite(points=args.points, seed=_seed(args, 0))
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_verify(args) -> int:
    report = synthgen.verify(args.data)
    text = json.dumps(report, indent=1, sort_keys=True)
    print(text)
    if args.out:
        path = Path(args.out)
        _prepare_output(path, args.overwrite, is_dir=False)
        path.write_text(text + "\n", encoding="utf-8")
    for failure in report["failures"]:
        log.error("verify: %s", failure)
    return 0 if report["ok"] else 1


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "augment": cmd_augment, "train": cmd_train,
            "eval": cmd_eval, "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "verify": cmd_verify}


@contextlib.contextmanager
def _logging(level: str):
    # scoped to one run so embedding callers keep their own logging state
    pkg = logging.getLogger("beam")
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler.setLevel(level)
    previous = pkg.level
    pkg.addHandler(handler)
    pkg.setLevel(level)
    try:
        yield
    finally:
        pkg.removeHandler(handler)
        pkg.setLevel(previous)


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    with _logging(args.log_level):
        return _dispatch(args)


def _dispatch(args) -> int:
    _echo_config(args)
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](args)
    except (UsageError, ValueError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 1
    except TrainingDiverged as exc:
        log.error("training diverged: %s", exc)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        log.error("runtime failure: %s: %s", type(exc).__name__, exc)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
