"""``lumbarseg`` command line: phantoms, training, inference, evaluation, cross-validation, self-check.

Exit codes: 0 success, 2 input or configuration error, 3 numeric divergence,
4 localization failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as configmod
from .autodiff import load_checkpoint, save_checkpoint, tensor_digest
from .dataset import PhantomSpec, gen_phantom, list_cases, load_volume, read_case, save_volume, write_case
from .errors import LocalizationError, LumbarSegError, NumericError
from .locnet import train_localizer
from .metrics import cross_validate, evaluate, format_table
from .segnet import segment_volume, train_binary, train_multiclass
from .selfcheck import run_selfcheck

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_LOCALIZATION = 0, 2, 3, 4

log = logging.getLogger("lumbarseg")


def _load_config(args):
    if args.config:
        return configmod.load(args.config, args.preset, args.seed)
    cfg = configmod.preset(args.preset)
    return cfg if args.seed is None else dataclasses.replace(cfg, seed=args.seed)


def _cases(data_dir, names=None):
    names = names or list_cases(data_dir)
    if not names:
        raise LumbarSegError(f"no cases found in {data_dir}")
    return names, [read_case(data_dir, n) for n in names]


def _write_lines(path, lines):
    Path(path).write_text("".join(f"{line}\n" for line in lines))


def cmd_gen_phantom(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.spec:
        base = PhantomSpec.from_text(Path(args.spec).read_text())
        specs = [base.replace(seed=base.seed + i) for i in range(args.count or 1)]
    else:
        count = args.count or cfg.phantom.case_count
        specs = [cfg.phantom.spec(i) for i in range(count)]
    for i, spec in enumerate(specs):
        vol, labels, box = gen_phantom(spec)
        write_case(out, i, vol, labels, box)
        (out / f"case_{i:03d}.spec").write_text(spec.to_text())
    print(f"wrote {len(specs)} cases to {out}")


def _epoch_logger(lines):
    def on_epoch(stage, epoch, loss):
        lines.append(f"{stage} epoch={epoch} loss={loss:.8f}")
    return on_epoch


def cmd_train_localizer(args, cfg):
    names, cases = _cases(args.data, args.cases)
    lines = []
    res = train_localizer([(v, b) for v, _, b in cases], cfg.localizer, cfg.seed, _epoch_logger(lines))
    handoff = res.checkpoint.metadata["round1_digests"]
    same = handoff == {k: tensor_digest(v) for k, v in res.round1.tensors.items()}
    lines.insert(cfg.localizer.round1_epochs, f"handoff round1->round2 tensors={len(handoff)} digests_equal={same}")
    res.checkpoint.metadata["cases"] = names
    save_checkpoint(res.checkpoint, args.out)
    _write_lines(_log_path(args), lines)
    print(f"saved localizer checkpoint to {args.out}")


def cmd_train_segmenter(args, cfg):
    names, cases = _cases(args.data, args.cases)
    pairs = [(v, l) for v, l, _ in cases]
    lines = []
    on_epoch = _epoch_logger(lines)
    binary = train_binary(pairs, cfg.segmenter, cfg.seed, on_epoch)
    if args.binary_out:
        save_checkpoint(binary.checkpoint, args.binary_out)
    multi = train_multiclass(pairs, binary.checkpoint, cfg.segmenter, cfg.seed, on_epoch)
    inherited = multi.checkpoint.metadata["binary_digests"]
    # insert the handoff event between the two training stages
    lines.insert(cfg.segmenter.binary_epochs,
                 f"handoff binary->multiclass tensors={len(inherited)} head=reinitialised")
    multi.checkpoint.metadata["cases"] = names
    save_checkpoint(multi.checkpoint, args.out)
    _write_lines(_log_path(args), lines)
    print(f"saved segmenter checkpoint to {args.out}")


def _log_path(args):
    return args.log or f"{args.out}.log"


def cmd_infer(args, cfg):
    volume = load_volume(args.volume)
    loc = load_checkpoint(args.loc)
    seg = load_checkpoint(args.seg)
    result = segment_volume(volume, loc, seg, cfg.localizer, cfg.segmenter, cfg.seed)
    save_volume(result.labels, args.out)
    roi = result.roi
    print("roi corner_low " + " ".join(f"{c:.4f}" for c in roi.corner_low))
    print("roi corner_high " + " ".join(f"{c:.4f}" for c in roi.corner_high))
    counts = np.bincount(result.labels.data.ravel(), minlength=6)
    for label in range(1, 6):
        print(f"label {label} voxels {int(counts[label])}")


def _write_report(prefix, table, payload):
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.txt").write_text(table + "\n")
    Path(f"{prefix}.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_evaluate(args, cfg):
    report = evaluate(load_volume(args.pred), load_volume(args.truth))
    summary = {}
    for label, row in report.to_dict()["labels"].items():
        summary[label] = {m: (v, 0.0 if v is not None else None) for m, v in row.items()}
    summary["Lumbar"] = {m: (v, 0.0 if v is not None else None) for m, v in report.lumbar().items()}
    table = format_table(summary)
    _write_report(args.out, table, report.to_dict())
    print(table)


def cmd_crossval(args, cfg):
    _, cases = _cases(args.data, args.cases)
    report = cross_validate(cases, cfg, cfg.seed)
    payload = report.to_dict()
    # wall-clock time is not reproducible; keep it out of the files
    payload.pop("seconds")
    for fold in payload["folds"]:
        fold.pop("seconds")
    roi_mean, roi_sd = report.roi_iou()
    table = report.table() + f"\nROI IoU {roi_mean:.4f} ± {roi_sd:.4f}"
    _write_report(args.out, table, payload)
    print(table)
    print(f"elapsed {report.seconds:.0f} s")


def cmd_selfcheck(args, cfg):
    results = run_selfcheck(corrupt=args.corrupt_gradient)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else 1


def _common_flags(suppress):
    """Global flags, accepted before or after the subcommand.

    The subcommand copies default to SUPPRESS so they never overwrite a value
    given before the subcommand name.
    """
    def default(value):
        return argparse.SUPPRESS if suppress else value

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=default(None), help="key=value config file with [section] headers")
    common.add_argument("--seed", type=int, default=default(None), help="override the run seed")
    common.add_argument("--preset", default=default("desk"), choices=sorted(configmod.PRESETS))
    common.add_argument("--threads", type=int, default=default(1), help="BLAS threads (1 gives bit-exact reruns)")
    common.add_argument("--dump-config", action="store_true", default=default(False),
                        help="print the effective config and exit")
    common.add_argument("-v", "--verbose", action="store_true", default=default(False))
    return common


def build_parser():
    common = _common_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="lumbarseg", description=__doc__.splitlines()[0],
                                     parents=[_common_flags(suppress=False)])
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-phantom", parents=[common], help="write synthetic cases")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="phantom spec text file; successive cases use seed, seed+1, ...")
    p.add_argument("--count", type=int)
    p.set_defaults(func=cmd_gen_phantom)

    for name, func, extra in (("train-localizer", cmd_train_localizer, False),
                              ("train-segmenter", cmd_train_segmenter, True)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--data", required=True, help="case directory")
        p.add_argument("--cases", nargs="*", help="case names (default: all)")
        p.add_argument("--out", required=True, help="checkpoint path")
        p.add_argument("--log", help="loss log path (default: <out>.log)")
        if extra:
            p.add_argument("--binary-out", help="also save the binary-stage checkpoint")
        p.set_defaults(func=func)

    p = sub.add_parser("infer", parents=[common], help="segment one volume")
    p.add_argument("--volume", required=True)
    p.add_argument("--loc", required=True)
    p.add_argument("--seg", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", parents=[common], help="score a label volume against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True, help="report prefix; writes .txt and .json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("crossval", parents=[common], help="repeated hold-out cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--cases", nargs="*")
    p.add_argument("--out", required=True, help="report prefix; writes .txt and .json")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("selfcheck", parents=[common], help="gradient, metric and KDE checks")
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        if args.dump_config:
            print(configmod.dumps(cfg), end="")
            return EXIT_OK
        if args.command is None:
            parser.print_help()
            return EXIT_INPUT
        with threadpool_limits(limits=args.threads):
            code = args.func(args, cfg)
        return EXIT_OK if code is None else code
    except NumericError as exc:
        print(f"error: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except LocalizationError as exc:
        print(f"error: localization failed: {exc}", file=sys.stderr)
        return EXIT_LOCALIZATION
    except (LumbarSegError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
