"""Command-line front end: ``usta <command> ...``.

Exit status is 0 on success, 1 for usage errors and 2 when input data or a
config file is rejected.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .classical_di import GENERATORS, NumericError, ShapeError
from .conf_filter import filter as confidence
from .experiments import SWEEP_PARAMS, ablate_branch, format_rows, sweep
from .metrics import confusion, report_row
from .network import BRANCH_MODES, NetworkConfigError
from .raster import (
    RasterFormatError,
    read_change_map,
    read_image,
    write_change_map,
    write_image,
    write_scalar_map,
)
from .selftrain import TrainConfig, TrainConfigError, predetect, read_config, run_usta
from .synth import SceneConfigError, gen_scene
from .threshold import otsu

EXIT_USAGE = 1
EXIT_DATA = 2
# config and scene errors subclass ValueError too; listed for the reader
DATA_ERRORS = (
    OSError, RasterFormatError, ShapeError, NumericError,
    TrainConfigError, NetworkConfigError, SceneConfigError, ValueError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pair(args):
    return read_image(args.x1), read_image(args.x2)


def _config(args):
    return read_config(args.cfg) if args.cfg else TrainConfig()


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def cmd_synth(args):
    x1, x2, ref = gen_scene(args.h, args.w, args.change, args.noise, args.seed)
    out = _out_dir(args.out)
    write_image(x1, out / "x1.ppm")
    write_image(x2, out / "x2.ppm")
    write_change_map(ref, out / "ref.pgm")


def cmd_baseline(args):
    x1, x2 = _pair(args)
    di = GENERATORS[args.method](x1, x2)
    cm, t = otsu(di)
    out = _out_dir(args.out)
    write_scalar_map(di, out / f"{args.method}_di.ustaf")
    write_change_map(cm, out / f"{args.method}_map.pgm")
    print(f"threshold {t:.8f}")


def cmd_predetect(args):
    x1, x2 = _pair(args)
    cfg = _config(args)
    cm1, pc1s = predetect(x1, x2, cfg)
    out = _out_dir(args.out)
    write_change_map(cm1, out / "cm1.pgm")
    write_scalar_map(confidence(cm1, cfg.w), out / "pc1.ustaf")
    write_scalar_map(pc1s, out / "pc1s.ustaf")


def cmd_run(args):
    x1, x2 = _pair(args)
    cfg = _config(args)
    start = time.perf_counter()
    res = run_usta(x1, x2, cfg)
    out = _out_dir(args.out)
    write_change_map(res.cm1, out / "cm1.pgm")
    write_scalar_map(res.pc1s, out / "pc1s.ustaf")
    write_change_map(res.cm2, out / "cm2.pgm")
    write_scalar_map(res.pc2s, out / "pc2s.ustaf")
    write_scalar_map(res.teacher_di, out / "teacher_di.ustaf")
    write_scalar_map(res.di, out / "student_di.ustaf")
    write_change_map(res.change_map, out / "change_map.pgm")
    res.teacher.save(out / "teacher.ckpt")
    res.student.save(out / "student.ckpt")
    res.log.write(out / "train_log.txt", timing=False)
    print(f"wall time {time.perf_counter() - start:.1f} s", file=sys.stderr)


def cmd_eval(args):
    print(report_row(confusion(read_change_map(args.pred), read_change_map(args.ref))))


def cmd_sweep(args):
    x1, x2 = _pair(args)
    ref = read_change_map(args.ref)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values must be comma-separated numbers, got {args.values!r}") from None
    if args.param == "w":
        if any(v != int(v) for v in values):
            raise UsageError("--values for w must be integers")
        values = [int(v) for v in values]
    rows = sweep(x1, x2, ref, _config(args), args.param, values, _int_list(args.seeds), args.jobs)
    sys.stdout.write(format_rows(rows, args.param))


def cmd_ablate(args):
    x1, x2 = _pair(args)
    ref = read_change_map(args.ref)
    rows = ablate_branch(x1, x2, ref, _config(args), args.mode, _int_list(args.seeds), args.jobs)
    sys.stdout.write(format_rows(rows, "mode"))


def _parser():
    p = _Parser(prog="usta", description="Unsupervised self-training change detection.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic scene (x1.ppm, x2.ppm, ref.pgm)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--h", type=int, default=224)
    s.add_argument("--w", type=int, default=224)
    s.add_argument("--change", type=float, default=0.1)
    s.add_argument("--noise", type=float, default=0.05)
    s.set_defaults(fn=cmd_synth)

    def pair_args(q, cfg=True):
        q.add_argument("--x1", required=True)
        q.add_argument("--x2", required=True)
        if cfg:
            q.add_argument("--cfg", help="key = value config file (defaults when omitted)")

    s = sub.add_parser("baseline", help="classical difference image + Otsu map")
    s.add_argument("--method", required=True, choices=sorted(GENERATORS))
    pair_args(s, cfg=False)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_baseline)

    s = sub.add_parser("predetect", help="CVA + Otsu labels and their confidence")
    pair_args(s)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_predetect)

    s = sub.add_parser("run", help="full teacher/student pipeline")
    pair_args(s)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("eval", help="Pr,Rc,F1 of a predicted map")
    s.add_argument("--pred", required=True)
    s.add_argument("--ref", required=True)
    s.set_defaults(fn=cmd_eval)

    for name, fn in (("sweep", cmd_sweep), ("ablate-branch", cmd_ablate)):
        s = sub.add_parser(name, help="F1 table over seeds")
        if name == "sweep":
            s.add_argument("--param", required=True, choices=SWEEP_PARAMS)
            s.add_argument("--values", required=True)
        else:
            s.add_argument("--mode", nargs="+", choices=BRANCH_MODES, default=list(BRANCH_MODES))
        pair_args(s)
        s.add_argument("--ref", required=True)
        s.add_argument("--seeds", default="0")
        s.add_argument("--jobs", type=int, default=1, help="worker processes")
        s.set_defaults(fn=fn)
    return p


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
        args.fn(args)
    except UsageError as exc:
        print(f"usta: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"usta: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:                   # --help
        return int(exc.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
