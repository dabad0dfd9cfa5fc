"""Command-line experiment runner.

Subcommands: ``init-train``, ``online-learn``, ``estimate`` and ``grasp``.
Logs are CSV with a header row; angles in degrees, lengths in mm,
tensions in N.  ``SELFBODY_LOG_DIR`` overrides the default output
directory; ``--out-dir`` overrides both.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .approximator import FormatError, TrainingDiverged, VersionError
from .body_image import SelfBodyImage
from .experiments import (estimate_under_load, grasp, initial_image, online_learning)
from .modelfile import ModelFileError, build, load_fixture, read, read_schedule

LOG_DIR_ENV = "SELFBODY_LOG_DIR"
FIXTURES = ("planar2dof", "arm4dof")


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v


def load_model_args(args):
    data = load_fixture(args.model) if args.model in FIXTURES else read(args.model)
    if getattr(args, "schedule", None):
        data["schedule"] = {**data.get("schedule", {}), **read_schedule(args.schedule)}
    return build(data)


def out_dir(args):
    d = args.out_dir or os.environ.get(LOG_DIR_ENV) or "."
    return Path(d)


def _joint_cols(chain, prefix):
    return [f"{prefix}_{name}_deg" for name in chain.joint_names]


def cmd_init_train(args):
    model = load_model_args(args)
    sbi, report = initial_image(model, seed=args.seed)
    out = Path(args.out) if args.out else out_dir(args) / "selfbody.sbi"
    out.parent.mkdir(parents=True, exist_ok=True)
    sbi.save(out)
    rows = [[k, v] for k, v in report.items() if np.isscalar(v)]
    write_csv(out.with_suffix(".report.csv"), ["key", "value"], rows)
    print(f"wrote {out}")
    print(f"ijmm held-out rmse {report['ijmm_heldout_rmse']:.4f} mm")
    return 0


def cycle_rows(chain, records):
    header = (["cycle", "phase"] + _joint_cols(chain, "target") + _joint_cols(chain, "true")
              + _joint_cols(chain, "est") + _joint_cols(chain, "actual")
              + ["rmse_deg", "true_rmse_deg", "settled", "fx", "fy", "fz",
                 "max_tension", "updates"])
    rows = []
    for k, r in enumerate(records):
        acc = ";".join(f"{rp.updater}:{rp.branch}" for rp in r.reports if rp.accepted)
        rows.append([k, r.phase, *np.rad2deg(r.theta_target), *np.rad2deg(r.theta_true),
                     *np.rad2deg(r.theta_est), *np.rad2deg(r.theta_actual), r.rmse,
                     r.true_rmse, r.settled, *r.load[:3], float(np.max(r.tensions)), acc])
    return header, rows


def _online_one(args, seed):
    model = load_model_args(args)
    sbi = SelfBodyImage.load(args.sbi)
    phases = model.schedule.get("phases", [])
    if args.disable_mrcm:
        phases = [p for p in phases if p["kind"] != "loads"]
    session, records = online_learning(model, sbi, seed=seed, phases=phases,
                                       updates_enabled=not args.no_updates)
    d = out_dir(args) / f"seed{seed}"
    header, rows = cycle_rows(model.chain, records)
    write_csv(d / "cycles.csv", header, rows)
    write_csv(d / "updates.csv", ["cycle", "updater", "branch", "accepted", "reason",
                                  "theta_deg", "loss"],
              ([k, *rp.row] for k, r in enumerate(records) for rp in r.reports))
    sbi.save(d / "learned.sbi")
    tail = [r.rmse for r in records[-20:]]
    return seed, float(np.mean(tail)) if tail else float("nan")


def _estimate_one(args, seed):
    model = load_model_args(args)
    sbi = SelfBodyImage.load(args.sbi)
    res = estimate_under_load(model, sbi, seed=seed)
    rows = [[k, int(ld), w, wo] for k, (ld, w, wo) in
            enumerate(zip(res.loaded, res.rmse_with, res.rmse_without))]
    header = ["cycle", "loaded", "rmse_with_deg", "rmse_without_deg"]
    if args.disable_mrcm:
        rows = [[k, ld, wo] for k, ld, _, wo in rows]
        header = ["cycle", "loaded", "rmse_without_deg"]
    write_csv(out_dir(args) / f"seed{seed}" / "estimate.csv", header, rows)
    return seed, res.loaded_rmse_with, res.loaded_rmse_without


def _fan_out(fn, args):
    seeds = [args.seed + k for k in range(args.seeds)]
    if args.workers <= 1 or len(seeds) == 1:
        return [fn(args, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=args.workers) as ex:
        return list(ex.map(fn, [args] * len(seeds), seeds))


def cmd_online_learn(args):
    for seed, rmse in _fan_out(_online_one, args):
        print(f"seed {seed}: last-20 rmse {rmse:.3f} deg")
    return 0


def cmd_estimate(args):
    for seed, w, wo in _fan_out(_estimate_one, args):
        if args.disable_mrcm:
            print(f"seed {seed}: loaded rmse without {wo:.3f} deg")
        else:
            print(f"seed {seed}: loaded rmse with {w:.3f} deg, without {wo:.3f} deg")
    return 0


def cmd_grasp(args):
    model = load_model_args(args)
    sbi = SelfBodyImage.load(args.sbi)
    log = grasp(model, sbi, mass=args.mass, compensate=not args.disable_mrcm)
    m = model.chain
    header = (["cycle", "loaded"] + _joint_cols(m, "target") + _joint_cols(m, "theta")
              + [f"command_{i}_mm" for i in range(sbi.n_muscles)]
              + [f"tension_{i}_n" for i in range(sbi.n_muscles)])
    write_csv(out_dir(args) / "grasp.csv", header, log.rows())
    print(f"peak droop {log.peak_droop:.3f} deg, final error {log.final_error:.3f} deg"
          + (" (aborted: over tension)" if log.aborted else ""))
    return 1 if log.aborted else 0


def build_parser():
    p = argparse.ArgumentParser(prog="selfbody", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sbi=True):
        sp.add_argument("--model", required=True,
                        help="model file path or fixture name (planar2dof, arm4dof)")
        if sbi:
            sp.add_argument("--sbi", required=True, help="serialized self-body image")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out-dir", default=None,
                        help=f"log directory (default ${LOG_DIR_ENV} or .)")
        sp.add_argument("--schedule", default=None,
                        help="YAML schedule block overriding the model file's")

    def batch(sp):
        sp.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
        sp.add_argument("--workers", type=int, default=1, help="parallel worker processes")

    sp = sub.add_parser("init-train", help="train the self-body image on the nominal model")
    common(sp, sbi=False)
    sp.add_argument("--out", default=None, help="output .sbi path")
    sp.set_defaults(func=cmd_init_train)

    sp = sub.add_parser("online-learn", help="run the phased online-learning schedule")
    common(sp)
    batch(sp)
    sp.add_argument("--disable-mrcm", action="store_true", help="skip the load phases")
    sp.add_argument("--no-updates", action="store_true", help="control run without updates")
    sp.set_defaults(func=cmd_online_learn)

    sp = sub.add_parser("estimate", help="joint estimation under load, paired baseline")
    common(sp)
    batch(sp)
    sp.add_argument("--disable-mrcm", action="store_true",
                    help="log only the tension-blind baseline")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("grasp", help="hold the grasp posture under a dumbbell")
    common(sp)
    sp.add_argument("--mass", type=float, default=None, help="dumbbell mass [kg]")
    sp.add_argument("--disable-mrcm", action="store_true",
                    help="freeze the command instead of compensating")
    sp.set_defaults(func=cmd_grasp)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ModelFileError, FormatError, VersionError, TrainingDiverged, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
