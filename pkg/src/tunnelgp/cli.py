"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

Every flag can also come from a JSON file given by ``--config``; keys are
flag names with dashes replaced by underscores, either at the top level or
under a section named after the subcommand.  Flags given on the command
line win.  Each command that writes a directory also writes
``resolved_config.json`` there.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
log = logging.getLogger("tunnelgp")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_csv(path, header, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])


def read_cloud(path):
    """A point cloud CSV with at least the columns ``x, y, l``; extra numeric columns are kept."""
    from .preprocess.tracks import SchemaError

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in ("x", "y", "l") if c not in cols]
        if missing:
            raise SchemaError(f"missing column(s) {', '.join(missing)}", 1, str(path))
        data = {c: [] for c in cols}
        for i, row in enumerate(reader, start=2):
            for c in cols:
                v = row[c]
                try:
                    data[c].append(float(v) if v not in ("", None) else math.nan)
                except ValueError:
                    if c in ("x", "y", "l"):
                        raise SchemaError(f"non-numeric {c} {v!r}", i, str(path)) from None
                    data[c].append(v)
    out = {}
    for c, v in data.items():
        try:
            out[c] = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            out[c] = np.asarray(v, dtype=object)
    if len(out["x"]) == 0:
        raise SchemaError("cloud is empty", 2, str(path))
    for c in ("x", "y", "l"):
        bad = np.flatnonzero(~np.isfinite(out[c]))
        if len(bad):
            raise SchemaError(f"non-finite {c}", int(bad[0]) + 2, str(path))
    return out


def _ladder(text):
    try:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("ladder values must be positive integers")
    return vals


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _out_dir(args):
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _echo_config(args, out):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    write_json(Path(out) / "resolved_config.json", cfg)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_model(path, kind):
    """Read a model file; a directory stands for the ``tunnel.json`` inside it."""
    from . import tgp

    p = Path(path)
    if kind == "tunnel" and p.is_dir():
        p = p / "tunnel.json"
        if not p.exists():
            raise FileNotFoundError(f"no tunnel.json in model directory {path}")
    d = read_json(p)
    cls = {"tunnel": tgp.TunnelModel, "param_field": tgp.ParamField}[kind]
    return cls.from_dict(d)


def _load_fields(paths):
    """Field models from files or from directories holding ``field_*.json``."""
    files = []
    for p in paths or []:
        p = Path(p)
        files.extend(sorted(p.glob("field_*.json")) if p.is_dir() else [p])
    return [_load_model(f, "param_field") for f in files]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args):
    from . import synth

    if args.n < 1:
        raise UsageError("--n must be at least 1")
    spec = synth.StructureSpec(args.structure)
    P = synth.sample_structure(spec, args.n, seed=args.seed)
    out = _out_dir(args)
    name = f"cloud_{spec.kind.lower()}.csv"
    write_csv(out / name, ["x", "y", "l"], [P[:, 0], P[:, 1], P[:, 2]])
    manifest = {"structure": spec.to_dict(), "n": args.n, "seed": args.seed, "file": name,
                "sha256": _sha256(out / name), "columns": ["x", "y", "l"]}
    write_json(out / "manifest.json", manifest)
    _echo_config(args, out)
    print(out / name)


def cmd_simulate(args):
    from .preprocess import tracks as T

    if args.n_tracks < 1:
        raise UsageError("--n-tracks must be at least 1")
    geom = T.read_geometry(args.geometry) if args.geometry else T.changi_like_geometry()
    trs = T.simulate_tracks(geom, args.n_tracks, seed=args.seed, heavy_fraction=args.heavy_fraction)
    out = _out_dir(args)
    path = out / ("tracks.jsonl" if args.format == "jsonl" else "tracks.csv")
    (T.write_tracks_jsonl if args.format == "jsonl" else T.write_tracks_csv)(trs, path)
    write_json(out / "geometry.json", {"geometry": geom.to_dict(), "synthetic": True})
    _echo_config(args, out)
    print(path)


def _tunnel_config(args, track_data):
    from . import tgp

    angles = args.num_angles or (30 if track_data else 8)
    levels = args.num_levels or (10 if track_data else 5)
    return tgp.TunnelConfig(
        num_angles=angles,
        num_levels=levels,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        steps=args.steps,
        seed=args.seed,
        weighting=args.weighting,
    )


def _pole_config(args, track_data):
    from .preprocess.transforms import PoleConfig

    return PoleConfig(
        num_inducing=args.pole_inducing or (100 if track_data else 10),
        batch_size=args.pole_batch_size,
        learning_rate=args.learning_rate,
        steps=args.pole_steps,
        seed=args.seed,
    )


def _train_one(points, args, out, track_data, channels=None):
    from . import tgp
    from .preprocess.transforms import Scalers, fit_pole, to_cylindrical

    scalers = Scalers.fit(points)
    S = scalers.transform(points)
    pole = fit_pole(S, _pole_config(args, track_data))
    cloud = to_cylindrical(S, pole, scalers, scaled=True)
    model = tgp.fit_tunnel(cloud, _tunnel_config(args, track_data))
    write_json(out / "scalers.json", scalers.to_dict())
    write_json(out / "pole.json", pole.to_dict())
    write_json(out / "tunnel.json", model.to_dict())
    metrics = {
        "n_points": int(len(points)),
        "pole_x_elbo": pole.x.elbo_trace,
        "pole_y_elbo": pole.y.elbo_trace,
        "tunnel_elbo": model.gp.elbo_trace,
        "tunnel_inducing": int(model.gp.inducing.count),
    }
    for name, values in (channels or {}).items():
        fc = tgp.FieldConfig(args.field_inducing, args.field_batch_size, args.learning_rate, args.field_steps, args.seed)
        fld = tgp.fit_param_field(cloud, values, fc, channel=name)
        write_json(out / f"field_{name}.json", fld.to_dict())
        metrics[f"field_{name}_elbo"] = fld.gp.elbo_trace
    write_json(out / "metrics.json", metrics)
    return model


def cmd_train(args):
    from .preprocess import tracks as T

    if bool(args.cloud) == bool(args.tracks):
        raise UsageError("give exactly one of --cloud or --tracks")
    out = _out_dir(args)
    if args.cloud:
        c = read_cloud(args.cloud)
        P = np.column_stack([c["x"], c["y"], c["l"]])
        _train_one(P, args, out, track_data=False)
    else:
        if not args.geometry:
            raise T.SchemaError("track input needs --geometry (fields 'faf' and 'threshold')")
        geom = T.read_geometry(args.geometry)
        trajs = T.prepare_tracks(T.read_tracks(args.tracks), geom, n_iterations=args.kalman_iterations)
        if not trajs:
            raise T.SchemaError("no track has samples inside the approach window")
        for wake in sorted({t.wake for t in trajs}):
            group = [t for t in trajs if t.wake == wake]
            P = np.vstack([t.points for t in group])
            channels = None
            if args.fields:
                channels = {k: np.concatenate([t.channels[k] for t in group]) for k in ("S_x", "S_y", "S_h")}
            sub = out / wake
            sub.mkdir(exist_ok=True)
            _train_one(P, args, sub, track_data=True, channels=channels)
    _echo_config(args, out)
    print(out)


def _pole_check(model, structure):
    from . import synth

    spec = synth.StructureSpec(structure)
    sc = model.scalers
    l = np.linspace(max(-1.0, sc.l_min), min(1.0, sc.l_max), 41)
    xp, yp = model.pole(sc.scale_l(l))
    tx, ty = spec.pole(l)
    tx = (tx - sc.mean[0]) / sc.std[0]
    ty = (ty - sc.mean[1]) / sc.std[1]
    rmse = float(np.sqrt(np.mean(np.concatenate([(xp - tx) ** 2, (yp - ty) ** 2]))))
    return {"structure": spec.kind, "pole_rmse_scaled": rmse, "pass": rmse <= 0.1}


def cmd_inspect(args):
    model = _load_model(args.model, "tunnel")
    sc = model.scalers
    ls = np.linspace(-1.0, 1.0, args.n_l)
    xp, yp = model.pole(ls)
    struct = sc.inverse(np.column_stack([xp, yp, ls]))
    gp = model.gp
    report = {
        "format_version": 1,
        "weighting": model.weighting,
        "inducing": int(gp.inducing.count),
        "kernel_variance": gp.kernel_params.variance,
        "lengthscales": list(gp.kernel_params.lengthscales),
        "wendland_c": gp.kernel_params.wendland_c,
        "scalers": sc.to_dict(),
        "pole": {"l": struct[:, 2].tolist(), "x": struct[:, 0].tolist(), "y": struct[:, 1].tolist(),
                 "x_scaled": xp.tolist(), "y_scaled": yp.tolist()},
        "final_elbo": None,
    }
    # the ELBO trace lives in the training metrics written next to the model
    mpath = (Path(args.model) if Path(args.model).is_dir() else Path(args.model).parent) / "metrics.json"
    if mpath.exists():
        trace = read_json(mpath).get("tunnel_elbo") or []
        report["final_elbo"] = trace[-1] if trace else None
    mu, sd = model.predict(np.zeros(len(ls)), ls)
    report["std_theta0"] = sd.tolist()
    if args.structure:
        report["pole_check"] = _pole_check(model, args.structure)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_eval(args):
    from . import evaluation as E
    from . import plotting, synth, tgp
    from .preprocess.transforms import PoleConfig

    spec = synth.StructureSpec(args.structure)
    c = read_cloud(args.cloud)
    P = np.column_stack([c["x"], c["y"], c["l"]])
    out = _out_dir(args)
    reports = []
    methods = [m.strip().lower() for m in args.methods.split(",") if m.strip()]
    names = {"gmm": "GMM", "mgmm": "mGMM", "tgp": "TGP"}
    for m in methods:
        if m not in names:
            raise UsageError(f"unknown method {m!r}; choose from gmm, mgmm, tgp")
    for m in methods:
        for R in args.ladder:
            if m == "tgp":
                cfg = tgp.TunnelConfig(num_angles=R, num_levels=args.num_levels, batch_size=args.batch_size,
                                       learning_rate=args.learning_rate, steps=args.steps, seed=args.seed,
                                       weighting=args.weighting)
                pc = PoleConfig(num_inducing=10, batch_size=400, steps=args.pole_steps, seed=args.seed)
                model, _ = tgp.build_tunnel(P, cfg, pc)
                rep = E.rmse_pdf(E.tgp_estimator(model, args.step), spec, "TGP", R, step=args.step)
                rep.notes = {"inducing": R * args.num_levels, "mirrored_inducing": 2 * R * args.num_levels,
                             "angles_per_level": R, "levels": args.num_levels, "weighting": args.weighting}
            else:
                est = E.mixture_estimator(P, R, names[m], seed=args.seed)
                rep = E.rmse_pdf(est, spec, names[m], R, step=args.step)
                rep.notes = {"slab_half_width": E.SLAB_HALF_WIDTH}
            write_json(out / f"report_{spec.kind}_{names[m]}_R{R}.json", rep.to_dict())
            reports.append(rep)
            log.info("%s %s R=%d rmse=%.6g", spec.kind, names[m], R, rep.aggregate_rmse)
    rows = [(r.structure, r.method, r.R, r.aggregate_rmse, min(r.normalization_integral), max(r.normalization_integral))
            for r in reports]
    write_csv(out / "summary.csv", ["structure", "method", "R", "aggregate_rmse", "integral_min", "integral_max"],
              list(zip(*rows)))
    if not args.no_figures:
        plotting.rmse_ladder(reports, out / f"rmse_{spec.kind}.png")
    _echo_config(args, out)
    print(out / "summary.csv")


def cmd_export(args):
    from . import plotting, tgp

    if args.sigma < 0:
        raise UsageError("--sigma must be non-negative")
    model = _load_model(args.model, "tunnel")
    sc = model.scalers
    theta = np.linspace(-math.pi, math.pi, args.n_theta, endpoint=False)
    lg = sc.unscale_l(np.linspace(-1.0, 1.0, args.n_l))
    s = tgp.tunnel_surface(model, theta, lg, args.sigma)
    out = _out_dir(args)
    cols = ["l", "theta", "x_inner", "y_inner", "z_inner", "x_outer", "y_outer", "z_outer", "mean", "std"]
    write_csv(out / "mesh.csv", cols, [s[c] for c in cols])
    mesh = {"format_version": 1, "shape": list(s["shape"]), "order": "row-major (l, theta)",
            "k_sigma": args.sigma, "l_grid": lg.tolist(), "theta_grid": theta.tolist()}
    mesh.update({c: np.asarray(s[c]).tolist() for c in cols[2:]})
    write_json(out / "mesh.json", mesh)
    if not args.no_figures:
        plotting.tunnel_sections(s, out / "tunnel_sections.png")
    _echo_config(args, out)
    print(out / "mesh.csv")


def _score_inputs(args):
    from .preprocess import tracks as T
    from .trajectory import Trajectory

    if bool(args.points) == bool(args.tracks):
        raise UsageError("give exactly one of --points or --tracks")
    if args.points:
        c = read_cloud(args.points)
        P = np.column_stack([c["x"], c["y"], c["l"]])
        ch = {k: c[k] for k in ("S_x", "S_y", "S_h") if k in c}
        times = c.get("time")
        return [Trajectory(P, ch, times=times, ident=Path(args.points).stem)]
    if not args.geometry:
        raise T.SchemaError("track input needs --geometry (fields 'faf' and 'threshold')")
    geom = T.read_geometry(args.geometry)
    from .preprocess.geodesy import build_ils_frame

    frame = build_ils_frame(geom)
    out = []
    for tr in T.read_tracks(args.tracks):
        t = T.prepare_track(tr, frame, (-math.inf, math.inf), args.kalman_iterations)
        if t is not None:
            out.append(t)
    return out


def cmd_score(args):
    from . import evaluation as E
    from . import plotting

    model = _load_model(args.model, "tunnel")
    fields = _load_fields(args.fields)
    trajs = _score_inputs(args)
    out = _out_dir(args)
    alerts = 0
    with open(out / "conformance.jsonl", "w") as fh:
        for tr in trajs:
            recs = list(E.conformance_stream(tr, model, fields, args.thresholds))
            for r in recs:
                d = r.to_dict()
                d["track"] = tr.ident
                fh.write(json.dumps(d, sort_keys=True) + "\n")
                alerts += any(r.alerts.values())
            if not args.no_figures:
                plotting.conformance_trace(recs, out / f"conformance_{tr.ident}.png", args.thresholds)
    _echo_config(args, out)
    print(json.dumps({"records": str(out / "conformance.jsonl"), "samples_with_alerts": alerts}))


def cmd_sample(args):
    from . import tgp

    if args.n < 0:
        raise UsageError("--n must be non-negative")
    model = _load_model(args.model, "tunnel")
    fields = _load_fields(args.fields)
    lg = model.scalers.unscale_l(np.linspace(-1.0, 1.0, args.n_l))
    trajs = tgp.sample_trajectories(model, fields, args.n, lg, seed=args.seed)
    out = _out_dir(args)
    names = [f.channel for f in fields]
    cols = [[], [], [], []] + [[] for _ in names]
    for i, t in enumerate(trajs):
        cols[0].extend([i] * len(t))
        for k in range(3):
            cols[k + 1].extend(t.points[:, k])
        for j, nm in enumerate(names):
            cols[4 + j].extend(t.channels[nm])
    write_csv(out / "samples.csv", ["trajectory", "x", "y", "l"] + names, cols)
    _echo_config(args, out)
    print(out / "samples.csv")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _training_flags(p, track_defaults_note=True):
    p.add_argument("--seed", type=int, default=0, help="random seed for batches and initialisation (default 0)")
    p.add_argument("--steps", type=_positive_int, default=3000, help="tunnel training steps (default 3000)")
    p.add_argument("--batch-size", type=_positive_int, default=800, help="tunnel minibatch size (default 800)")
    p.add_argument("--learning-rate", type=float, default=1e-2,
                   help="Adam learning rate, betas (0.9, 0.999), linear decay to 10%% over the second half "
                        "(default 0.01)")
    p.add_argument("--weighting", choices=("slice", "polar"), default="slice",
                   help="diametral fit weighting (default slice: 1/|rho| weights, exact for Gaussian sections)")
    p.add_argument("--pole-steps", type=_positive_int, default=1500, help="pole training steps (default 1500)")


def build_parser():
    p = argparse.ArgumentParser(prog="tunnelgp", description="Tunnel Gaussian process models for trajectory bundles.")
    p.add_argument("--config", help="JSON file of flag values (flags on the command line take precedence)")
    p.add_argument("--threads", type=_positive_int, default=1,
                   help="cap on worker threads for linear algebra (default 1, which keeps runs byte-identical)")
    p.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="sample a synthetic structure to CSV")
    s.add_argument("--structure", required=True, type=str.upper, choices=("S1", "S2", "S3"))
    s.add_argument("--n", type=int, default=500000, help="number of points (default 500000)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=".", help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("simulate", help="write simulated approach tracks and their geometry")
    s.add_argument("--n-tracks", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--heavy-fraction", type=float, default=0.3)
    s.add_argument("--geometry", help="geometry JSON (default: a built-in 23 degree runway fixture)")
    s.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser(
        "train",
        help="fit scalers, pole and tunnel (plus channel fields for tracks)",
        description="Defaults. Synthetic clouds: pole M=10, pole batch 400, tunnel batch 800, 8 angles x 5 "
                    "levels. Track data: pole M=100, tunnel M=300 (30 angles x 10 levels), batch 800, channel "
                    "fields M=512 (8^3) with batch 1000. Track models are fitted per wake category.",
    )
    s.add_argument("--cloud", help="CSV with columns x, y, l")
    s.add_argument("--tracks", help="track CSV or JSONL")
    s.add_argument("--geometry", help="geometry JSON, required with --tracks")
    s.add_argument("--out", default="model")
    _training_flags(s)
    s.add_argument("--num-angles", type=_positive_int, default=None,
                   help="inducing angles per level on [0, pi) (default 8 synthetic, 30 tracks)")
    s.add_argument("--num-levels", type=_positive_int, default=None,
                   help="inducing l levels (default 5 synthetic, 10 tracks)")
    s.add_argument("--pole-inducing", type=_positive_int, default=None,
                   help="pole inducing points (default 10 synthetic, 100 tracks)")
    s.add_argument("--pole-batch-size", type=_positive_int, default=400, help="pole minibatch size (default 400)")
    s.add_argument("--fields", action=argparse.BooleanOptionalAction, default=True,
                   help="also fit S_x, S_y, S_h fields for track input (default on)")
    s.add_argument("--field-inducing", type=_positive_int, default=512, help="field inducing points (default 512)")
    s.add_argument("--field-batch-size", type=_positive_int, default=1000, help="field minibatch (default 1000)")
    s.add_argument("--field-steps", type=_positive_int, default=2000, help="field training steps (default 2000)")
    s.add_argument("--kalman-iterations", type=_positive_int, default=20, help="EM iterations (default 20)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("inspect", help="summarise a tunnel model")
    s.add_argument("--model", required=True, help="tunnel model file, or a directory holding tunnel.json")
    s.add_argument("--structure", type=str.upper, choices=("S1", "S2", "S3"),
                   help="compare the pole against this synthetic structure")
    s.add_argument("--n-l", type=_positive_int, default=11)
    s.add_argument("--out", help="also write the report here")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("eval", help="grid RMSE of GMM, mGMM and TGP against the true density")
    s.add_argument("--cloud", required=True)
    s.add_argument("--structure", required=True, type=str.upper, choices=("S1", "S2", "S3"))
    s.add_argument("--methods", default="gmm,mgmm,tgp")
    s.add_argument("--ladder", type=_ladder, default=[1, 2, 4, 8, 16], help="R values (default 1,2,4,8,16)")
    s.add_argument("--step", type=float, default=0.2, help="grid width (default 0.2)")
    s.add_argument("--num-levels", type=_positive_int, default=5,
                   help="TGP inducing levels; M = R x levels (default 5)")
    s.add_argument("--out", default="eval")
    s.add_argument("--no-figures", action="store_true")
    _training_flags(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export", help="tunnel boundary mesh as CSV and JSON")
    s.add_argument("--model", required=True, help="tunnel model file, or a directory holding tunnel.json")
    s.add_argument("--sigma", type=float, default=2.0, help="band half-width in standard deviations (default 2)")
    s.add_argument("--n-theta", type=_positive_int, default=72)
    s.add_argument("--n-l", type=_positive_int, default=21)
    s.add_argument("--out", default="mesh")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("score", help="Z-score conformance of tracks against a tunnel")
    s.add_argument("--model", required=True, help="tunnel model file, or a directory holding tunnel.json")
    s.add_argument("--fields", nargs="*", help="channel field model files or directories holding field_*.json")
    s.add_argument("--points", help="CSV with x, y, l and optional S_x, S_y, S_h, time columns")
    s.add_argument("--tracks", help="track CSV or JSONL")
    s.add_argument("--geometry")
    s.add_argument("--thresholds", type=_floats, default=[2.0, 3.0], help="alert thresholds (default 2,3)")
    s.add_argument("--kalman-iterations", type=_positive_int, default=20)
    s.add_argument("--out", default="score")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("sample", help="draw trajectories from a tunnel and its fields")
    s.add_argument("--model", required=True, help="tunnel model file, or a directory holding tunnel.json")
    s.add_argument("--fields", nargs="*")
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--n-l", type=_positive_int, default=41)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="samples")
    s.set_defaults(func=cmd_sample)
    for sp in sub.choices.values():
        # accepted after the subcommand too; the value is read before parsing
        sp.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    return p


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = read_json(known.config)
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    top = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    parser.set_defaults(**{k: v for k, v in top.items() if k in ("threads", "log_level")})
    for name, sp in subs.choices.items():
        dests = {a.dest for a in sp._actions}
        vals = {k: v for k, v in top.items() if k in dests}
        vals.update({k: v for k, v in cfg.get(name, {}).items() if k in dests})
        sp.set_defaults(**vals)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, ValueError, UsageError) as exc:
        print(f"tunnelgp: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    import torch

    from .svgp import NumericalError, TrainingError

    torch.set_num_threads(args.threads)
    os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    try:
        args.func(args)
    except UsageError as exc:
        print(f"tunnelgp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, TrainingError) as exc:
        print(f"tunnelgp: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError, KeyError) as exc:
        print(f"tunnelgp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
