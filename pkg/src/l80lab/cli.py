"""Command-line pipelines: simulate, train, close, lobes.

Each command resolves its configuration (defaults <- --config file <- CLI
flags), runs the corresponding pipeline, and writes a ``manifest.json``
recording the resolved settings, package version, input hashes and output
names: rerunning a command from its manifest inputs reproduces the outputs
bit-exactly.

Exit codes: 0 ok, 2 config error, 3 numerical blow-up, 4 insufficient data.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__, diagnostics, kernels, lobes, model
from .closure import ClosureSystem, run_closure
from .config import ExperimentConfig
from .errors import (BlowUpError, ConfigError, InsufficientDataError,
                     L80Error)
from .integrate import (Trajectory, read_trajectory, write_trajectory,
                        write_trajectory_csv)
from .mlp import (Parameterization, load_mlp, save_mlp, train_slow_pair,
                  train_vanilla)
from .spectral import FilterSpec, estimate_t_gw

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_NODATA = 4


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out_dir, command, cfg: ExperimentConfig, inputs,
                    outputs, extra=None):
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg.manifest_dict(),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        manifest["extra"] = extra
    path = os.path.join(out_dir, "manifest.json")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def _out_dir(cfg) -> str:
    d = cfg["output.dir"]
    os.makedirs(d, exist_ok=True)
    return d


def _filter_spec(cfg, traj) -> FilterSpec:
    raw = cfg["filter.t_gw_days"]
    t_gw = estimate_t_gw(traj) if raw == "auto" else float(raw)
    return FilterSpec.from_t_gw(t_gw)


def _write_history_csv(path, res):
    hist = res.history
    n = hist["train"].size
    table = np.column_stack([np.arange(n), hist["train"], hist["val"],
                             hist["test"]])
    tmp = f"{path}.tmp.{os.getpid()}"
    np.savetxt(tmp, table, delimiter=",", comments="",
               header="epoch,train,val,test", fmt="%.10g")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    p = cfg.params.replace(dt_model_days=cfg["integration.dt_days"])
    traj = kernels.simulate(p, model.DEFAULT_INITIAL_STATE,
                            cfg["integration.spinup_days"],
                            cfg["integration.record_days"],
                            stride=cfg["integration.stride"])
    outputs = [os.path.join(out, "trajectory.l80t")]
    write_trajectory(outputs[0], traj)
    if cfg["output.csv"]:
        outputs.append(os.path.join(out, "trajectory.csv"))
        write_trajectory_csv(outputs[-1], traj)
    _write_manifest(out, "simulate", cfg, [], outputs,
                    extra={"n_samples": traj.n, "span_days": traj.span_days})
    print(f"simulate: {traj.n} samples over {traj.span_days:g} days "
          f"-> {outputs[0]}")
    return EXIT_OK


def _training_slice(traj: Trajectory, span_days: float,
                    extra_days: float) -> Trajectory:
    need = span_days + extra_days
    if traj.span_days + 1e-9 < need:
        raise InsufficientDataError(
            f"training span {span_days:g} d (+{extra_days:g} d filter "
            f"margin) exceeds the recorded {traj.span_days:g} d")
    return traj.slice_days(traj.t0, traj.t0 + need)


def cmd_train(cfg: ExperimentConfig, kind: str, traj_path: str) -> int:
    out = _out_dir(cfg)
    traj = read_trajectory(traj_path)
    if traj.n_components != 9:
        raise ConfigError("training needs a full 9-component trajectory")
    seed = cfg["train.seed"]
    common = dict(split_mode=cfg["train.split"], seed=seed,
                  epochs=cfg["train.epochs"],
                  learning_rate=cfg["train.learning_rate"],
                  lr_decay=cfg["train.lr_decay"])
    outputs = []
    if kind == "slow_pair":
        spec = _filter_spec(cfg, traj)
        sub = _training_slice(traj, cfg["train.span_days"], spec.window_days)
        param, info = train_slow_pair(sub, spec, arch=cfg.arch(), **common)
        stages = [("z_net", param.z_net, info["z_stage"]),
                  ("x_net", param.x_net, info["x_stage"])]
    elif kind == "vanilla":
        sub = _training_slice(traj, cfg["train.span_days"], 0.0)
        param, info = train_vanilla(sub, arch=cfg.arch(), **common)
        stages = [("x_net", param.x_net, info["x_stage"])]
    else:
        raise ConfigError(f"unknown training kind {kind!r}")

    n_hidden, width = cfg.arch()
    for name, net, res in stages:
        path = os.path.join(out, f"{name}.l80n")
        save_mlp(path, net, sidecar={
            "kind": kind, "stage": name,
            "architecture": {"hidden_layers": n_hidden, "width": width,
                             "in_dim": net.in_dim, "out_dim": net.out_dim},
            "seed": seed, "split_mode": cfg["train.split"],
            "best_epoch": res.best_epoch, "final_losses": res.final_losses,
        })
        hist_path = os.path.join(out, f"loss_history_{name}.csv")
        _write_history_csv(hist_path, res)
        outputs += [path, f"{path}.json", hist_path]
    _write_manifest(out, f"train:{kind}", cfg, [traj_path], outputs)
    losses = {name: res.final_losses["test"] for name, _, res in stages}
    print(f"train {kind}: test losses {losses} -> {out}")
    return EXIT_OK


def _load_parameterization(model_dir: str) -> Parameterization:
    x_path = os.path.join(model_dir, "x_net.l80n")
    z_path = os.path.join(model_dir, "z_net.l80n")
    if not os.path.exists(x_path):
        raise ConfigError(f"no x_net.l80n under {model_dir}")
    x_net = load_mlp(x_path)
    if os.path.exists(z_path):
        return Parameterization("slow_pair", x_net=x_net,
                                z_net=load_mlp(z_path))
    return Parameterization("vanilla", x_net=x_net)


def _closure_y0(cfg, truth: Trajectory) -> np.ndarray:
    raw = cfg["closure.y0"]
    if raw == "attractor":
        return truth.y_block()[0].copy()
    try:
        vals = np.array([float(v) for v in raw.split(",")])
        if vals.shape != (3,):
            raise ValueError
        return vals
    except ValueError:
        raise ConfigError("closure y0 must be 'attractor' or three "
                          "comma-separated numbers") from None


def cmd_close(cfg: ExperimentConfig, traj_path: str, model_dir: str) -> int:
    out = _out_dir(cfg)
    truth = read_trajectory(traj_path)
    if truth.n_components != 9:
        raise ConfigError("closure diagnostics need the 9-component truth")
    param = _load_parameterization(model_dir)
    p = cfg.params.replace(dt_model_days=cfg["closure.dt_days"])
    sys_ = ClosureSystem(p, param)
    dt = cfg["closure.dt_days"]
    stride = cfg["closure.stride"]
    if abs(dt * stride - truth.dt) > 1e-12:
        raise ConfigError("closure sampling (dt_days*stride) must match the "
                          "truth trajectory's interval for the spectral "
                          "comparison")
    y0 = _closure_y0(cfg, truth)

    outputs = []
    try:
        ctraj = run_closure(sys_, y0, dt=dt, days=cfg["closure.days"],
                            stride=stride, with_x=cfg["closure.with_x"])
    except BlowUpError as exc:
        if exc.partial is not None:
            path = os.path.join(out, "closure_partial.l80t")
            write_trajectory(path, exc.partial)
            outputs.append(path)
        _write_manifest(out, "close", cfg, _close_inputs(traj_path, model_dir),
                        outputs, extra={"blow_up_step": exc.step})
        print(f"close: {exc}", file=sys.stderr)
        return EXIT_BLOWUP

    traj_out = os.path.join(out, "closure.l80t")
    write_trajectory(traj_out, ctraj)
    outputs.append(traj_out)
    if cfg["output.csv"]:
        outputs.append(os.path.join(out, "closure.csv"))
        write_trajectory_csv(outputs[-1], ctraj)

    # offline residual, band-power comparison, lobe statistics
    resid, means = diagnostics.hf_residual(truth, param)
    resid_path = os.path.join(out, "hf_residual.csv")
    diagnostics.write_residual_csv(resid_path, truth.times(), resid)
    outputs.append(resid_path)

    ratios = diagnostics.spectral_deficit(truth, ctraj)
    deficit_path = os.path.join(out, "spectral_deficit.csv")
    tmp = f"{deficit_path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write("component,band_power_ratio\n")
        for j, r in enumerate(ratios, start=1):
            fh.write(f"y{j},{r:.10g}\n")
    os.replace(tmp, deficit_path)
    outputs.append(deficit_path)

    outputs += _lobe_outputs(cfg, ctraj, out)
    _write_manifest(out, "close", cfg, _close_inputs(traj_path, model_dir),
                    outputs, extra={
                        "hf_residual_means": means.tolist(),
                        "spectral_deficit": ratios.tolist()})
    print(f"close: {ctraj.n} samples, deficit {np.round(ratios, 4).tolist()} "
          f"-> {out}")
    return EXIT_OK


def _close_inputs(traj_path, model_dir):
    ins = [traj_path, os.path.join(model_dir, "x_net.l80n")]
    z = os.path.join(model_dir, "z_net.l80n")
    if os.path.exists(z):
        ins.append(z)
    return ins


def _lobe_outputs(cfg, traj: Trajectory, out: str):
    spec = lobes.LobeSpec(y_b=cfg["lobes.y_b"],
                          component=cfg["lobes.component"] - 1)
    series = lobes.lobe_series(traj, spec)
    _, records = lobes.detect_transitions(series, traj.dt, spec, t0=traj.t0)
    rec_path = os.path.join(out, "sojourn_records.csv")
    lobes.write_records_csv(rec_path, records)
    outputs = [rec_path]
    fit = None
    if records:
        hist = lobes.sojourn_histogram(records, cfg["lobes.bin_width_days"])
        try:
            fit = lobes.fit_exponential(hist, min_count=cfg["lobes.min_count"],
                                        t_min=cfg["lobes.fit_t_min"])
        except InsufficientDataError:
            fit = None
        hist_path = os.path.join(out, "sojourn_histogram.csv")
        lobes.write_histogram_csv(hist_path, hist, fit)
        outputs.append(hist_path)
    summary_path = os.path.join(out, "lobe_summary.txt")
    tmp = f"{summary_path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(lobes.summary_text(records, fit))
    os.replace(tmp, summary_path)
    outputs.append(summary_path)
    return outputs


def cmd_lobes(cfg: ExperimentConfig, traj_path: str) -> int:
    out = _out_dir(cfg)
    traj = read_trajectory(traj_path)
    outputs = _lobe_outputs(cfg, traj, out)
    _write_manifest(out, "lobes", cfg, [traj_path], outputs)
    print(open(outputs[-1]).read().rstrip())
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", metavar="PATH", help="config file")
    sub.add_argument("--regime", choices=("hlf", "slow"),
                     help="named parameter preset")
    sub.add_argument("--seed", type=int, help="u64 seed for all randomness")
    sub.add_argument("--split", choices=("random", "predefined"),
                     help="dataset split protocol")
    sub.add_argument("--arch", metavar="LxP",
                     help="hidden layers x neurons, e.g. 1x5")
    sub.add_argument("--out", metavar="DIR", help="output directory")
    sub.add_argument("--csv", action="store_true", default=None,
                     help="also export trajectories as CSV")
    sub.add_argument("--stride", type=int, metavar="N",
                     help="recording stride in steps")


def _overrides(args) -> dict:
    ov = {
        "model.regime": args.regime,
        "train.seed": args.seed,
        "train.split": args.split,
        "train.arch": args.arch,
        "output.dir": args.out,
        "output.csv": args.csv,
        "integration.stride": args.stride,
    }
    if args.stride is not None:
        ov["closure.stride"] = args.stride
    return ov


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="l80lab",
        description="Nine-component Lorenz (1980) model laboratory")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="integrate the full model")
    _add_common(s)

    s = sub.add_parser("train", help="fit a parameterization offline")
    s.add_argument("kind", choices=("slow_pair", "vanilla"))
    s.add_argument("trajectory", help="L80T file from 'simulate'")
    _add_common(s)

    s = sub.add_parser("close", help="run a neural closure online")
    s.add_argument("trajectory", help="truth L80T file (for y0, residual "
                                      "and spectra)")
    s.add_argument("models", help="directory holding x_net.l80n "
                                  "(and z_net.l80n for a slow pair)")
    _add_common(s)

    s = sub.add_parser("lobes", help="lobe transition statistics")
    s.add_argument("trajectory", help="L80T file to analyze")
    _add_common(s)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config, _overrides(args))
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.kind, args.trajectory)
        if args.command == "close":
            return cmd_close(cfg, args.trajectory, args.models)
        return cmd_lobes(cfg, args.trajectory)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"numerical blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except InsufficientDataError as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return EXIT_NODATA
    except L80Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
