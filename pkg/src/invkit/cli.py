"""Command-line driver: ``invkit {simulate,reconstruct,train,benchmark}``.

Exit codes: 0 success, 2 invalid configuration or taxonomy combination,
3 file I/O failure, 4 numerical failure (divergence, non-finite values).
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import io as rawio
from . import solvers
from .bench.metrics import psnr, ssim
from .bench.scenario import (
    RobustnessReport,
    Scenario,
    ScenarioError,
    aggregate_csv,
    perturbed_operator,
    evaluate,
    prepare,
    report_csv,
    robustness_suite,
)
from .learned import dip as dip_mod
from .learned.generative import Generator, csgm_recover, train_generator
from .learned.models import ApproxInverse, ResidualModel, default_approx_inverse, default_unrolled, to_batch
from .learned.training import TrainingError, TrainingRegime, train_noise2noise, train_supervised, train_sure
from .neuralkit import checkpoint
from .neuralkit.layers import build_decoder, build_denoiser
from .neuralkit.optim import Adam
from .neuralkit.tensor import Tensor
from .operators import ForwardOperator, NoiseModel, OperatorError, add_noise, make_operator
from .regularizers import Regularizer

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _config_error(msg):
    return CliError(EXIT_CONFIG, msg)


# --- helpers ---------------------------------------------------------------


def _read_raw(path) -> np.ndarray:
    try:
        return rawio.read_raw(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc


def _write(path: Path, data: bytes | str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, str):
            path.write_text(data)
        else:
            path.write_bytes(data)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc}") from exc


def _operator(cfg, shape=None) -> ForwardOperator:
    spec = cfgmod.operator_spec(cfg, shape)
    if "shape" not in spec:
        raise _config_error("[operator].shape is required when it cannot be taken from an input image")
    try:
        return make_operator(spec)
    except (OperatorError, KeyError, ValueError) as exc:
        raise _config_error(f"invalid operator: {exc}") from exc


def _emit_config(out: Path, cfg):
    _write(out / "resolved.toml", cfgmod.dumps(cfg))


def _solve_cfg(cfg):
    s = cfg["solver"]
    try:
        return solvers.SolveConfig(s.get("step_size"), s["max_iters"], s["tol"], cfg["seed"])
    except ValueError as exc:
        raise _config_error(str(exc)) from exc


def _model_kind_for(method):
    return {"unrolled": "unrolled", "residual": "residual", "pnp": "denoiser", "red": "denoiser", "csgm": "generator"}.get(method)


def _approx_inverse(op, spec):
    if not spec:
        return default_approx_inverse(op)
    try:
        return ApproxInverse.from_spec(op, spec)
    except ValueError as exc:
        raise _config_error(f"[model].inverse: {exc}") from exc


def build_model(cfg, op: ForwardOperator, kind=None):
    """Fresh architecture described by ``[model]``, bound to ``op`` where relevant."""
    m = cfg["model"]
    kind = kind or m["kind"]
    seed = cfg["seed"]
    if kind == "unrolled":
        return default_unrolled(op, m["n_blocks"], m["channels"], m["depth"], seed)
    if kind == "residual":
        net = build_denoiser(m["channels"], m["depth"], seed, residual=False, zero_last=True)
        return ResidualModel(net, _approx_inverse(op, m["inverse"]))
    if kind == "denoiser":
        return _Denoiser(build_denoiser(m["channels"], m["depth"], seed, residual=True, zero_last=True), op.input_shape)
    if kind == "generator":
        return Generator(m["k"], build_decoder(m["k"], m["stages"], seed, op.input_shape, m["channels"]), op.input_shape)
    raise _config_error(f"unknown model kind {kind!r}")


@dataclass
class _Denoiser:
    net: object
    shape: tuple

    def parameters(self):
        return self.net.parameters()

    def manifest(self):
        return ["# denoiser"] + self.net.manifest()

    def __call__(self, y):
        d = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
        return self.net(Tensor(d.reshape((-1, 1) + self.shape)))

    def denoise(self, x):
        return self.net(Tensor(to_batch(x))).data.reshape(np.shape(x))


# --- simulate --------------------------------------------------------------


def cmd_simulate(cfg, args, out: Path):
    x = _read_raw(args.input)
    op = _operator(cfg, x.shape)
    sigma = cfg["operator"]["sigma"]
    if not sigma >= 0:
        raise _config_error("[operator].sigma must be nonnegative")
    try:
        y = add_noise(op.apply(x), NoiseModel(sigma, cfg["seed"]))
    except OperatorError as exc:
        raise _config_error(str(exc)) from exc
    cfg["operator"]["shape"] = list(x.shape)
    _write(out / "measurement.ivk", rawio.encode_raw(y))
    _emit_config(out, cfg)


# --- reconstruct -----------------------------------------------------------

CLASSICAL = ("approx_inverse", "ml_least_squares", "prox_gradient", "admm", "dip", "phase_retrieval")
LEARNED = ("unrolled", "residual", "pnp", "red", "csgm")


def _load_model(cfg, op, method):
    path = cfg["model"]["checkpoint"]
    if not path:
        need = "a generator checkpoint" if method == "csgm" else "a trained model checkpoint"
        raise _config_error(f"{method} needs {need} ([model].checkpoint); without training data only classical methods apply")
    model = build_model(cfg, op, _model_kind_for(method))
    try:
        checkpoint.load_into(model, path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read checkpoint {path}: {exc}") from exc
    except checkpoint.CheckpointError as exc:
        raise _config_error(f"checkpoint {path} does not fit [model]: {exc}") from exc
    return model


def _reconstruct(cfg, op, y):
    s = cfg["solver"]
    method = s["method"]
    scfg = _solve_cfg(cfg)
    if method not in CLASSICAL + LEARNED:
        raise _config_error(f"unknown method {method!r}")
    if not op.linear and method not in ("dip", "phase_retrieval"):
        raise _config_error(f"{method} needs a linear operator; use phase_retrieval or dip")
    if method == "phase_retrieval":
        if op.linear:
            raise _config_error("phase_retrieval needs a phase_retrieval operator")
        return solvers.phase_retrieval_gd(op, y, s["restarts"], scfg).reconstruction
    if method == "approx_inverse":
        return _approx_inverse(op, cfg["model"]["inverse"])(y)
    if method == "ml_least_squares":
        return solvers.ml_least_squares(op, y, s["lam"], scfg).reconstruction
    if method in ("prox_gradient", "admm"):
        r = cfg["regularizer"]
        try:
            reg = Regularizer(r["kind"], r["lam"], r["inner_iters"])
        except ValueError as exc:
            raise _config_error(str(exc)) from exc
        if method == "admm":
            return solvers.admm(op, y, reg, s["rho"], scfg).reconstruction
        return solvers.prox_gradient(op, y, reg, scfg).reconstruction
    if method == "dip":
        m = cfg["model"]
        res = dip_mod.dip_reconstruct(
            op, y, iterations=s["iterations"], checkpoint_every=s["checkpoint_every"], seed=cfg["seed"],
            lr=s["lr"], stages=m["stages"], channels=m["channels"],
        )
        return res.best
    model = _load_model(cfg, op, method)
    if method in ("unrolled", "residual"):
        return model(y[None]).data.reshape(op.input_shape)
    if method == "pnp":
        return solvers.pnp_admm(op, y, model.denoise, s["rho"], scfg).reconstruction
    if method == "red":
        return solvers.red_solve(op, y, model.denoise, s["lam"], scfg).reconstruction
    return csgm_recover(model, op, y, s["restarts"], s["steps"], s["lr"], cfg["seed"]).x


def cmd_reconstruct(cfg, args, out: Path):
    y = _read_raw(args.measurement).ravel()
    op = _operator(cfg)
    if y.size != op.output_size:
        raise _config_error(f"measurement has {y.size} values, operator produces {op.output_size}")
    if cfg["solver"]["method"] == "dip":
        h, w = op.input_shape
        f = 2 ** cfg["model"]["stages"]
        if h % f or w % f:
            raise _config_error(f"dip decoder with {cfg['model']['stages']} stages needs image sides divisible by {f}")
    xhat = _reconstruct(cfg, op, y)
    if not np.all(np.isfinite(xhat)):
        raise CliError(EXIT_NUMERIC, "reconstruction contains non-finite values")
    _write(out / "reconstruction.ivk", rawio.encode_raw(xhat))
    _write(out / "reconstruction.pgm", rawio.encode_pgm(xhat))
    if args.truth:
        x = _read_raw(args.truth)
        if x.shape != xhat.shape:
            raise _config_error(f"ground truth shape {x.shape} != reconstruction shape {xhat.shape}")
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("method", "psnr_db", "ssim"))
        s = ssim(x, xhat) if min(x.shape) >= 8 else float("nan")
        w.writerow((cfg["solver"]["method"], repr(psnr(x, xhat)), repr(s)))
        _write(out / "metrics.csv", buf.getvalue())
    _emit_config(out, cfg)


# --- train -----------------------------------------------------------------


def _dataset(path: Path):
    """``<stem>.x.ivk`` clean images, ``<stem>.y.ivk`` measurements, ``<stem>.xt.ivk`` noisy targets."""
    if not path.is_dir():
        raise CliError(EXIT_IO, f"dataset directory {path} not found")
    groups: dict[str, dict[str, np.ndarray]] = {}
    for f in sorted(path.glob("*.ivk")):
        stem, _, tag = f.name[: -len(".ivk")].rpartition(".")
        if tag not in ("x", "y", "xt") or not stem:
            continue
        groups.setdefault(stem, {})[tag] = _read_raw(f)
    return groups


def _stack(groups, tags):
    stems = sorted(s for s, g in groups.items() if all(t in g for t in tags))
    if not stems:
        return stems, []
    try:
        return stems, [np.stack([groups[s][t] for s in stems]) for t in tags]
    except ValueError as exc:
        raise _config_error(f"dataset files disagree in shape: {exc}") from exc


def cmd_train(cfg, args, out: Path):
    t = cfg["training"]
    regime = t["regime"]
    groups = _dataset(Path(args.dataset))
    seed = cfg["seed"]
    needs = {"paired_xy": ("y", "x"), "noise2noise": ("y", "xt"), "x_only": ("x",), "y_only_sure": ("y",), "y_only_gsure": ("y",)}
    if regime not in needs:
        raise _config_error(f"unknown training regime {regime!r}")
    stems, arrays = _stack(groups, needs[regime])
    if not stems:
        raise _config_error(f"{regime} regime needs files tagged {', '.join('.' + n + '.ivk' for n in needs[regime])} in {args.dataset}")
    if regime.startswith("y_only") and "sigma" not in t:
        raise _config_error(f"{regime} regime requires [training].sigma")
    shape_src = arrays[1] if len(arrays) > 1 else arrays[0]
    if regime in ("x_only",):
        shape = arrays[0].shape[1:]
    elif "shape" in cfg["operator"]:
        shape = tuple(cfg["operator"]["shape"])
    else:
        shape = shape_src.shape[1:]
    op = _operator(cfg, shape)
    kind = cfg["model"]["kind"]
    if regime == "x_only" and kind not in ("denoiser", "generator"):
        raise _config_error("x_only training fits a denoiser (pnp/red) or a generator (csgm); set [model].kind")
    if regime != "x_only" and kind not in ("unrolled", "residual"):
        raise _config_error(f"{regime} training needs [model].kind unrolled or residual")
    if regime.startswith("y_only") and kind == "unrolled":
        raise _config_error("measurement-only training is implemented for residual models")
    if regime == "y_only_sure" and op.kind != "identity":
        raise _config_error("y_only_sure is a denoising regime and needs an identity operator; use y_only_gsure")
    lr, epochs, bs = t["lr"], t["epochs"], t["batch_size"]
    ys = None
    if regime != "x_only":
        ys = arrays[0].reshape(len(stems), -1)
        if ys.shape[1] != op.output_size:
            raise _config_error(f"measurements have {ys.shape[1]} values, operator produces {op.output_size}")
    try:
        if kind == "generator":
            m = cfg["model"]
            model, trace = train_generator(arrays[0], m["k"], epochs, seed, m["stages"], m["channels"], m["hidden"], lr, bs, str(args.dataset))
        elif kind == "denoiser":
            sd = t.get("target_sigma", 0.05)
            xs = arrays[0]
            noisy = xs + sd * np.random.default_rng([seed, 3]).standard_normal(xs.shape)
            model = build_model(cfg, op, "denoiser")
            reg = TrainingRegime("paired_xy", noisy.reshape(len(xs), -1), xs).validate()
            trace = train_supervised(model, reg, Adam(model.parameters(), lr), epochs, seed, bs).loss_trace
        else:
            model = build_model(cfg, op, kind)
            optim = Adam(model.parameters(), lr)
            if regime == "paired_xy":
                reg = TrainingRegime(regime, ys, arrays[1]).validate()
                trace = train_supervised(model, reg, optim, epochs, seed, bs).loss_trace
            elif regime == "noise2noise":
                reg = TrainingRegime(regime, ys, arrays[1]).validate()
                trace = train_noise2noise(model, reg, optim, epochs, seed, bs).loss_trace
            else:
                reg = TrainingRegime(regime, ys, sigma=float(t["sigma"])).validate()
                trace = train_sure(model, reg, optim, epochs, seed, bs, t["div"], op).loss_trace
    except ValueError as exc:
        raise _config_error(str(exc)) from exc
    except TrainingError as exc:
        if "non-finite" in str(exc):
            raise CliError(EXIT_NUMERIC, str(exc)) from exc
        raise _config_error(str(exc)) from exc
    cfg["operator"]["shape"] = list(op.input_shape)
    try:
        out.mkdir(parents=True, exist_ok=True)
        checkpoint.save(model, out / "model.ivkw", [f"# regime {regime} seed {seed} images {len(stems)}"])
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write checkpoint: {exc}") from exc
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("epoch", "loss"))
    for i, v in enumerate(trace):
        w.writerow((i, repr(float(v))))
    _write(out / "loss.csv", buf.getvalue())
    _emit_config(out, cfg)


# --- benchmark -------------------------------------------------------------


def scenarios_from_config(cfg) -> list[Scenario]:
    runs = cfg["scenario"]["runs"]
    if not runs:
        raise _config_error("[scenario].runs is empty; nothing to benchmark")
    out = []
    for r in runs:
        op_spec = dict(r.get("operator", cfgmod.operator_spec(cfg)))
        op_spec.pop("shape", None)
        ds = dict(r.get("dataset", {"kind": "shapes", "count": 20, "h": 32, "w": 32}))
        out.append(
            Scenario(
                r["id"], r["knowledge"], r["regime"], r["method"], op_spec, float(r["sigma"]), ds,
                r["perturbation"] or None, r.get("feature"), dict(r.get("params", {})), seed=cfg["seed"],
            )
        )
    return out


def _panel_files(out: Path, rep, pgm=True):
    if not pgm:
        return
    for idx, (x, back, xhat) in sorted(rep.panels.items()):
        _write(out / f"panel_{rep.scenario_id}_{idx:04d}.pgm", rawio.encode_pgm(rawio.side_by_side([x, back, xhat])))
    for idx, err in sorted(rep.error_maps.items()):
        _write(out / f"errmap_{rep.scenario_id}_{idx:04d}.pgm", rawio.encode_pgm(err))


def _flush(out: Path, reports, timing, robustness):
    _write(out / "report.csv", report_csv(reports, timing))
    _write(out / "aggregate.csv", aggregate_csv(reports))
    if robustness:
        _write(out / "robustness.csv", "".join(robustness))
    ood = [r for r in reports if r.square_mae is not None]
    if ood:
        _write(out / "square_mae.csv", "scenario_id,method,square_mae\n" + "".join(f"{r.scenario_id},{r.method},{r.square_mae!r}\n" for r in ood))


def cmd_benchmark(cfg, args, out: Path):
    scenarios = scenarios_from_config(cfg)
    perturbations = list(cfg["scenario"]["robustness"])
    timing, pgm = cfg["output"]["timing"], cfg["output"]["pgm"]
    _emit_config(out, cfg)
    reports, robustness = [], []
    try:
        for s in scenarios:
            if perturbations:
                if s.perturbation:
                    raise _config_error(f"scenario {s.scenario_id}: robustness runs need an unperturbed base scenario")
                rr: RobustnessReport = robustness_suite(s, perturbations, cfg["scenario"]["matched"])
                robustness.append(rr.drop_csv() if not robustness else rr.drop_csv().split("\n", 1)[1])
                new = [rr.baseline] + [rep for _, rep in rr.perturbed]
                for label, rep in rr.perturbed:
                    rep.scenario_id = f"{s.scenario_id}@{label}"
            else:
                prep = prepare(s)
                new = [evaluate(prep, perturbed_operator(s, prep.data.op), s.perturbation)]
            for rep in new:
                _panel_files(out, rep, pgm)
            reports.extend(new)
            _flush(out, reports, timing, robustness)
    except CliError:
        _flush(out, reports, timing, robustness)
        raise
    except ScenarioError as exc:
        _flush(out, reports, timing, robustness)
        raise _config_error(str(exc)) from exc
    _flush(out, reports, timing, robustness)


# --- entry point -----------------------------------------------------------

COMMANDS = {"simulate": cmd_simulate, "reconstruct": cmd_reconstruct, "train": cmd_train, "benchmark": cmd_benchmark}


def _globals(suppress):
    # Subcommands repeat the global flags with suppressed defaults so a flag
    # given before the subcommand is not reset by the subparser.
    g = argparse.ArgumentParser(add_help=False)
    d = {"default": argparse.SUPPRESS} if suppress else {}
    g.add_argument("--config", help="TOML run configuration", **d)
    g.add_argument("--seed", type=int, help="overrides the config seed", **d)
    g.add_argument("--out", help="output directory (default: current directory)", **(d or {"default": "."}))
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _globals(True)
    p = argparse.ArgumentParser(prog="invkit", description="Inverse-problem reconstruction toolkit.", parents=[_globals(False)])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="apply the forward model (and noise) to an image")
    s.add_argument("input", help="raw image file")
    r = sub.add_parser("reconstruct", parents=[common], help="reconstruct an image from a measurement")
    r.add_argument("measurement", help="raw measurement file")
    r.add_argument("--truth", help="ground-truth raw image for metrics")
    t = sub.add_parser("train", parents=[common], help="train a model on a dataset directory")
    t.add_argument("dataset", help="directory of <stem>.{x,y,xt}.ivk files")
    sub.add_parser("benchmark", parents=[common], help="run the configured scenarios")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            cfg = cfgmod.load(args.config, args.seed) if args.config else cfgmod.resolve({}, args.seed)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read config {args.config}: {exc}") from exc
        except (cfgmod.ConfigError, UnicodeDecodeError) as exc:
            raise _config_error(f"invalid config: {exc}") from exc
        COMMANDS[args.command](cfg, args, Path(args.out))
    except CliError as exc:
        print(f"invkit {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (ScenarioError, OperatorError) as exc:
        print(f"invkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"invkit {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TrainingError as exc:
        print(f"invkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
