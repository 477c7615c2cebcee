"""Taxonomy-aware experiment harness.

A scenario names a cell of the (forward-model knowledge x training data)
taxonomy, a forward operator, a dataset, and a reconstruction method. Running
it generates the data, trains whatever the method needs, reconstructs the
held-out images and scores them.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import solvers
from ..learned import dip as dip_mod
from ..learned.generative import csgm_recover, train_generator
from ..learned.models import ApproxInverse, ResidualModel, default_approx_inverse, default_unrolled, to_batch
from ..learned.training import TrainingRegime, train_noise2noise, train_supervised, train_sure
from ..neuralkit.layers import build_denoiser
from ..neuralkit.optim import Adam
from ..neuralkit.tensor import Tensor
from ..operators import ForwardOperator, OperatorError, make_operator
from ..regularizers import Regularizer
from .metrics import SSIM_K1, SSIM_K2, SSIM_WINDOW, psnr, region_mae, ssim
from .perturb import parse_perturbation, perturb_operator
from .phantoms import make_dataset, square_slices, train_test_split, insert_feature

KNOWLEDGE = ("known_train_test", "known_test_only", "partial", "unknown")
REGIME_KINDS = ("paired_xy", "x_only", "y_only_sure", "y_only_gsure", "noise2noise", "none")

# Classical solvers and untrained priors need nothing but A at test time.
CLASSICAL = ("approx_inverse", "ml_least_squares", "prox_gradient", "admm", "dip")
A_KNOWN_AT_TEST = ("known_train_test", "known_test_only")

LEARNED = {
    ("known_train_test", "paired_xy"): ("unrolled", "residual"),
    ("known_train_test", "x_only"): ("pnp", "red", "csgm"),
    ("known_train_test", "y_only_sure"): ("sure",),
    ("known_train_test", "y_only_gsure"): ("gsure",),
    ("known_train_test", "noise2noise"): ("noise2noise",),
    ("known_test_only", "x_only"): ("csgm", "pnp", "red"),
    ("partial", "paired_xy"): ("residual",),
    ("partial", "noise2noise"): ("noise2noise",),
    ("unknown", "paired_xy"): ("residual",),
}

REJECTED = {
    ("known_test_only", "paired_xy"): "paired training data implies the operator used to make them; use the known_train_test cell",
    ("known_test_only", "y_only_sure"): "SURE training needs the forward operator during training",
    ("known_test_only", "y_only_gsure"): "GSURE training needs the forward operator during training",
    ("known_test_only", "noise2noise"): "noise2noise pairs are generated with the training operator; use the known_train_test cell",
    ("partial", "x_only"): "image-only training cannot correct a partially known operator",
    ("partial", "y_only_sure"): "SURE needs the exact forward operator and noise level",
    ("partial", "y_only_gsure"): "GSURE needs the exact forward operator and noise level",
    ("partial", "none"): "no training data and no exact operator leaves nothing to reconstruct with",
    ("unknown", "x_only"): "unknown operator: limited options without paired (x, y) training samples",
    ("unknown", "y_only_sure"): "unknown operator: limited options without paired (x, y) training samples",
    ("unknown", "y_only_gsure"): "unknown operator: limited options without paired (x, y) training samples",
    ("unknown", "noise2noise"): "unknown operator: limited options without paired (x, y) training samples",
    ("unknown", "none"): "unknown operator: limited options without paired (x, y) training samples",
}

METHOD_PARAMS = {
    "epochs", "lr", "batch_size", "channels", "depth", "n_blocks", "k", "stages", "hidden",
    "iterations", "lam", "reg", "rho", "max_iters", "target_sigma", "denoise_sigma", "div",
    "restarts", "steps", "inverse", "checkpoint_every",
}


class ScenarioError(ValueError):
    """A scenario that violates the taxonomy or is internally inconsistent."""


@dataclass
class Scenario:
    scenario_id: str
    knowledge: str
    regime: str
    method: str
    operator: dict
    sigma: float = 0.01
    dataset: dict = field(default_factory=lambda: {"kind": "shapes", "count": 20, "h": 32, "w": 32})
    perturbation: str | None = None
    feature: dict | None = None
    params: dict = field(default_factory=dict)
    metrics: tuple = ("psnr", "ssim")
    seed: int = 0
    # False: a test-time perturbation is an unmodelled error and the
    # reconstructor keeps the nominal operator. True: it is told the new one.
    bind_test_operator: bool = False

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def allowed_methods(knowledge, regime) -> tuple[str, ...]:
    learned = LEARNED.get((knowledge, regime), ())
    classical = CLASSICAL if knowledge in A_KNOWN_AT_TEST else ()
    return learned + classical


def cell_matrix():
    """``{(knowledge, regime): methods or rejection reason}`` for every pair."""
    out = {}
    for k in KNOWLEDGE:
        for r in REGIME_KINDS:
            methods = allowed_methods(k, r)
            out[(k, r)] = methods if methods else REJECTED[(k, r)]
    return out


def validate_scenario(s: Scenario) -> Scenario:
    if s.knowledge not in KNOWLEDGE:
        raise ScenarioError(f"unknown forward-model knowledge {s.knowledge!r}")
    if s.regime not in REGIME_KINDS:
        raise ScenarioError(f"unknown training regime {s.regime!r}")
    cell = f"({s.knowledge}, {s.regime})"
    methods = allowed_methods(s.knowledge, s.regime)
    if not methods:
        raise ScenarioError(f"cell {cell} rejected: {REJECTED[(s.knowledge, s.regime)]}")
    if s.method not in methods:
        why = REJECTED.get((s.knowledge, s.regime))
        why = f" ({why})" if why and s.method not in CLASSICAL else ""
        raise ScenarioError(f"method {s.method!r} is not valid for cell {cell}{why}; allowed: {', '.join(methods)}")
    if s.method in ("sure", "gsure", "noise2noise") and not s.sigma > 0:
        raise ScenarioError(f"{s.method} needs a known noise level sigma > 0")
    if s.method == "sure" and s.operator.get("kind") != "identity":
        raise ScenarioError("sure is a denoising estimator and needs an identity operator; use gsure")
    if s.perturbation and s.method in ("sure", "gsure"):
        raise ScenarioError(f"{s.method} assumes the operator is exact at test time")
    unknown = set(s.params) - METHOD_PARAMS
    if unknown:
        raise ScenarioError(f"unknown method parameters: {', '.join(sorted(unknown))}")
    if s.sigma < 0:
        raise ScenarioError("sigma must be nonnegative")
    ds = s.dataset
    if int(ds.get("count", 0)) < 2:
        raise ScenarioError("dataset needs at least two images for a train/test split")
    return s


# --- data ------------------------------------------------------------------


@dataclass
class ScenarioData:
    op: ForwardOperator
    images: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    train_y: np.ndarray

    @property
    def train_x(self):
        return self.images[self.train_idx]


def _measure(op, images, idx, sigma, seed):
    y = op.apply(images)
    if sigma > 0:
        for row, i in enumerate(idx):
            y[row] += sigma * np.random.default_rng([seed, 1, int(i)]).standard_normal(y.shape[-1])
    return y


def make_data(s: Scenario, op: ForwardOperator | None = None) -> ScenarioData:
    """Dataset, split and training measurements; ``op`` overrides the scenario's operator."""
    ds = s.dataset
    h, w = int(ds.get("h", 32)), int(ds.get("w", 32))
    if op is None:
        op = make_operator({"shape": [h, w], **s.operator})
    images = make_dataset(ds.get("kind", "shapes"), int(ds["count"]), h, w, ds.get("seed", s.seed))
    tr, te = train_test_split(len(images), s.seed, float(ds.get("train_fraction", 0.8)))
    return ScenarioData(op, images, tr, te, _measure(op, images[tr], tr, s.sigma, s.seed))


def held_out_set(s: Scenario, data: ScenarioData, test_op: ForwardOperator):
    xs = data.images[data.test_idx]
    if s.feature:
        f = s.feature
        xs = np.stack([insert_feature(x, f.get("size", 4), f.get("intensity", 1.0), f.get("position")) for x in xs])
    return xs, _measure(test_op, xs, data.test_idx, s.sigma, s.seed)


# --- methods ---------------------------------------------------------------


def _p(s, key, default):
    return s.params.get(key, default)


def _inverse_for(s, op):
    kind = _p(s, "inverse", None)
    if s.knowledge == "unknown":
        if op.output_size != op.n:
            raise ScenarioError("unknown-operator residual model needs m == n (identity approximate inverse)")
        return ApproxInverse(op, "identity")
    return ApproxInverse.from_spec(op, kind) if kind else default_approx_inverse(op)


def _residual_net(s, seed_tag):
    return build_denoiser(_p(s, "channels", 16), _p(s, "depth", 3), s.seed + seed_tag, residual=False, zero_last=True)


def _train_denoiser(s, xs):
    """Image-only training: learn to remove synthetic Gaussian noise from clean images."""
    sd = float(_p(s, "denoise_sigma", max(s.sigma, 0.05)))
    noisy = xs + sd * np.random.default_rng([s.seed, 3]).standard_normal(xs.shape)
    net = build_denoiser(_p(s, "channels", 16), _p(s, "depth", 3), s.seed, residual=True, zero_last=True)
    flat = noisy.reshape(len(xs), -1)

    class _Den:
        def parameters(self):
            return net.parameters()

        def __call__(self, y):
            d = y.data if isinstance(y, Tensor) else y
            return net(Tensor(d.reshape((-1, 1) + xs.shape[-2:])))

    regime = TrainingRegime("paired_xy", flat, xs).validate()
    res = train_supervised(_Den(), regime, Adam(net.parameters(), _p(s, "lr", 1e-3)), _p(s, "epochs", 10), s.seed, _p(s, "batch_size", 8))

    def denoise(x):
        return net(Tensor(to_batch(x))).data.reshape(np.shape(x))

    return denoise, res.loss_trace


def train_method(s: Scenario, data: ScenarioData):
    """Return ``(model, loss_trace)``; ``model`` is None for classical methods."""
    m = s.method
    op = data.op
    epochs, lr, bs = _p(s, "epochs", 10), _p(s, "lr", 1e-3), _p(s, "batch_size", 8)
    if m in CLASSICAL:
        return None, []
    if m == "unrolled":
        model = default_unrolled(op, _p(s, "n_blocks", 5), _p(s, "channels", 16), _p(s, "depth", 3), s.seed)
        regime = TrainingRegime("paired_xy", data.train_y, data.train_x).validate()
        res = train_supervised(model, regime, Adam(model.parameters(), lr), epochs, s.seed, bs)
        return model, res.loss_trace
    if m in ("residual", "noise2noise", "sure", "gsure"):
        model = ResidualModel(_residual_net(s, 1), _inverse_for(s, op))
        optim = Adam(model.parameters(), lr)
        if m == "residual":
            regime = TrainingRegime("paired_xy", data.train_y, data.train_x).validate()
            return model, train_supervised(model, regime, optim, epochs, s.seed, bs).loss_trace
        if m == "noise2noise":
            ts = float(_p(s, "target_sigma", s.sigma))
            rng = np.random.default_rng([s.seed, 2])
            targets = data.train_x + ts * rng.standard_normal(data.train_x.shape)
            regime = TrainingRegime("noise2noise", data.train_y, targets).validate()
            return model, train_noise2noise(model, regime, optim, epochs, s.seed, bs).loss_trace
        kind = "y_only_sure" if m == "sure" else "y_only_gsure"
        regime = TrainingRegime(kind, data.train_y, sigma=s.sigma).validate()
        res = train_sure(model, regime, optim, epochs, s.seed, bs, _p(s, "div", "mc:1:1e-3"), op)
        return model, res.loss_trace
    if m in ("pnp", "red"):
        return _train_denoiser(s, data.train_x)
    if m == "csgm":
        gen, trace = train_generator(
            data.train_x, _p(s, "k", 16), epochs, s.seed, _p(s, "stages", 2), _p(s, "channels", 8),
            _p(s, "hidden", 64), _p(s, "lr", 1e-2), bs, s.scenario_id,
        )
        return gen, trace
    raise ScenarioError(f"unknown method {m!r}")


def reconstruct(s: Scenario, model, test_op: ForwardOperator, y, image_id) -> np.ndarray:
    """Reconstruct one measurement, using ``test_op`` as the reconstructor's forward model."""
    m = s.method
    cfg = solvers.SolveConfig(max_iters=_p(s, "max_iters", 100), seed=s.seed)
    if m == "approx_inverse":
        return _inverse_for(s, test_op)(y)
    if m == "ml_least_squares":
        return solvers.ml_least_squares(test_op, y, _p(s, "lam", 1e-3), cfg).reconstruction
    if m in ("prox_gradient", "admm"):
        reg = Regularizer.parse(_p(s, "reg", "tv:0.01"))
        if m == "admm":
            return solvers.admm(test_op, y, reg, _p(s, "rho", 1.0), cfg).reconstruction
        return solvers.prox_gradient(test_op, y, reg, cfg).reconstruction
    if m == "dip":
        res = dip_mod.dip_reconstruct(
            test_op, y, iterations=_p(s, "iterations", 200), checkpoint_every=_p(s, "checkpoint_every", 0),
            seed=s.seed, lr=_p(s, "lr", 0.01), channels=_p(s, "channels", 16),
            stages=_p(s, "stages", 2),
        )
        return res.best
    if m == "unrolled":
        bound = model if model.op is test_op else model.with_operator(test_op)
        return bound(y[None]).data.reshape(test_op.input_shape)
    if m in ("residual", "noise2noise", "sure", "gsure"):
        if model.approx_inverse.op is not test_op and s.knowledge != "unknown":
            model = ResidualModel(model.g, _inverse_for(s, test_op))
        return model(y[None]).data.reshape(test_op.input_shape)
    if m == "pnp":
        return solvers.pnp_admm(test_op, y, model, _p(s, "rho", 1.0), cfg).reconstruction
    if m == "red":
        return solvers.red_solve(test_op, y, model, _p(s, "lam", 0.1), cfg).reconstruction
    if m == "csgm":
        return csgm_recover(model, test_op, y, _p(s, "restarts", 2), _p(s, "steps", 200), 0.05, [s.seed, int(image_id)]).x
    raise ScenarioError(f"unknown method {m!r}")


# --- reports ---------------------------------------------------------------

REPORT_COLUMNS = ("scenario_id", "method", "image_id", "psnr_db", "ssim", "runtime_ms", "seed")
AGGREGATE_COLUMNS = ("scenario_id", "method", "psnr_mean", "psnr_median", "ssim_mean", "n")


@dataclass
class ImageResult:
    image_id: int
    psnr_db: float
    ssim: float
    runtime_ms: float
    seed: int


@dataclass
class Report:
    scenario_id: str
    method: str
    results: list[ImageResult]
    provenance: dict
    panels: dict = field(default_factory=dict)
    error_maps: dict = field(default_factory=dict)
    square_mae: float | None = None
    loss_trace: list = field(default_factory=list)

    def psnrs(self):
        return np.array([r.psnr_db for r in self.results])

    @property
    def psnr_median(self):
        return float(np.median(self.psnrs())) if self.results else math.nan

    def aggregate(self) -> dict:
        p = self.psnrs()
        return {
            "scenario_id": self.scenario_id,
            "method": self.method,
            "psnr_mean": float(np.mean(p)) if p.size else math.nan,
            "psnr_median": self.psnr_median,
            "ssim_mean": float(np.mean([r.ssim for r in self.results])) if self.results else math.nan,
            "n": len(self.results),
        }


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_csv(reports, timing=False) -> str:
    """Per-image rows. ``runtime_ms`` is left blank unless ``timing`` so reruns stay byte-identical."""
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(REPORT_COLUMNS)
    for rep in reports:
        for r in rep.results:
            rt = _fmt(r.runtime_ms) if timing else ""
            out.writerow([rep.scenario_id, rep.method, r.image_id, _fmt(r.psnr_db), _fmt(r.ssim), rt, r.seed])
    return buf.getvalue()


def aggregate_csv(reports) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(AGGREGATE_COLUMNS)
    for rep in reports:
        agg = rep.aggregate()
        out.writerow([_fmt(agg[c]) for c in AGGREGATE_COLUMNS])
    return buf.getvalue()


# --- running ---------------------------------------------------------------


@dataclass
class Prepared:
    scenario: Scenario
    data: ScenarioData
    model: object
    loss_trace: list


def prepare(s: Scenario, op: ForwardOperator | None = None) -> Prepared:
    validate_scenario(s)
    data = make_data(s, op)
    model, trace = train_method(s, data)
    return Prepared(s, data, model, list(trace))


def perturbed_operator(s, op, perturbation=None):
    spec = perturbation if perturbation is not None else s.perturbation
    if not spec:
        return op
    kind, amount = parse_perturbation(spec)
    return perturb_operator(op, kind, amount, seed=[s.seed, 5])


def evaluate(prep: Prepared, test_op: ForwardOperator, label=None) -> Report:
    s = prep.scenario
    xs, ys = held_out_set(s, prep.data, test_op)
    recon_op = test_op if s.bind_test_operator else prep.data.op
    back = default_approx_inverse(recon_op) if recon_op.linear else None
    results, panels, maps, maes = [], {}, {}, []
    sq = square_slices(xs.shape[-2:], s.feature.get("size", 4), s.feature.get("position")) if s.feature else None
    for x, y, idx in zip(xs, ys, prep.data.test_idx):
        idx = int(idx)
        t0 = time.perf_counter()
        try:
            xhat = np.asarray(reconstruct(s, prep.model, recon_op, y, idx), dtype=np.float64)
        except (FloatingPointError, OperatorError) as exc:
            raise solvers.DivergenceError(f"{s.method} failed on image {idx}: {exc}") from exc
        rt = (time.perf_counter() - t0) * 1000.0
        if not np.all(np.isfinite(xhat)):
            raise solvers.DivergenceError(f"{s.method} produced non-finite values on image {idx}")
        results.append(ImageResult(idx, psnr(x, xhat), ssim(x, xhat), rt, s.seed))
        panels[idx] = (x, back(y) if back is not None else np.zeros_like(x), xhat)
        if sq is not None:
            maps[idx] = np.abs(xhat - x)
            maes.append(region_mae(x, xhat, *sq))
    prov = {
        "config_hash": s.config_hash(),
        "seed": s.seed,
        "cell": [s.knowledge, s.regime],
        "test_operator": label or "nominal",
        "ssim": {"window": SSIM_WINDOW, "k1": SSIM_K1, "k2": SSIM_K2, "peak": 1.0},
    }
    return Report(
        s.scenario_id, s.method, results, prov, panels, maps,
        float(np.mean(maes)) if maes else None, prep.loss_trace,
    )


def run_scenario(s: Scenario) -> Report:
    prep = prepare(s)
    return evaluate(prep, perturbed_operator(s, prep.data.op), s.perturbation)


@dataclass
class RobustnessReport:
    """Baseline (nominal test operator) and one report per perturbation.

    With matched references, ``matched`` holds, per perturbation, a report
    from a model trained on the perturbed operator itself and tested on the
    same data, so ``matched_drop`` isolates the train/test mismatch from how
    hard the perturbed problem is on its own.
    """

    baseline: Report
    perturbed: list[tuple[str, Report]]
    matched: dict = field(default_factory=dict)

    def drop_table(self) -> list[dict]:
        base = self.baseline.psnr_median
        rows = [{"perturbation": "none", "psnr_median": base, "psnr_drop": 0.0, "matched_drop": 0.0}]
        for label, rep in self.perturbed:
            ref = self.matched.get(label)
            md = ref.psnr_median - rep.psnr_median if ref is not None else math.nan
            rows.append({"perturbation": label, "psnr_median": rep.psnr_median, "psnr_drop": base - rep.psnr_median, "matched_drop": md})
        return rows

    def reports(self) -> list[Report]:
        return [self.baseline] + [r for _, r in self.perturbed]

    def drop_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(("scenario_id", "perturbation", "psnr_median", "psnr_drop", "matched_drop"))
        for row in self.drop_table():
            out.writerow([self.baseline.scenario_id, row["perturbation"]] + [_fmt(row[k]) for k in ("psnr_median", "psnr_drop", "matched_drop")])
        return buf.getvalue()


def robustness_suite(base: Scenario, perturbations, matched=False) -> RobustnessReport:
    """Train once on the nominal operator, then test under each perturbation.

    The trained model is reused for every row. With ``matched``, a second
    model is trained on each perturbed operator (same seed and data) as the
    matched-testing reference.
    """
    if base.perturbation:
        raise ScenarioError("the base scenario must use the unperturbed operator")
    prep = prepare(base)
    baseline = evaluate(prep, prep.data.op)
    rows, refs = [], {}
    for spec in perturbations:
        test_op = perturbed_operator(base, prep.data.op, spec)
        rows.append((spec, evaluate(prep, test_op, spec)))
        if matched and parse_perturbation(spec)[1] == 0:
            refs[spec] = baseline
        elif matched:
            ref = prepare(base, test_op)
            refs[spec] = evaluate(ref, test_op, spec)
    return RobustnessReport(baseline, rows, refs)
