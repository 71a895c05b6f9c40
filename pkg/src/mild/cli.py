"""Command line driver: ``gen``, ``train``, ``eval``, ``sweep`` and ``check``.

Configuration files hold one ``key = value`` per line; ``#`` starts a comment.
Every key can also be given as a ``--key value`` flag, and ``--seed``
overrides the configured seed.
"""

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import io
from .checks import TIERS, run_suites
from .core import CostType, MarginVector, RewardScheme, evaluate, evaluate_choices
from .exceptions import BudgetExceededError, DivergenceError, InvalidInputError
from .losses import SurrogateSpec
from .synth import LLM_ERROR_ONLY, LLM_ERROR_PLUS_COST, Fidelity, SetupSpec, generate, generate_llm_analog
from .train import (
    MILD,
    TDEF,
    AutoFormula,
    AutoWithValidation,
    Fixed,
    TrainConfig,
    train,
)

logger = logging.getLogger("mild")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_CHECK = 4

ORACLE = "oracle"
GENERATORS = ("setup", "llm_error_only", "llm_error_plus_cost")

DEFAULTS = {
    "generator": "setup",
    "setup": "severe",
    "n_classes": "10",
    "n_samples": "3000",
    "n_test": "1000",
    "dim": "10",
    "radius": "3",
    "sigma": "1",
    "fidelity": "synthetic",
    "cost_type": "error_only",
    "seed": "0",
    "n_seeds": "5",
    "methods": "mild,tdef,oracle",
    "scheme": "lemma1",
    "tau": "1",
    "aggregation": "sum",
    "lam": "1e-3",
    "learning_rate": "auto",
    "epochs": "500",
    "batch_size": "0",
    "rho_mode": "validation",
    "rho": "",
    "rho_bar": "1",
    "neighborhood_halfwidth": "5",
    "step": "1",
    "feature_map": "random_fourier",
    "bandwidth": "3",
    "output_dim": "200",
    "holdout": "0.2",
    "output_dir": "results",
}


def parse_config_text(text):
    """Parse ``key = value`` lines; unknown keys are an error."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise InvalidInputError(f"line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _number(raw, key, kind=float):
    try:
        value = kind(raw)
    except ValueError:
        raise InvalidInputError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None
    if kind is float and not math.isfinite(value):
        raise InvalidInputError(f"{key}: must be finite")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict

    @classmethod
    def from_sources(cls, text=None, overrides=None):
        values = dict(DEFAULTS)
        if text is not None:
            values.update(parse_config_text(text))
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = str(value)
        cfg = cls(values)
        cfg.validate()
        return cfg

    def get(self, key, kind=str):
        raw = self.values[key]
        return raw if kind is str else _number(raw, key, kind)

    @property
    def methods(self):
        return [m.strip().lower() for m in self.values["methods"].split(",") if m.strip()]

    @property
    def seed(self):
        return self.get("seed", int)

    def validate(self):
        if self.get("generator") not in GENERATORS:
            raise InvalidInputError(f"generator must be one of {GENERATORS}")
        bad = [m for m in self.methods if m not in (MILD, TDEF, ORACLE)]
        if bad or not self.methods:
            raise InvalidInputError(f"methods must be a non-empty subset of mild, tdef, oracle; got {bad}")
        if self.get("n_seeds", int) < 1:
            raise InvalidInputError("n_seeds must be >= 1")
        n, n_test = self.get("n_samples", int), self.get("n_test", int)
        if not 0 <= n_test < n:
            raise InvalidInputError("need 0 <= n_test < n_samples")
        try:
            RewardScheme(self.get("scheme"))
            CostType(self.get("cost_type"))
            Fidelity(self.get("fidelity"))
        except ValueError as exc:
            raise InvalidInputError(str(exc)) from None
        self.surrogate_spec()
        self.train_config(self.seed)
        if self.get("generator") == "setup":
            self.setup_spec(self.seed)

    def setup_spec(self, seed):
        return SetupSpec(
            setup=self.get("setup"),
            n_classes=self.get("n_classes", int),
            n_samples=self.get("n_samples", int),
            dim=self.get("dim", int),
            radius=self.get("radius", float),
            sigma=self.get("sigma", float),
            fidelity=self.get("fidelity"),
            cost_type=self.get("cost_type"),
            seed=seed,
        )

    def surrogate_spec(self):
        return SurrogateSpec(self.get("tau", float), self.get("aggregation"))

    def rho_mode(self):
        mode = self.get("rho_mode")
        rho_bar = self.get("rho_bar", float)
        if mode == "formula":
            return AutoFormula(rho_bar)
        if mode == "validation":
            return AutoWithValidation(
                rho_bar, self.get("neighborhood_halfwidth", float), self.get("step", float)
            )
        if mode == "fixed":
            raw = self.get("rho")
            if not raw:
                raise InvalidInputError("rho_mode = fixed needs rho = r1,r2,...")
            return Fixed(MarginVector([_number(v, "rho") for v in raw.split(",")]))
        raise InvalidInputError("rho_mode must be formula, validation or fixed")

    def train_config(self, seed):
        lr = self.get("learning_rate")
        return TrainConfig(
            lam=self.get("lam", float),
            learning_rate=lr if lr == "auto" else _number(lr, "learning_rate"),
            epochs=self.get("epochs", int),
            batch_size=self.get("batch_size", int),
            seed=seed,
            rho_mode=self.rho_mode(),
            feature_map=self.get("feature_map"),
            bandwidth=self.get("bandwidth", float),
            output_dim=self.get("output_dim", int),
            holdout=self.get("holdout", float),
        )

    def generate(self, seed):
        gen = self.get("generator")
        if gen == "setup":
            return generate(self.setup_spec(seed))
        preset = LLM_ERROR_ONLY if gen == "llm_error_only" else LLM_ERROR_PLUS_COST
        return generate_llm_analog(m=self.get("n_samples", int), seed=seed, **preset)

    @property
    def setup_label(self):
        gen = self.get("generator")
        return self.get("setup") if gen == "setup" else gen

    @property
    def cost_label(self):
        gen = self.get("generator")
        if gen == "setup":
            return self.get("cost_type")
        return "error_only" if gen == "llm_error_only" else "error_plus_cost"


def split_train_test(problem, n_test):
    m = len(problem.dataset)
    return problem.subset(np.arange(m - n_test)), problem.subset(np.arange(m - n_test, m))


def run_method(cfg, method, train_part, test_part, seed):
    """Test-set EvalReport for one method on one seed's split."""
    if method == ORACLE:
        return evaluate_choices(test_part.bayes_choices(), test_part.costs)
    result = train(
        train_part.dataset,
        train_part.costs,
        RewardScheme(cfg.get("scheme")),
        cfg.train_config(seed),
        method,
        cfg.surrogate_spec(),
    )
    return evaluate(result.router, test_part.dataset, test_part.costs)


def report_header(p):
    return ["method", "setup", "cost_type", "seed", "dl"] + [f"ratio_{k}" for k in range(1, p + 1)] + [
        "dl_std",
        "status",
    ]


def aggregate_rows(seed_rows, p):
    """One aggregate row per method: mean DL and ratios, sample std of DL."""
    out = []
    methods = list(dict.fromkeys(r[0] for r in seed_rows))
    for method in methods:
        ok = [r for r in seed_rows if r[0] == method and r[-1] == "ok"]
        if not ok:
            continue
        dls = np.array([r[4] for r in ok], dtype=float)
        ratios = np.array([r[5 : 5 + p] for r in ok], dtype=float).mean(axis=0)
        std = float(np.std(dls, ddof=1)) if len(dls) > 1 else ""
        out.append([method, ok[0][1], ok[0][2], "aggregate", float(dls.mean()), *ratios, std, f"n={len(ok)}"])
    return out


def run_sweep(cfg):
    """Run every method on every seed; returns ``(header, rows, diverged)``."""
    n_test = cfg.get("n_test", int)
    rows, diverged, p = [], False, None
    for seed in range(cfg.seed, cfg.seed + cfg.get("n_seeds", int)):
        problem = cfg.generate(seed)
        p = problem.costs.n_experts
        train_part, test_part = split_train_test(problem, n_test)
        for method in cfg.methods:
            try:
                rep = run_method(cfg, method, train_part, test_part, seed)
            except DivergenceError as exc:
                diverged = True
                logger.error("%s diverged on seed %d: %s", method, seed, exc)
                rows.append([method, cfg.setup_label, cfg.cost_label, seed, "", *([""] * p), "",
                             f"diverged@epoch{exc.epoch}"])
                continue
            rows.append([method, cfg.setup_label, cfg.cost_label, seed, rep.deferral_loss, *rep.ratios, "", "ok"])
            logger.info("seed %d %s dl=%.6f", seed, method, rep.deferral_loss)
    return report_header(p), rows + aggregate_rows(rows, p), diverged


def _load_config(args):
    text = None
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise InvalidInputError(f"cannot read config: {exc}") from None
    overrides = {k: getattr(args, k, None) for k in DEFAULTS}
    return ExperimentConfig.from_sources(text, overrides)


def cmd_gen(args):
    cfg = _load_config(args)
    problem = cfg.generate(cfg.seed)
    out = args.out or cfg.get("output_dir")
    os.makedirs(out, exist_ok=True)
    io.write_dataset(os.path.join(out, "dataset.csv"), problem.dataset)
    io.write_panel(os.path.join(out, "panel.csv"), problem.panel)
    io.write_costs(os.path.join(out, "costs.csv"), problem.costs)
    io.write_costs(os.path.join(out, "expected_costs.csv"), problem.expected_costs)
    manifest = dict(problem.manifest, beta=problem.panel.beta, cost_type=problem.costs.cost_type.value,
                    normalizer=problem.costs.normalizer, n_classes=problem.dataset.n_classes)
    io.write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"wrote {len(problem.dataset)} samples to {out}")
    return EXIT_OK


def _load_data(directory):
    manifest = io.read_json(os.path.join(directory, "manifest.json"))
    dataset = io.read_dataset(os.path.join(directory, "dataset.csv"), manifest.get("n_classes"))
    costs = io.read_costs(
        os.path.join(directory, "costs.csv"),
        manifest.get("cost_type", "error_only"),
        manifest.get("normalizer", 1.0),
    )
    if len(costs.values) != len(dataset):
        raise InvalidInputError("dataset.csv and costs.csv have different lengths")
    return dataset, costs


def cmd_train(args):
    cfg = _load_config(args)
    if args.method not in (MILD, TDEF):
        raise InvalidInputError("--method must be mild or tdef")
    dataset, costs = _load_data(args.data)
    config = cfg.train_config(cfg.seed)
    result = train(dataset, costs, RewardScheme(cfg.get("scheme")), config, args.method, cfg.surrogate_spec())
    fparams = {"kind": config.feature_map, "bandwidth": config.bandwidth,
               "output_dim": config.output_dim, "seed": config.seed}
    io.save_router(args.out, result.router, result.rhos.rho, fparams, dataset.features.shape[1])
    io.write_trace(os.path.join(args.out, "trace.csv"), result.trace, costs.n_experts)
    print(f"trained {args.method}: objective {result.final_objective:.9g}")
    return EXIT_OK


def cmd_eval(args):
    dataset, costs = _load_data(args.data)
    router, _ = io.load_router(args.model)
    report = evaluate(router, dataset, costs)
    text = report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_sweep(args):
    cfg = _load_config(args)
    header, rows, diverged = run_sweep(cfg)
    out = cfg.get("output_dir")
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "report.csv")
    io.write_table(path, header, rows)
    io.write_json(os.path.join(out, "config.json"), cfg.values)
    with open(path, encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return EXIT_DIVERGED if diverged else EXIT_OK


def cmd_check(args):
    results = run_suites(args.tier)
    failed = False
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{status} {r.name}: {r.passed}/{r.total} ({r.seconds:.1f}s)")
        for case in r.failures[:10]:
            print(f"  failing case: {case}")
        failed |= not r.ok
    return EXIT_CHECK if failed else EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="mild", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="key = value configuration file")
        for key in DEFAULTS:
            p.add_argument(f"--{key}", dest=key, default=None, help=f"override {key} (default {DEFAULTS[key]!r})")
        return p

    g = with_config(sub.add_parser("gen", help="generate a synthetic dataset"))
    g.add_argument("--out", help="output directory (default: output_dir)")
    g.set_defaults(func=cmd_gen)

    t = with_config(sub.add_parser("train", help="train a router on a generated dataset"))
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="model directory")
    t.add_argument("--method", default=MILD)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved router")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--out", help="also write the report JSON here")
    e.set_defaults(func=cmd_eval)

    s = with_config(sub.add_parser("sweep", help="multi-seed comparison table"))
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("check", help="run the verification suites")
    c.add_argument("--tier", choices=TIERS, default="fast")
    c.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (InvalidInputError, BudgetExceededError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
