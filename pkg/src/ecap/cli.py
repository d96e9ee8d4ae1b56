"""Command-line entry point: ``ecap <command> [options]``.

Commands write to ``--out`` or standard output.  Failures print a single
line ``CODE: message`` on standard error and exit with status 1 (2 for
usage errors).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import numpy as np

from .core import as_configuration, load_dataset, read_matrix
from .errors import ConfigError, EcapError
from .inference import CoefficientPosterior, coefficient_posterior, predict
from .lasso import screen_marginal
from .marginal import Scorer
from .prior import PriorConfig
from .search import SearchSettings, enumerate_exact
from .simulation import RunOptions, case_spec, run_case, select_ecap
from .tuning import default_lambda_grid, global_g, tune

log = logging.getLogger("ecap")


@dataclass(frozen=True)
class RunConfig:
    """Settings shared by all commands.  Loaded from JSON; command-line flags win."""

    alpha: float = 0.999
    a: float = 0.05
    c: float = 1.0
    kappa_max: float = 1e8
    # "auto" or a number
    lam: object = "auto"
    lambda_grid: Optional[object] = None
    g_mode: str = "per-model"
    phi: Optional[float] = None
    iterations: Optional[int] = None
    restarts: Optional[int] = None
    screen_k: int = 50
    seed: int = 0
    n_samples: int = 500
    top_k: int = 20
    threads: Optional[int] = None
    verbose: bool = False

    # JSON key "lambda" maps onto the attribute ``lam``
    _ALIASES = {"lambda": "lam"}

    def __post_init__(self):
        if isinstance(self.lam, str) and self.lam != "auto":
            raise ConfigError(f"lambda must be a number or 'auto', got {self.lam!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.a <= 0 or self.c <= 0:
            raise ConfigError("a and c must be positive")
        if self.kappa_max <= 1:
            raise ConfigError("kappa_max must exceed 1")
        if self.g_mode not in ("per-model", "global"):
            raise ConfigError(f"g_mode must be 'per-model' or 'global', got {self.g_mode!r}")
        if self.phi is not None and not 0.0 <= self.phi <= 1.0:
            raise ConfigError(f"phi must lie in [0, 1], got {self.phi}")
        for name in ("iterations", "restarts", "threads"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.screen_k < 1 or self.n_samples < 1 or self.top_k < 1:
            raise ConfigError("screen_k, n_samples and top_k must be at least 1")

    @classmethod
    def from_mapping(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        kw = {}
        for key, value in doc.items():
            attr = cls._ALIASES.get(key, key)
            if attr not in known or key == "lam":
                raise ConfigError(f"unknown configuration key {key!r}")
            kw[attr] = value
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_mapping(doc)

    def grid(self) -> np.ndarray:
        return parse_grid(self.lambda_grid) if self.lambda_grid is not None else default_lambda_grid()

    def options(self, iterations: int, restarts: int) -> RunOptions:
        settings = SearchSettings(iterations=self.iterations or iterations, restarts=self.restarts or restarts,
                                  screen_K=self.screen_k, seed=self.seed, g_mode=self.g_mode)
        return RunOptions(settings=settings, N=self.n_samples, lam=self.lam, phi=self.phi,
                          kappa_max=self.kappa_max, a=self.a, c=self.c, alpha=self.alpha,
                          grid=tuple(self.grid()))


def parse_grid(spec) -> np.ndarray:
    """Grid from ``"start:stop:step"``, ``"v1,v2,..."``, a list, or ``{start, stop, step}``."""
    if isinstance(spec, dict):
        spec = f"{spec['start']}:{spec['stop']}:{spec['step']}"
    if isinstance(spec, (list, tuple)):
        values = [float(v) for v in spec]
    else:
        text = str(spec).strip()
        if ":" in text:
            try:
                start, stop, step = (float(v) for v in text.split(":"))
            except ValueError:
                raise ConfigError(f"bad grid {text!r}; expected start:stop:step") from None
            if step <= 0 or stop < start:
                raise ConfigError(f"bad grid {text!r}; need step > 0 and stop >= start")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            values = list(np.round(start + step * np.arange(count), 10))
        else:
            try:
                values = [float(v) for v in text.split(",") if v.strip()]
            except ValueError:
                raise ConfigError(f"bad grid {text!r}") from None
    if not values:
        raise ConfigError("the lambda grid is empty")
    return np.asarray(values, dtype=float)


def parse_configurations(text: str, names=None) -> list:
    """``"0,1;2"`` -> ``[(0, 1), (2,)]``; entries may be column names."""
    out = []
    for chunk in text.split(";"):
        items = [t.strip() for t in chunk.split(",") if t.strip()]
        idx = []
        for t in items:
            if names and t in names:
                idx.append(names.index(t))
            else:
                try:
                    idx.append(int(t))
                except ValueError:
                    raise ConfigError(f"unknown predictor {t!r}") from None
        out.append(tuple(idx))
    if not out or not any(out):
        raise ConfigError("no configurations given")
    return out


def _finite(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _emit(text: str, out: Optional[str]):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    over = {}
    for flag, attr in (("seed", "seed"), ("iters", "iterations"), ("restarts", "restarts"),
                       ("screen_k", "screen_k"), ("top_k", "top_k"), ("threads", "threads")):
        v = getattr(args, flag, None)
        if v is not None:
            over[attr] = v
    lam = getattr(args, "lam", None)
    if lam is not None:
        try:
            over["lam"] = lam if lam == "auto" else float(lam)
        except ValueError:
            raise ConfigError(f"--lambda must be a number or 'auto', got {lam!r}") from None
    grid = getattr(args, "grid", None)
    if grid is not None:
        over["lambda_grid"] = grid
    return replace(cfg, **over) if over else cfg


def _load(args):
    return load_dataset(args.x, args.y, header=args.header, response=args.response)


def _tuned(data, cfg: RunConfig):
    pc = PriorConfig(p=data.p, R=data.rank, a=cfg.a, c=cfg.c, kappa_max=cfg.kappa_max)
    t = tune(data, pc, lam=cfg.lam, grid=cfg.grid(), N=cfg.n_samples,
             seed=np.random.SeedSequence(cfg.seed, spawn_key=(1,)), alpha=cfg.alpha, phi=cfg.phi)
    return pc.with_lambda(t.lam), t


def _tuning_doc(t) -> dict:
    doc = {
        "sigma2": t.sigma2,
        "phi": t.phi,
        "lambda": t.lam,
        "g_global": t.g_global,
        "alpha": t.alpha,
        "adaptive_lasso": list(t.al.S_hat),
    }
    doc["lambda_objective"] = ([[lv, _finite(v)] for lv, v in t.objective.as_rows()]
                               if t.objective is not None else None)
    return doc


def _settings_doc(cfg: RunConfig) -> dict:
    doc = {("lambda" if k == "lam" else k): v for k, v in asdict(cfg).items() if k not in ("threads", "verbose")}
    doc["lambda_grid"] = [float(v) for v in cfg.grid()]
    return doc


def cmd_select(args) -> int:
    cfg = _config(args)
    data = _load(args)
    options = cfg.options(iterations=1000, restarts=3)
    mpm, t, ledger = select_ecap(data, options, cfg.seed)
    configs, mass = ledger.posterior()
    post_of = dict(zip(configs, mass))
    incl = ledger.inclusion_probabilities(data.p)
    h = t.hyperparams(cfg.g_mode)
    coefs = coefficient_posterior(data, mpm, h=h).as_dict() if mpm else None
    doc = {
        "data": {"n": data.n, "p": data.p, "columns": list(data.column_names) if data.column_names else None,
                 "standardization": data.scaling_record()},
        "settings": _settings_doc(cfg),
        "tuning": _tuning_doc(t),
        "search": {"models_scored": len(ledger), "iterations": options.settings.iterations,
                   "restarts": options.settings.restarts},
        "mpm": list(mpm),
        "map": list(ledger.best),
        "map_log_score": _finite(ledger.best_score),
        "top_models": [{"configuration": list(S), "log_score": _finite(v), "posterior": float(post_of.get(S, 0.0))}
                       for S, v in ledger.top(cfg.top_k)],
        "inclusion_probabilities": [float(v) for v in incl],
        "coefficients": coefs,
    }
    _emit(_dump(doc), args.out)
    return 0


def cmd_tune(args) -> int:
    cfg = _config(args)
    data = _load(args)
    _, t = _tuned(data, cfg)
    lines = [f"lambda\t{t.lam!r}", f"phi\t{t.phi!r}", f"sigma2\t{t.sigma2!r}", f"g\t{t.g_global!r}", ""]
    if t.objective is not None:
        lines += [f"{lv!r}\t{v!r}" for lv, v in t.objective.as_rows()]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    options = cfg.options(iterations=200, restarts=2)
    workers = cfg.threads or os.cpu_count() or 1
    rows, _ = run_case(case_spec(args.case), args.reps, options, seed=cfg.seed, workers=workers,
                       baselines=args.baselines)
    header = ["case", "method", "prob_exact", "prob_superset", "avg_size", "se", "reps", "failures"]
    body = [[r.case, r.method, r.prob_exact, r.prob_superset, r.avg_size, r.se_size, r.reps, r.failures]
            for r in rows]
    _emit(_table(header, body), args.out)
    return 0


def cmd_predict(args) -> int:
    with open(args.fit, encoding="utf-8") as fh:
        doc = json.load(fh)
    X_new, _ = read_matrix(args.x, header=args.header)
    if doc.get("coefficients") is None:
        yhat = np.full(X_new.shape[0], doc["data"]["standardization"]["y_mean"])
    else:
        post = CoefficientPosterior.from_dict(doc["coefficients"])
        yhat = predict(post, X_new, doc["data"]["standardization"])
    _emit("".join(f"{v!r}\n" for v in map(float, yhat)), args.out)
    return 0


def cmd_screen(args) -> int:
    cfg = _config(args)
    data = _load(args)
    keep = screen_marginal(data, min(cfg.screen_k, data.p))
    names = data.column_names
    _emit("".join(f"{names[j] if names else j}\n" for j in keep), args.out)
    return 0


def cmd_enumerate(args) -> int:
    cfg = _config(args)
    data = _load(args)
    pc, t = _tuned(data, cfg)
    h = t.hyperparams(cfg.g_mode)
    en = enumerate_exact(data, h, pc)
    order = np.lexsort(([len(S) for S in en.configs], -en.log_scores))[:cfg.top_k]
    doc = {
        "tuning": _tuning_doc(t),
        "map": list(en.map()),
        "mpm": list(en.mpm(data.p)),
        "inclusion_probabilities": [float(v) for v in en.inclusion_probabilities(data.p)],
        "top_models": [{"configuration": list(en.configs[i]), "log_score": _finite(en.log_scores[i]),
                        "posterior": float(en.probs[i])} for i in order],
    }
    _emit(_dump(doc), args.out)
    return 0


def cmd_curve(args) -> int:
    cfg = _config(args)
    data = _load(args)
    configs = [as_configuration(S, data.p) for S in parse_configurations(args.configs, data.column_names)]
    grid = cfg.grid()
    fixed = replace(cfg, lam=0.0)
    pc, t = _tuned(data, fixed)
    rows = []
    for lam in grid:
        h = t.hyperparams(cfg.g_mode).replace(lam=float(lam))
        if cfg.g_mode == "global":
            h = h.replace(g=global_g(data, t.al.S_hat, h))
        scorer = Scorer(data, h, pc.with_lambda(float(lam)))
        for S in configs:
            rows.append([" ".join(map(str, S)), float(lam), scorer.score(S).log_score])
    _emit(_table(["configuration", "lambda", "log_score"], rows), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecap", description="Correlation-adaptive Bayesian variable selection.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, search=False):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output file (default: standard output)")
        p.add_argument("--threads", type=int)
        p.add_argument("--verbose", action="store_true")
        if data:
            p.add_argument("--x", required=True, help="predictor file (comma separated)")
            p.add_argument("--y", help="response file (one column)")
            p.add_argument("--response", help="name of the response column inside --x (needs --header)")
            p.add_argument("--header", action="store_true", help="input files start with a header row")
            p.add_argument("--lambda", dest="lam", help="a number or 'auto'")
            p.add_argument("--grid", help="lambda grid: start:stop:step or comma list")
        if search:
            p.add_argument("--iters", type=int)
            p.add_argument("--restarts", type=int)
            p.add_argument("--screen-k", dest="screen_k", type=int)
            p.add_argument("--top-k", dest="top_k", type=int)

    p = sub.add_parser("select", help="tune, search and report the selected model")
    common(p, search=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("tune", help="print the tuned hyperparameters and the lambda curve")
    common(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("simulate", help="run a simulation case and print its metrics row")
    common(p, data=False, search=True)
    p.add_argument("--case", type=int, required=True, choices=range(1, 6))
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--baselines", action="store_true", help="also report lasso and adaptive-lasso rows")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("predict", help="predict new rows from a select result")
    p.add_argument("--fit", required=True, help="result document written by 'select'")
    p.add_argument("--x", required=True, help="new predictor rows")
    p.add_argument("--header", action="store_true")
    p.add_argument("--out")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("screen", help="keep the predictors most correlated with the response")
    common(p)
    p.add_argument("--screen-k", dest="screen_k", type=int, help="number of predictors kept (default 50)")
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("enumerate", help="exact posterior over all configurations (p <= 20)")
    common(p)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("curve", help="log posterior score against lambda for given configurations")
    common(p)
    p.add_argument("--configs", required=True, help="configurations such as '0,1;0'")
    p.set_defaults(func=cmd_curve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "reps", 1) < 1:
            parser.error("--reps must be at least 1")
        return args.func(args)
    except ConfigError as exc:
        if "grid is empty" in str(exc):
            parser.error(str(exc))
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 1
    except EcapError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        code = "IO_ERROR" if isinstance(exc, OSError) else "INVALID_ARGUMENT"
        print(f"{code}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
