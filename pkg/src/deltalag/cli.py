"""Command-line entry point: ``python -m deltalag <command>``.

Commands: gen-data, train, backtest, gradcheck, analyze.
Exit codes: 0 success, 1 internal error, 2 usage or configuration error.

Runs are driven by a JSON config (see :class:`RunConfig`); every command writes
the fully resolved config to ``<out>/config.json``, and rerunning from that
file reproduces the outputs bit for bit on the same platform.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, DeltaLagError, DimensionError, FormatError
from .evaluation import backtest, lag_histogram, leader_concentration, concentration_by_date, read_assignments
from .marketdata import (
    FeaturePanel,
    SyntheticSpec,
    build_panel,
    generate_synthetic,
    load_ohlcv,
    split,
    split_fractions,
    write_ground_truth,
    write_ohlcv,
)
from .model import Model, ModelConfig, init_params
from .statbaselines import CorrGraphSelector
from .tensorcore import inject_fault, load_checkpoint, save_checkpoint
from .training import TrainConfig, gradient_check, sub_seed, train

log = logging.getLogger("deltalag")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2
GRADCHECK_TOL = 1e-4
GRADCHECK_MAX_STOCKS = 10
GRADCHECK_MAX_L = 12
BASELINES = ("lag1", "lagall")


class UsageError(Exception):
    pass


@dataclasses.dataclass
class DataConfig:
    path: str | None = None
    synthetic: dict | None = None
    feature_mode: str = "full"


@dataclasses.dataclass
class SplitConfig:
    train_end: str | None = None
    val_end: str | None = None
    train_frac: float = 0.7
    val_frac: float = 0.15


@dataclasses.dataclass
class EvalConfig:
    decile: float = 0.1
    baseline: str | None = None          # None (learned detection), "lag1" or "lagall"
    corr_window: int = 250
    corr_refresh: int = 20
    corr_lags: int = 10
    frozen_as_of: str | None = None


@dataclasses.dataclass
class RunConfig:
    """Everything one run needs; exactly one of data.path / data.synthetic is set."""

    seed: int = 0
    data: DataConfig = dataclasses.field(default_factory=DataConfig)
    split: SplitConfig = dataclasses.field(default_factory=SplitConfig)
    model: dict = dataclasses.field(default_factory=dict)
    train: dict = dataclasses.field(default_factory=dict)
    eval: EvalConfig = dataclasses.field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(
                seed=int(raw.get("seed", 0)),
                data=DataConfig(**raw.get("data", {})),
                split=SplitConfig(**raw.get("split", {})),
                model=dict(raw.get("model", {})),
                train=dict(raw.get("train", {})),
                eval=EvalConfig(**raw.get("eval", {})),
            )
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from None

    def synthetic_spec(self) -> SyntheticSpec:
        raw = dict(self.data.synthetic or {})
        if "lag_range" in raw:
            raw["lag_range"] = tuple(raw["lag_range"])
        raw.setdefault("seed", int(sub_seed(self.seed, "data").integers(2**31)))
        try:
            spec = SyntheticSpec(**raw)
        except TypeError as exc:
            raise ConfigError(f"bad synthetic spec: {exc}") from None
        spec.check()
        return spec

    def model_config(self, n_features: int | None = None) -> ModelConfig:
        raw = dict(self.model)
        if n_features is not None:
            raw.setdefault("F", n_features)
        raw.setdefault("feature_mode", "raw")
        if "mlp_hidden" in raw:
            raw["mlp_hidden"] = tuple(raw["mlp_hidden"])
        try:
            cfg = ModelConfig(**raw)
        except TypeError as exc:
            raise ConfigError(f"bad model config: {exc}") from None
        cfg.check()
        return cfg

    def train_config(self) -> TrainConfig:
        raw = dict(self.train)
        raw["seed"] = self.seed
        try:
            cfg = TrainConfig(**raw)
        except TypeError as exc:
            raise ConfigError(f"bad train config: {exc}") from None
        cfg.check()
        return cfg

    def check(self) -> None:
        if (self.data.path is None) == (self.data.synthetic is None):
            raise ConfigError("exactly one of data.path and data.synthetic must be set")
        if self.eval.baseline not in (None, *BASELINES):
            raise ConfigError(f"eval.baseline must be null or one of {BASELINES}")

    def resolved(self, n_features: int | None = None) -> dict:
        """Plain dict with every default materialized."""
        out = {
            "seed": self.seed,
            "data": dataclasses.asdict(self.data),
            "split": dataclasses.asdict(self.split),
            "model": _jsonable(dataclasses.asdict(self.model_config(n_features))),
            "train": _jsonable(dataclasses.asdict(self.train_config())),
            "eval": dataclasses.asdict(self.eval),
        }
        if self.data.synthetic is not None:
            out["data"]["synthetic"] = _jsonable(dataclasses.asdict(self.synthetic_spec()))
        out["train"].pop("seed")
        return out


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def write_json(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- shared plumbing -------------------------------------------------------------

def load_config(args) -> RunConfig:
    raw: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    cfg = RunConfig.from_dict(raw)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "variant", None) is not None:
        cfg.model["variant"] = args.variant
    if cfg.data.path is None and cfg.data.synthetic is None:
        cfg.data.synthetic = {}
    cfg.check()
    return cfg


def load_panel(cfg: RunConfig) -> FeaturePanel:
    if cfg.data.path is not None:
        path = Path(cfg.data.path)
        if not path.is_file():
            raise UsageError(f"data file not found: {path}")
        bars = load_ohlcv(path)
    else:
        bars, _ = generate_synthetic(cfg.synthetic_spec())
    return build_panel(bars, cfg.data.feature_mode)


def make_splits(cfg: RunConfig, panel: FeaturePanel):
    s = cfg.split
    if s.train_end is not None or s.val_end is not None:
        if s.train_end is None or s.val_end is None:
            raise ConfigError("split.train_end and split.val_end must be given together")
        return split(panel, s.train_end, s.val_end)
    return split_fractions(panel, s.train_frac, s.val_frac)


def make_selector(cfg: RunConfig, panel: FeaturePanel, k: int):
    e = cfg.eval
    if e.baseline is None:
        return None
    frozen = panel.date_index(e.frozen_as_of) if e.frozen_as_of else None
    return CorrGraphSelector(panel, k=k, mode=e.baseline, lags=range(1, e.corr_lags + 1),
                             window=e.corr_window, refresh=e.corr_refresh, frozen_as_of=frozen)


def out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


# --- commands ---------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = load_config(args)
    if cfg.data.synthetic is None:
        raise ConfigError("gen-data needs data.synthetic in the config")
    spec = cfg.synthetic_spec()
    out = out_dir(args)
    bars, truth = generate_synthetic(spec)
    write_ohlcv(bars, out / "ohlcv.csv")
    write_ground_truth(truth, out / "ground_truth.csv")
    write_json(cfg.resolved(), out / "config.json")
    print(f"wrote {len(bars)} tickers x {spec.n_days} days to {out / 'ohlcv.csv'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args)
    panel = load_panel(cfg)
    mcfg = cfg.model_config(panel.n_features)
    tcfg = cfg.train_config()
    splits = make_splits(cfg, panel)
    out = out_dir(args)
    write_json(cfg.resolved(panel.n_features), out / "config.json")
    selector = make_selector(cfg, panel, mcfg.k)
    params, history = train(mcfg, tcfg, panel, splits, selector=selector)
    save_checkpoint(params, out / "model.ckpt")
    history.write_csv(out / "history.csv")
    best = history.records[history.best_epoch - 1]
    print(f"best epoch {best.epoch}: val_ic {best.val_ic:.6f}; checkpoint {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_backtest(args) -> int:
    cfg = load_config(args)
    if not args.checkpoint:
        raise UsageError("backtest needs --checkpoint")
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    panel = load_panel(cfg)
    mcfg = cfg.model_config(panel.n_features)
    splits = make_splits(cfg, panel)
    selector = make_selector(cfg, panel, mcfg.k)
    template = init_params(mcfg, 0)
    if selector is not None:
        template = type(template)({k: v.data for k, v in template.items() if k.startswith("mlp.")})
    try:
        params = load_checkpoint(ckpt, into=template)
    except DimensionError as exc:
        raise ConfigError(f"checkpoint does not match the model config: {exc}") from None
    out = out_dir(args)
    write_json(cfg.resolved(panel.n_features), out / "config.json")
    report = backtest(Model(mcfg, panel), params, splits.decision_dates("test"), selector=selector,
                      decile=cfg.eval.decile)
    report.write(out)
    if selector is not None:
        selector.write_cache(out / "graph_cache.csv")
    print(json.dumps(report.summary(), sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = load_config(args)
    if not cfg.model:
        cfg.model = {"L": 12, "l_max": 4, "N": 8, "k": 2}
    if not cfg.data.synthetic and cfg.data.path is None:
        cfg.data.synthetic = {"n_stocks": 8, "n_days": 40, "n_leaders": 3, "lag_range": [1, 4]}
    panel = load_panel(cfg)
    mcfg = cfg.model_config(panel.n_features)
    if panel.n_stocks > GRADCHECK_MAX_STOCKS or mcfg.L > GRADCHECK_MAX_L:
        raise UsageError(
            f"gradcheck is limited to |S| <= {GRADCHECK_MAX_STOCKS} and L <= {GRADCHECK_MAX_L} "
            f"(got |S|={panel.n_stocks}, L={mcfg.L})"
        )
    model = Model(mcfg, panel)
    dates = [t for t in range(panel.n_dates) if model.stocks_on(t).size >= 2
             and np.isfinite(panel.next_return[t, model.stocks_on(t)]).sum() >= 2]
    if not dates:
        raise ConfigError("no date has a full cross-section for the gradient check")
    t = dates[0]
    params = init_params(mcfg, sub_seed(cfg.seed, "init"))
    loss = cfg.train_config().loss
    if args.inject_fault:
        with inject_fault(args.inject_fault):
            errors = gradient_check(model, params, t, loss)
    else:
        errors = gradient_check(model, params, t, loss)
    worst = max(errors.values())
    for name, e in errors.items():
        print(f"{name}: {e:.3e}")
    ok = worst <= GRADCHECK_TOL
    print(f"max relative error {worst:.3e} ({'PASS' if ok else 'FAIL'}, tolerance {GRADCHECK_TOL:g})")
    return EXIT_OK if ok else EXIT_INTERNAL


def cmd_analyze(args) -> int:
    if not args.dump:
        raise UsageError("analyze needs --dump <assignments.csv>")
    path = Path(args.dump)
    if not path.is_file():
        raise UsageError(f"assignment dump not found: {path}")
    assignments = read_assignments(path)
    hist = lag_histogram(assignments)
    mean_all, mean_rank1 = leader_concentration(assignments)
    summary = {
        "n_assignments": len(assignments),
        "lag_histogram": {str(k): v for k, v in hist.items()},
        "leaders_per_date": None if np.isnan(mean_all) else mean_all,
        "rank1_leaders_per_date": None if np.isnan(mean_rank1) else mean_rank1,
    }
    if args.out:
        out = out_dir(args)
        write_json(summary, out / "analysis.json")
        with open(out / "concentration.csv", "w") as fh:
            fh.write("date,unique_leaders,unique_rank1_leaders\n")
            for d, a, r1 in concentration_by_date(assignments):
                fh.write(f"{d.isoformat()},{a},{r1}\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "gen-data": (cmd_gen_data, "write a synthetic OHLCV panel and its ground-truth wiring"),
    "train": (cmd_train, "fit a model and write checkpoint, history and resolved config"),
    "backtest": (cmd_backtest, "evaluate a checkpoint on the test split"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of the full model gradient"),
    "analyze": (cmd_analyze, "lag histogram and leader concentration from an assignment dump"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deltalag", description="Lead-lag detection via sparse cross-attention.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--out", default="." if name == "gradcheck" else None, help="output directory")
        p.add_argument("--checkpoint", help="model checkpoint (backtest)")
        p.add_argument("--variant", choices=["deltalag", "lag1net", "selflagnet", "selflag1"])
        p.add_argument("--seed", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "gradcheck":
            p.add_argument("--inject-fault", metavar="OP", help="test hook: corrupt the adjoint of OP")
        if name == "analyze":
            p.add_argument("--dump", help="assignment CSV written by backtest")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("gen-data", "train", "backtest") and not args.out:
        print(f"error: {args.command} needs --out", file=sys.stderr)
        return EXIT_USAGE
    func = COMMANDS[args.command][0]
    try:
        return func(args)
    except (UsageError, ConfigError, DataError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DeltaLagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - stable exit-code contract
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
