"""Command-line entry point.

Subcommands: synth, train, estimate, rdd, evaluate. Flag values override
config-file values, which override built-in defaults; every run writes a
manifest.json echoing the fully resolved configuration, input/output
checksums, and library versions, and a run can be repeated byte-exactly by
passing that manifest back through --config.

Exit codes: 0 success, 1 usage, 2 input validation, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    Dataset,
    dataset_manifest,
    load_dataset,
    save_dataset,
    split_by_time,
)
from .effects import (
    FactorModelEstimator,
    SnipsEstimator,
    StatisticEstimator,
    compare_estimators,
)
from .errors import CausalRecError, ParseError, RddError, ValidationError
from .metrics import (
    RANK_BY_ITE,
    RANK_BY_PROBABILITY,
    RankingRow,
    build_ranked_lists,
    precision_at_n,
    subgroup_cate,
    uplift_at_n,
    uplift_snips_at_n,
    write_comparison_csv,
    write_ranking_csv,
    write_subgroups_csv,
)
from .model import (
    ModelConfig,
    estimate_ites,
    init_factors,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .rdd import (
    RddConfig,
    population_ate_rdd,
    write_cutoff_effects_csv,
    write_homogeneity_csv,
    write_item_ate_csv,
)
from .synth import (
    WorldConfig,
    generate_world,
    load_truth,
    simulate_log,
    world_manifest,
    write_truth,
)

log = logging.getLogger("causalrec")

OUTDIR_ENV = "CAUSALREC_OUTDIR"
RANK_SIZES = (10, 30, 50)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


@dataclass
class RunConfig:
    """Flat, fully serializable run configuration (one namespace for every
    subcommand; unused fields are simply ignored by a command)."""

    command: str = ""
    data: str = ""
    out_dir: str = ""
    checkpoint: str = ""
    baseline_checkpoint: str = ""
    truth: str = ""
    format: str = "csv"
    seed: int = 0
    threads: int = 1
    split: float = 0.8
    # model
    k: int = 8
    l2_coeff: float = 1e-5
    learning_rate: float = 0.001
    batch_size: int = 512
    epochs: int = 5
    encoder_mode: str = "id_embedding"
    raw_score_ite: bool = False
    freeze_treatment: bool = False
    # rdd
    window: int = 1
    position_min: int = 1
    position_max: int = 200
    min_samples: int = 30
    representation: str = "features"
    # synth
    m: int = 500
    n: int = 200
    k_star: int = 4
    gamma: float = 0.0
    rho: float = 0.04
    sessions: int = 1000
    max_position: int = 0  # 0 means "catalog size"
    control_ratio: int = 5
    control_logging_bias: float = 0.0
    n_days: int = 7
    group_shift: float = 0.0
    misspec_strength: float = 0.0
    truth_pairs: bool = False
    # evaluate
    rank_users: int = 1000
    subgroup_attr: str = ""

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            k=self.k,
            l2_coeff=self.l2_coeff,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            encoder_mode=self.encoder_mode,
            use_probability_scale_ite=not self.raw_score_ite,
            train_treatment_factors=not self.freeze_treatment,
        )

    def rdd_config(self) -> RddConfig:
        return RddConfig(
            window=self.window,
            position_range=(self.position_min, self.position_max),
            min_samples=self.min_samples,
            representation=self.representation,
        )

    def world_config(self) -> WorldConfig:
        return WorldConfig(
            m=self.m,
            n=self.n,
            k_star=self.k_star,
            gamma=self.gamma,
            rho=self.rho,
            max_position=self.max_position or None,
            control_ratio=self.control_ratio,
            control_logging_bias=self.control_logging_bias,
            n_days=self.n_days,
            seed=self.seed,
            group_shift=self.group_shift,
            misspec_strength=self.misspec_strength,
        )


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file or a previous run manifest")
    p.add_argument("--out-dir", dest="out_dir", help=f"output directory (default ${OUTDIR_ENV} or '.')")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker threads for parallel stages (default 1)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, help="latent rank")
    p.add_argument("--l2-coeff", dest="l2_coeff", type=float)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--encoder-mode", dest="encoder_mode", choices=["id_embedding", "feature_linear"])
    p.add_argument("--raw-score-ite", dest="raw_score_ite", action=argparse.BooleanOptionalAction)
    p.add_argument("--freeze-treatment", dest="freeze_treatment", action=argparse.BooleanOptionalAction)


def _add_rdd_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=int)
    p.add_argument("--position-min", dest="position_min", type=int)
    p.add_argument("--position-max", dest="position_max", type=int)
    p.add_argument("--min-samples", dest="min_samples", type=int)
    p.add_argument("--representation", choices=["features", "embedding"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causalrec",
        description="Recommendation-effect estimation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"causalrec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic browsing log with ground truth")
    _add_common(p)
    p.add_argument("--m", type=int, help="base users")
    p.add_argument("--n", type=int, help="catalog size")
    p.add_argument("--k-star", dest="k_star", type=int, help="generative latent rank")
    p.add_argument("--gamma", type=float, help="exposure-preference confounding strength")
    p.add_argument("--rho", type=float, help="geometric leave-position parameter")
    p.add_argument("--sessions", type=int)
    p.add_argument("--max-position", dest="max_position", type=int)
    p.add_argument("--control-ratio", dest="control_ratio", type=int)
    p.add_argument("--control-logging-bias", dest="control_logging_bias", type=float)
    p.add_argument("--n-days", dest="n_days", type=int)
    p.add_argument("--group-shift", dest="group_shift", type=float)
    p.add_argument("--misspec-strength", dest="misspec_strength", type=float)
    p.add_argument("--format", choices=["csv", "jsonl"])
    p.add_argument("--truth-pairs", dest="truth_pairs", action=argparse.BooleanOptionalAction)

    p = sub.add_parser("train", help="fit the factor model and write a checkpoint")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--split", type=float, help="train on the earlier side of this split")
    _add_model_flags(p)

    p = sub.add_parser("estimate", help="write per-pair treatment-effect estimates")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("rdd", help="regression-discontinuity analysis CSVs")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="needed for --representation embedding")
    _add_rdd_flags(p)

    p = sub.add_parser("evaluate", help="estimator comparison and ranking metrics")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--baseline-checkpoint", dest="baseline_checkpoint",
                   help="separate purchase-probability ranker checkpoint")
    p.add_argument("--truth", help="truth.csv from synth for errors against ground truth")
    p.add_argument("--split", type=float)
    p.add_argument("--rank-users", dest="rank_users", type=int)
    p.add_argument("--subgroup-attr", dest="subgroup_attr")
    _add_rdd_flags(p)

    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults < config file < command-line flags; returns the merged view."""
    cfg = RunConfig()
    file_path = getattr(args, "config", None)
    if file_path:
        try:
            obj = json.loads(Path(file_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {file_path}: {exc}") from None
        if isinstance(obj.get("config"), dict):  # a previous run manifest
            obj = obj["config"]
        known = {f.name for f in fields(RunConfig)}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        for key, value in obj.items():
            setattr(cfg, key, value)
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    cfg.command = args.command
    if not cfg.out_dir:
        cfg.out_dir = os.environ.get(OUTDIR_ENV, ".")
    return cfg


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(cfg: RunConfig, out_dir: Path, inputs: list[Path], outputs: list[Path], extra: dict | None = None) -> None:
    manifest = {
        "command": cfg.command,
        "config": asdict(cfg),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {p.name: _sha256(p) for p in outputs},
        "versions": {
            "causalrec": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
    }
    if extra:
        manifest.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load(cfg: RunConfig) -> Dataset:
    log.info("loading %s", cfg.data)
    ds = load_dataset(cfg.data)
    log.info("loaded %d records, %d users, %d items", ds.n_records, ds.m, ds.n)
    return ds


def _check_tables(fs, ds: Dataset) -> None:
    from .model import _hash_ids

    if fs.user_table_hash and fs.user_table_hash != _hash_ids(ds.user_ids):
        raise ValidationError("checkpoint user indexing does not match this dataset")
    if fs.item_table_hash and fs.item_table_hash != _hash_ids(ds.item_ids):
        raise ValidationError("checkpoint item indexing does not match this dataset")


def cmd_synth(cfg: RunConfig) -> int:
    if cfg.sessions < 1:
        raise ValidationError("--sessions must be >= 1")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = generate_world(cfg.world_config())
    ds = simulate_log(world, cfg.sessions, threads=cfg.threads)
    log_path = out / ("log.csv" if cfg.format == "csv" else "log.jsonl")
    save_dataset(ds, log_path, cfg.format)
    truth_path = out / "truth.csv"
    write_truth(world, truth_path, include_pairs=cfg.truth_pairs)
    (out / "world_manifest.json").write_text(json.dumps(world_manifest(world), indent=2, sort_keys=True) + "\n")
    outputs = [log_path, truth_path, out / "world_manifest.json"]
    if cfg.truth_pairs:
        outputs.append(out / "truth_pairs.csv")
    _write_manifest(cfg, out, [], outputs, extra={"dataset": dataset_manifest(ds, log_path)})
    log.info("wrote %d records to %s", ds.n_records, log_path)
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = _load(cfg)
    train_ds = ds
    if 0.0 < cfg.split < 1.0:
        train_ds, _ = split_by_time(ds, cfg.split)
        log.info("training on %d of %d records (split %.3f)", train_ds.n_records, ds.n_records, cfg.split)
    mc = cfg.model_config()
    fs = train(init_factors(mc, train_ds), train_ds, mc)
    ckpt = out / "checkpoint.npz"
    save_checkpoint(fs, mc, ckpt)
    _write_manifest(cfg, out, [Path(cfg.data)], [ckpt], extra={"loss_history": fs.loss_history})
    log.info("final training loss %.6f", fs.loss_history[-1])
    return EXIT_OK


def cmd_estimate(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = _load(cfg)
    fs, mc = load_checkpoint(cfg.checkpoint)
    _check_tables(fs, ds)
    key = ds.u.astype(np.int64) * ds.n + ds.i
    pair_key = np.unique(key)
    uu = (pair_key // ds.n).astype(np.int64)
    ii = (pair_key % ds.n).astype(np.int64)
    ites = estimate_ites(fs, uu, ii, mc)
    ite_path = out / "ite.csv"
    with ite_path.open("w") as fh:
        fh.write("user_id,item_id,ite\n")
        for a, b, v in zip(uu, ii, ites):
            fh.write(f"{ds.user_ids[a]},{ds.item_ids[b]},{float(v)!r}\n")
    _write_manifest(cfg, out, [Path(cfg.data), Path(cfg.checkpoint)], [ite_path])
    log.info("wrote %d pair estimates", len(pair_key))
    return EXIT_OK


def cmd_rdd(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = _load(cfg)
    factors = None
    if cfg.representation == "embedding":
        if not cfg.checkpoint:
            raise ValidationError("--representation embedding requires --checkpoint")
        factors, _ = load_checkpoint(cfg.checkpoint)
        _check_tables(factors, ds)
    result = population_ate_rdd(ds, config=cfg.rdd_config(), factors=factors, threads=cfg.threads)
    for warning in result.warnings[:20]:
        log.warning("%s", warning)
    paths = [out / "homogeneity.csv", out / "cutoff_effects.csv", out / "item_ate.csv"]
    write_homogeneity_csv(result, paths[0])
    write_cutoff_effects_csv(result, paths[1])
    write_item_ate_csv(result, paths[2])
    extra = {
        "pooled_ate": result.pooled.value if result.pooled.ok else None,
        "n_items_ok": sum(1 for e in result.per_item.values() if e.ok),
        "n_items_skipped": sum(1 for e in result.per_item.values() if not e.ok),
    }
    inputs = [Path(cfg.data)] + ([Path(cfg.checkpoint)] if cfg.checkpoint else [])
    _write_manifest(cfg, out, inputs, paths, extra=extra)
    if result.pooled.ok:
        log.info("pooled RDD ATE %.6f", result.pooled.value)
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = _load(cfg)
    train_ds, test_ds = split_by_time(ds, cfg.split)
    fs, mc = load_checkpoint(cfg.checkpoint)
    _check_tables(fs, ds)

    truth_pop = None
    if cfg.truth:
        truth_pop = float(np.mean(list(load_truth(cfg.truth).values())))

    estimators = [
        StatisticEstimator(),
        SnipsEstimator(seed=cfg.seed),
        FactorModelEstimator(mc, factors=fs),
    ]
    report = compare_estimators(
        train_ds, test_ds, estimators, rdd_config=cfg.rdd_config(), true_population_ate=truth_pop
    )
    comparison_path = out / "comparison.csv"
    write_comparison_csv(report, comparison_path)

    snips = next(e for e in estimators if isinstance(e, SnipsEstimator))
    rank_models = [(RANK_BY_ITE, "ite", fs, mc)]
    if cfg.baseline_checkpoint:
        bfs, bmc = load_checkpoint(cfg.baseline_checkpoint)
        _check_tables(bfs, ds)
        rank_models.append((RANK_BY_PROBABILITY, "probability", bfs, bmc))
    else:
        rank_models.append((RANK_BY_PROBABILITY, "probability", fs, mc))
    ranking_rows = []
    for by, label, rfs, rmc in rank_models:
        lists = build_ranked_lists(
            rfs, rmc, test_ds, n=max(RANK_SIZES), by=by, max_users=cfg.rank_users, seed=cfg.seed
        )
        for size in RANK_SIZES:
            ranking_rows.append(
                RankingRow(
                    method=label,
                    n=size,
                    uplift=uplift_at_n(lists, test_ds, size).value,
                    uplift_snips=uplift_snips_at_n(lists, test_ds, snips.propensity, size).value,
                    precision=precision_at_n(lists, test_ds, size).value,
                )
            )
    ranking_path = out / "ranking.csv"
    write_ranking_csv(ranking_rows, ranking_path)

    paths = [comparison_path, ranking_path]
    if cfg.subgroup_attr:
        key = test_ds.u.astype(np.int64) * test_ds.n + test_ds.i
        pair_key = np.unique(key)
        uu = (pair_key // test_ds.n).astype(np.int64)
        ii = (pair_key % test_ds.n).astype(np.int64)
        ites = estimate_ites(fs, uu, ii, mc)
        triples = [
            (test_ds.user_ids[a], test_ds.item_ids[b], float(v))
            for a, b, v in zip(uu, ii, ites)
        ]
        sub_report = subgroup_cate(triples, test_ds, cfg.subgroup_attr)
        sub_path = out / "subgroups.csv"
        write_subgroups_csv(sub_report, sub_path)
        paths.append(sub_path)

    inputs = [Path(cfg.data), Path(cfg.checkpoint)]
    if cfg.baseline_checkpoint:
        inputs.append(Path(cfg.baseline_checkpoint))
    if cfg.truth:
        inputs.append(Path(cfg.truth))
    _write_manifest(cfg, out, inputs, paths)
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "estimate": cmd_estimate,
    "rdd": cmd_rdd,
    "evaluate": cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return _COMMANDS[cfg.command](cfg)
    except (ParseError, ValidationError, RddError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CausalRecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # structured failure, not a stack trace
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
