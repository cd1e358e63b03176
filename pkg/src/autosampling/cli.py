"""Command-line driver.

Configuration is an INI file with ``[search]``, ``[trainer]`` and ``[data]``
sections; every :class:`SearchConfig` field can also be overridden by the
flag of the same name (``--population-size 8``). The ``[data]`` section
either names a CSV file (``csv = path``) or describes a synthetic dataset.

Output directory layout (version 1)::

    manifest.json              config snapshot, seed, artifact paths, timings
    schedule.bin               winning / replayed schedule
    distribution.bin           estimated sampling distribution
    smoothed_distribution.bin  smoothed distribution (search only)
    model.bin                  final model state
    run_log.jsonl              one exploit record per line (search only)
    *.csv                      human-readable exports

Relative output paths are resolved under ``$AUTOSAMPLING_OUTPUT_ROOT`` when it
is set. Exit status: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    artifact_name,
    compare_conditions,
    frequency_loss_table,
    make_static_schedule,
    replay_run,
    segment_histogram,
    stage_histograms,
    static_distribution,
)
from .core import (
    PURPOSE_DATA,
    PURPOSE_STATIC,
    RngStream,
    export_counts_csv,
    export_distribution_csv,
    load_dataset_csv,
    load_distribution,
    load_model,
    load_schedule,
    save_distribution,
    save_model,
    save_schedule,
)
from .sampling import estimate_distribution
from .search import SearchConfig, plain_sgd_baseline, run_autosampling, write_run_log
from .trainer import SyntheticSpec, gen_synthetic_dataset, per_sample_losses

logger = logging.getLogger("autosampling")

LAYOUT_VERSION = 1
OUTPUT_ROOT_ENV = "AUTOSAMPLING_OUTPUT_ROOT"

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

TRAINER_FIELDS = ("hidden_dim", "base_lr", "momentum", "lr_schedule", "decay_factor", "boundaries", "total_steps")
SEARCH_FIELDS = tuple(f.name for f in dataclasses.fields(SearchConfig) if f.name not in TRAINER_FIELDS)
SYNTHETIC_FIELDS = tuple(f.name for f in dataclasses.fields(SyntheticSpec))


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------


def _coerce(name: str, raw, default):
    if not isinstance(raw, str):
        # already typed, e.g. a config snapshot read back from a manifest
        return tuple(raw) if isinstance(raw, list) else raw
    raw = raw.strip()
    try:
        if name == "boundaries":
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if name in ("eval_subset", "hidden_dim"):
            return None if raw.lower() in ("", "none") else int(raw)
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def _defaults(cls) -> dict:
    return {f.name: f.default for f in dataclasses.fields(cls)}


def read_config(path, overrides: dict | None = None):
    """Parse an INI config into ``(SearchConfig, data_section_dict)``."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    sections = {s: dict(parser[s]) for s in parser.sections()}
    data = sections.get("data", {})
    if "csv" in data and not Path(data["csv"]).is_absolute():
        # manifests must stay valid when read from another directory
        data["csv"] = str((Path(path).resolve().parent / data["csv"]).resolve())
    return config_from_sections(sections, overrides)


def config_from_sections(sections: dict, overrides: dict | None = None):
    unknown = set(sections) - {"search", "trainer", "data"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    defaults = _defaults(SearchConfig)
    values = {}
    for section, allowed in (("search", SEARCH_FIELDS), ("trainer", TRAINER_FIELDS)):
        for key, raw in sections.get(section, {}).items():
            if key not in allowed:
                raise ConfigError(f"[{section}] {key}: unknown field")
            values[key] = _coerce(key, raw, defaults[key])
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        cfg = SearchConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, dict(sections.get("data", {}))


def config_sections(cfg: SearchConfig, data: dict) -> dict:
    d = cfg.to_dict()
    return {
        "search": {k: d[k] for k in SEARCH_FIELDS},
        "trainer": {k: d[k] for k in TRAINER_FIELDS},
        "data": dict(data),
    }


def load_data(data: dict, seed: int, base_dir: Path | None = None):
    """Dataset from the ``[data]`` section; synthetic data also returns its noise record."""
    data = dict(data)
    if "csv" in data:
        path = Path(data.pop("csv"))
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        ncls = data.pop("num_classes", None)
        if data:
            raise ConfigError(f"[data] unexpected keys next to csv: {sorted(data)}")
        try:
            return load_dataset_csv(path, int(ncls) if ncls is not None else None), None
        except (OSError, ValueError) as exc:
            raise ConfigError(f"[data] csv: {exc}") from exc
    data_seed = int(data.pop("seed", seed))
    defaults = _defaults(SyntheticSpec)
    kwargs = {}
    for key, raw in data.items():
        if key not in SYNTHETIC_FIELDS:
            raise ConfigError(f"[data] {key}: unknown field")
        kwargs[key] = _coerce(key, raw, defaults[key])
    try:
        spec = SyntheticSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"[data] {exc}") from exc
    synth = gen_synthetic_dataset(spec, RngStream(data_seed, 0, 0, PURPOSE_DATA))
    return synth.dataset, synth


# ---------------------------------------------------------------------------
# Output handling
# ---------------------------------------------------------------------------


def resolve_output(path) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def prepare_output(path, force: bool) -> Path:
    out = resolve_output(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, command: str, cfg: SearchConfig, data: dict, artifacts: dict,
                   timings: dict, metrics: dict | None = None, extra: dict | None = None) -> None:
    manifest = {
        "layout_version": LAYOUT_VERSION,
        "engine_version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": config_sections(cfg, data),
        "artifacts": artifacts,
        "timings": {k: round(v, 6) for k, v in timings.items()},
        "metrics": metrics or {},
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(run_dir) -> dict:
    path = Path(run_dir) / "manifest.json"
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc


def _eval_dict(ev) -> dict:
    return {"metric": ev.metric, "loss": ev.loss, "num_eval_samples": ev.num_eval_samples}


def _save_model_artifacts(out: Path, model, schedule, distribution=None) -> dict:
    save_schedule(schedule, out / "schedule.bin")
    save_model(model, out / "model.bin")
    export_counts_csv(schedule, out / "counts.csv")
    arts = {"schedule": "schedule.bin", "model": "model.bin", "counts_csv": "counts.csv"}
    if distribution is not None:
        save_distribution(distribution, out / "distribution.bin")
        export_distribution_csv(distribution, out / "distribution.csv")
        arts.update(distribution="distribution.bin", distribution_csv="distribution.csv")
    return arts


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _setup(args):
    cfg, data = read_config(args.config, _overrides(args))
    out = prepare_output(args.output, args.force)
    dataset, _ = load_data(data, cfg.seed, Path(args.config).resolve().parent)
    return cfg, data, out, dataset


def cmd_search(args) -> int:
    cfg, data, out, dataset = _setup(args)
    t0 = time.perf_counter()
    n_jobs = args.jobs if args.jobs is not None else min(cfg.effective_population, os.cpu_count() or 1)
    res = run_autosampling(cfg, dataset, n_jobs=n_jobs)
    elapsed = time.perf_counter() - t0
    arts = _save_model_artifacts(out, res.model, res.schedule, res.distribution)
    save_distribution(res.smoothed_distribution, out / "smoothed_distribution.bin")
    write_run_log(res.records, out / "run_log.jsonl")
    arts.update(smoothed_distribution="smoothed_distribution.bin", run_log="run_log.jsonl")
    write_manifest(out, "search", cfg, data, arts, {"search_seconds": elapsed},
                   {"final_eval": _eval_dict(res.final_eval)}, {"n_jobs": n_jobs})
    print(f"search finished: {res.schedule.num_batches} batches, val accuracy {res.final_eval.metric:.4f}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg, data, out, dataset = _setup(args)
    cfg = dataclasses.replace(cfg, exploration_type="uniform")
    t0 = time.perf_counter()
    model, sched, ev = plain_sgd_baseline(cfg, dataset)
    arts = _save_model_artifacts(out, model, sched, estimate_distribution(sched))
    write_manifest(out, "baseline", cfg, data, arts, {"train_seconds": time.perf_counter() - t0},
                   {"final_eval": _eval_dict(ev)})
    print(f"baseline finished: val accuracy {ev.metric:.4f}")
    return EXIT_OK


def cmd_static(args) -> int:
    cfg, data, out, dataset = _setup(args)
    p = load_distribution(args.distribution)
    if p.size != dataset.num_samples:
        raise ConfigError(f"distribution covers {p.size} samples, dataset has {dataset.num_samples}")
    t0 = time.perf_counter()
    sched = make_static_schedule(p, cfg.total_batches, cfg.batch_size, RngStream(cfg.seed, 0, 0, PURPOSE_STATIC))
    model, ev = replay_run(sched, cfg.hidden_dim, cfg.hyper, dataset, cfg.seed)
    arts = _save_model_artifacts(out, model, sched, p)
    write_manifest(out, "static", cfg, data, arts, {"train_seconds": time.perf_counter() - t0},
                   {"final_eval": _eval_dict(ev)}, {"source_distribution": str(Path(args.distribution).resolve())})
    print(f"static replay finished: val accuracy {ev.metric:.4f}")
    return EXIT_OK


def cmd_replay(args) -> int:
    if args.manifest:
        run_dir = Path(args.manifest)
        if run_dir.is_file():
            run_dir = run_dir.parent
        man = read_manifest(run_dir)
        cfg, data = config_from_sections(man["config"], _overrides(args))
        schedule_path = Path(args.schedule) if args.schedule else run_dir / man["artifacts"]["schedule"]
        base = run_dir
    else:
        if not (args.config and args.schedule):
            raise ConfigError("replay needs --manifest, or both --config and --schedule")
        cfg, data = read_config(args.config, _overrides(args))
        schedule_path = Path(args.schedule)
        base = Path(args.config).resolve().parent
    out = prepare_output(args.output, args.force)
    dataset, _ = load_data(data, cfg.seed, base)
    sched = load_schedule(schedule_path)
    if sched.dataset_size != dataset.num_samples:
        raise ConfigError(f"schedule covers {sched.dataset_size} samples, dataset has {dataset.num_samples}")
    t0 = time.perf_counter()
    model, ev = replay_run(sched, cfg.hidden_dim, cfg.hyper, dataset, cfg.seed)
    arts = _save_model_artifacts(out, model, sched)
    write_manifest(out, "replay", cfg, data, arts, {"train_seconds": time.perf_counter() - t0},
                   {"final_eval": _eval_dict(ev)}, {"source_schedule": str(schedule_path.resolve())})
    print(f"replay finished: val accuracy {ev.metric!r}")
    return EXIT_OK


def _default_segments(n: int) -> int:
    return n // 100 if n % 100 == 0 and n >= 100 else n


def cmd_analyze(args) -> int:
    run_dir = Path(args.run_dir)
    man = read_manifest(run_dir)
    cfg, data = config_from_sections(man["config"])
    out = prepare_output(args.output, args.force)
    dataset, _ = load_data(data, cfg.seed, run_dir)
    sched = load_schedule(run_dir / man["artifacts"]["schedule"])
    model = load_model(run_dir / man["artifacts"]["model"])
    n = sched.dataset_size
    segs = args.segments or _default_segments(n)
    exp_id = args.experiment_id or run_dir.resolve().name
    cond = man.get("command", "run")
    arts = {}

    hist = segment_histogram(sched, n, segs)
    name = artifact_name(exp_id, cond, cfg.seed, "histogram")
    hist.to_csv(out / name)
    arts["histogram"] = name
    for tag, h in stage_histograms(sched, segs).items():
        name = artifact_name(exp_id, cond, cfg.seed, f"histogram_stage{tag}")
        h.to_csv(out / name)
        arts[f"histogram_stage{tag}"] = name

    rng = np.random.default_rng(cfg.seed)
    ids = None if args.freq_samples is None or args.freq_samples >= n else np.sort(
        rng.choice(n, size=args.freq_samples, replace=False))
    table = frequency_loss_table(sched, per_sample_losses(model, dataset), ids)
    name = artifact_name(exp_id, cond, cfg.seed, "freq_loss")
    table.to_csv(out / name)
    arts["freq_loss"] = name

    metrics = {"pearson": table.correlation, "histogram_total": hist.total, "schedule_samples": sched.num_samples}
    if cond == "search":
        # single-seed uniform / static / dynamic row for the analysed run
        p = static_distribution(sched, args.final_only)
        static = make_static_schedule(p, sched.num_batches, sched.batch_size,
                                      RngStream(cfg.seed, 0, 0, PURPOSE_STATIC))
        _, st_ev = replay_run(static, cfg.hidden_dim, cfg.hyper, dataset, cfg.seed)
        _, _, uni_ev = plain_sgd_baseline(dataclasses.replace(cfg, exploration_type="uniform"), dataset)
        dyn = man["metrics"]["final_eval"]["metric"]
        name = artifact_name(exp_id, "conditions", cfg.seed, "table")
        with open(out / name, "w") as fh:
            fh.write("condition,metric\n")
            for c, v in (("UNIFORM", uni_ev.metric), ("STATIC", st_ev.metric), ("DYNAMIC", dyn)):
                fh.write(f"{c},{float(v)!r}\n")
        arts["conditions"] = name
    write_manifest(out, "analyze", cfg, data, arts, {}, metrics, {"source_run": str(run_dir.resolve())})
    print(f"analysis written to {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg, data = read_config(args.config, _overrides(args))
    out = prepare_output(args.output, args.force)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds: cannot parse {args.seeds!r}") from None
    base = Path(args.config).resolve().parent
    per_seed_data = "csv" not in data and "seed" not in data

    def dataset_for(seed):
        return load_data(data, seed if per_seed_data else cfg.seed, base)[0]

    t0 = time.perf_counter()
    table = compare_conditions(cfg, dataset_for, seeds, final_only=args.final_only)
    exp_id = args.experiment_id or out.resolve().name
    name = artifact_name(exp_id, "compare", None, "table")
    table.to_csv(out / name)
    write_manifest(out, "compare", cfg, data, {"table": name}, {"compare_seconds": time.perf_counter() - t0},
                   {c: {"mean": float(m), "std": float(s)} for c, m, s in zip(table.conditions, table.mean, table.std)},
                   {"seeds": seeds})
    print(table)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_overrides(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("config overrides")
    for f in dataclasses.fields(SearchConfig):
        g.add_argument(_flag(f.name), dest=f"ov_{f.name}", default=None, metavar="VALUE",
                       help=f"override {f.name}")


def _overrides(args) -> dict:
    defaults = _defaults(SearchConfig)
    out = {}
    for name, default in defaults.items():
        raw = getattr(args, f"ov_{name}", None)
        if raw is not None:
            out[name] = _coerce(name, raw, default)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autosampling", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("config", help="INI config file")
        p.add_argument("-o", "--output", required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")

    p = sub.add_parser("search", help="run the schedule search")
    common(p)
    p.add_argument("--jobs", type=int, default=None, help="worker threads (default: population size, capped by CPUs)")
    _add_config_overrides(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("baseline", help="plain SGD on shuffled epochs")
    common(p)
    _add_config_overrides(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("static", help="train on a schedule drawn from a fixed distribution")
    common(p)
    p.add_argument("--distribution", required=True, help="distribution.bin to draw from")
    _add_config_overrides(p)
    p.set_defaults(func=cmd_static)

    p = sub.add_parser("replay", help="train on a recorded schedule (optionally another architecture)")
    common(p, needs_config=False)
    p.add_argument("--config", default=None)
    p.add_argument("--manifest", default=None, help="run directory or manifest.json of a previous run")
    p.add_argument("--schedule", default=None, help="schedule.bin (defaults to the manifest's)")
    _add_config_overrides(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("analyze", help="histogram, frequency/loss and condition CSVs for a run")
    p.add_argument("run_dir")
    common(p, needs_config=False)
    p.add_argument("--segments", type=int, default=None)
    p.add_argument("--freq-samples", type=int, default=500)
    p.add_argument("--final-only", action="store_true", help="estimate STATIC from the last alternation only")
    p.add_argument("--experiment-id", default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="UNIFORM / STATIC / DYNAMIC over several seeds")
    common(p)
    p.add_argument("--seeds", required=True, help="comma-separated seeds")
    p.add_argument("--final-only", action="store_true")
    p.add_argument("--experiment-id", default=None)
    _add_config_overrides(p)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
