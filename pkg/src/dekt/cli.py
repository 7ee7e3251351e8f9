"""Command-line entry point: ``python -m dekt <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Every subcommand that writes output leaves a ``run.json`` echo of the
resolved configuration in its ``--out`` directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import Graph, grad_check
from .data import (
    PRESET_LENGTHS,
    Batch,
    ColumnMapping,
    DataError,
    Vocabulary,
    build_qmatrix,
    build_sequences,
    parse_interactions,
    read_qmatrix_csv,
    write_interactions,
    write_qmatrix_csv,
)
from .embeddings import VARIANTS, ModelShape, init_params
from .metrics import MetricsReport
from .predict import unroll
from .simulate import SyntheticProfile, simulate
from .training import (
    DEFAULT_BINS_GRID,
    Dataset,
    TrainConfig,
    batch_loss,
    evaluate,
    fit,
    prepare_dataset,
)
from .transfer import load_checkpoint, save_checkpoint, train_transfer

log = logging.getLogger("dekt")


class UsageError(Exception):
    """Bad flags or configuration: exit code 2."""


# ---------------------------------------------------------------------------
# parser


def _parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON run config (flags override it)")
    shared.add_argument("--out", help="output directory")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--fold", type=int)
    shared.add_argument("--preset", choices=[*PRESET_LENGTHS, "custom"])
    shared.add_argument("--data", help="interaction CSV")
    shared.add_argument("--mapping", help="column-mapping JSON for foreign CSV layouts")
    shared.add_argument("--qmatrix", help="Q-matrix CSV (exercise_id,concept_ids)")
    shared.add_argument("--epochs", type=int)
    shared.add_argument("--dk", type=int, dest="d_k")
    shared.add_argument("--bins-per-emotion", type=int, dest="bins")
    shared.add_argument("--length", type=int)
    shared.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dekt", description="Dual-state emotion-aware knowledge tracing.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[shared], help="write a synthetic interaction log")
    s.add_argument("--students", type=int, default=100)
    s.add_argument("--concepts", type=int, default=10)
    s.add_argument("--exercises", type=int, default=100)
    s.add_argument("--coupling", type=float, default=2.0)
    s.add_argument("--no-emotions", action="store_true")

    sub.add_parser("prepare", parents=[shared], help="build vocabulary, sequences and Q-matrix")
    sub.add_parser("train", parents=[shared], help="train one fold")

    e = sub.add_parser("evaluate", parents=[shared], help="score a checkpoint on a log")
    e.add_argument("--ckpt", required=True)

    a = sub.add_parser("ablate", parents=[shared], help="train ablation variants")
    group = a.add_mutually_exclusive_group(required=True)
    group.add_argument("--variant", choices=VARIANTS)
    group.add_argument("--all", action="store_true")

    w = sub.add_parser("sweep", parents=[shared], help="retrain over emotion bin counts")
    w.add_argument("--bins", dest="bins_list", default=",".join(map(str, DEFAULT_BINS_GRID)))

    t = sub.add_parser("transfer", parents=[shared], help="T-DEKT on an emotionless log")
    t.add_argument("--source-ckpt", required=True)

    g = sub.add_parser("gradcheck", parents=[shared], help="finite-difference check of the full step")
    g.add_argument("--concepts", type=int, default=4)
    g.add_argument("--steps", type=int, default=4)

    x = sub.add_parser("export-trajectories", parents=[shared], help="per-step predictions for one student")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--student", required=True)
    return p


# ---------------------------------------------------------------------------
# config resolution


def _resolve(args) -> tuple[TrainConfig, dict]:
    """TrainConfig from defaults <- config file <- flags, plus path settings.

    ``paths["explicit"]`` lists the TrainConfig fields that were actually set.
    """
    raw: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path}: {exc}") from exc
    paths = {k: raw.pop(k, None) for k in ("data", "qmatrix", "mapping", "out", "preset")}
    for key in ("data", "qmatrix", "mapping", "out", "preset"):
        if getattr(args, key, None) is not None:
            paths[key] = getattr(args, key)
    for key in ("seed", "fold", "epochs", "d_k", "bins", "length"):
        if getattr(args, key, None) is not None:
            raw[key] = getattr(args, key)
    preset = paths.get("preset")
    if preset and preset != "custom":
        if "length" in raw and raw["length"] != PRESET_LENGTHS[preset]:
            raise UsageError(f"preset {preset} fixes length {PRESET_LENGTHS[preset]}, got {raw['length']}")
        raw["length"] = PRESET_LENGTHS[preset]
    try:
        cfg = TrainConfig.from_dict(raw)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    for key in ("data", "qmatrix", "mapping"):
        if paths.get(key) and not Path(paths[key]).exists():
            raise UsageError(f"{key} file {paths[key]} does not exist")
    paths["explicit"] = sorted(raw)
    return cfg, paths


def _out_dir(args, paths: dict) -> Path:
    out = Path(paths.get("out") or f"runs/{args.command}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _run_json(out: Path, args, extra: dict) -> None:
    _write_json(out / "run.json", {"command": args.command, **extra})


def _records(paths: dict):
    if not paths.get("data"):
        raise UsageError("--data is required")
    mapping = ColumnMapping.from_json(Path(paths["mapping"]).read_text()) if paths.get("mapping") else None
    with open(paths["data"], newline="", encoding="utf-8") as fh:
        return parse_interactions(fh, mapping)


def _dataset(cfg: TrainConfig, paths: dict, vocab: Vocabulary | None = None) -> Dataset:
    records = _records(paths)
    ds = prepare_dataset(records, cfg.length, cfg.bins, cfg.multi_hot, vocab)
    if paths.get("qmatrix"):
        with open(paths["qmatrix"], newline="", encoding="utf-8") as fh:
            ds.qmatrix = build_qmatrix(read_qmatrix_csv(fh), ds.vocab, cfg.multi_hot)
    return ds


def _metrics(report: MetricsReport, variant: str, fold: int, epoch: int | None = None) -> dict:
    return report.to_json(variant, fold, epoch)


def _write_history(path: Path, history: list[dict]) -> None:
    cols = ["epoch", "train_loss", "val_auc", "val_acc", "val_rmse", "val_r2"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in history:
            w.writerow(["" if row[c] is None else repr(row[c]) for c in cols])


def _save_run(out: Path, res, cfg: TrainConfig, ds: Dataset, name: str = "checkpoint") -> None:
    extra = {"config": cfg.to_dict(), "vocab": ds.vocab.to_json(), "qmatrix": ds.qmatrix.tolist()}
    save_checkpoint(res.params, res.shape, out / name, extra)
    _write_json(out / "metrics.json", _metrics(res.test, cfg.variant, cfg.fold, res.best_epoch))
    _write_history(out / "history.csv", res.history)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    if args.config:
        raise UsageError("simulate takes flags only")
    seed = 0 if args.seed is None else args.seed
    profile = SyntheticProfile(
        students=args.students,
        length=args.length or 50,
        concepts=args.concepts,
        exercises=args.exercises,
        coupling=args.coupling,
        with_emotions=not args.no_emotions,
        seed=seed,
    )
    try:
        profile.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _out_dir(args, {"out": args.out})
    with open(out / "interactions.csv", "w", newline="", encoding="utf-8") as fh:
        write_interactions(simulate(profile), fh)
    _run_json(out, args, {"seed": seed, "profile": asdict(profile)})
    return 0


def cmd_prepare(args) -> int:
    cfg, paths = _resolve(args)
    ds = _dataset(cfg, paths)
    out = _out_dir(args, paths)
    _write_json(out / "vocab.json", ds.vocab.to_json())
    inv = {v: k for k, v in ds.vocab.exercise.items()}
    concepts = {v: k for k, v in ds.vocab.concept.items()}
    rows = {inv[i]: [concepts[j + 1] for j in np.flatnonzero(ds.qmatrix[i])] for i in sorted(inv)}
    with open(out / "qmatrix.csv", "w", newline="", encoding="utf-8") as fh:
        write_qmatrix_csv(rows, fh)
    summary = {
        "students": len(ds.students()),
        "sequences": len(ds.sequences),
        "interactions": int(sum(s.real_length for s in ds.sequences)),
        "has_emotions": ds.has_emotions,
        "sizes": ds.vocab.sizes,
        "concepts": ds.vocab.n_concepts,
    }
    _write_json(out / "summary.json", summary)
    _run_json(out, args, {"seed": cfg.seed, "config": cfg.to_dict(), "paths": paths})
    return 0


def cmd_train(args) -> int:
    cfg, paths = _resolve(args)
    ds = _dataset(cfg, paths)
    out = _out_dir(args, paths)
    _run_json(out, args, {"seed": cfg.seed, "config": cfg.to_dict(), "paths": paths})
    _save_run(out, fit(cfg, ds), cfg, ds)
    return 0


def _load_with_meta(path: str):
    if not Path(str(path) + ".manifest.json").exists() and not Path(path).exists():
        raise UsageError(f"checkpoint {path} does not exist")
    params, shape, extra = load_checkpoint(path)
    if "vocab" not in extra:
        raise DataError(f"checkpoint {path} carries no vocabulary")
    cfg = TrainConfig.from_dict(extra["config"])
    return params, shape, cfg, Vocabulary.from_json(extra["vocab"]), np.array(extra["qmatrix"])


def cmd_evaluate(args) -> int:
    _, paths = _resolve(args)
    params, shape, cfg, vocab, q = _load_with_meta(args.ckpt)
    records = _records(paths)
    seqs = build_sequences(records, cfg.length, vocab, shape.bins)
    with_emotion = records[0].emotions is not None if records else False
    report = evaluate(params, seqs, q, shape.variant, with_emotion, bins=shape.bins)
    out = _out_dir(args, paths)
    _write_json(out / "metrics.json", _metrics(report, shape.variant, None))
    _run_json(out, args, {"seed": cfg.seed, "ckpt": str(args.ckpt), "paths": paths})
    return 0


def cmd_ablate(args) -> int:
    cfg, paths = _resolve(args)
    ds = _dataset(cfg, paths)
    out = _out_dir(args, paths)
    variants = VARIANTS if args.all else (args.variant,)
    _run_json(out, args, {"seed": cfg.seed, "config": cfg.to_dict(), "variants": list(variants), "paths": paths})
    rows = []
    for v in variants:
        vc = TrainConfig.from_dict({**cfg.to_dict(), "variant": v})
        res = fit(vc, ds)
        sub = out / v
        sub.mkdir(exist_ok=True)
        _save_run(sub, res, vc, ds)
        rows.append(_metrics(res.test, v, vc.fold, res.best_epoch))
    _write_table(out / "ablation.csv", "variant", rows)
    return 0


def _write_table(path: Path, key: str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([key, "auc", "acc", "rmse", "r2", "emotion_rmse_mean"])
        for r in rows:
            emo = r["emotion_rmse"]["mean"] if r.get("emotion_rmse") else ""
            w.writerow([r[key], r["auc"], r["acc"], r["rmse"], r["r2"], emo])


def cmd_sweep(args) -> int:
    cfg, paths = _resolve(args)
    try:
        bins_list = [int(b) for b in args.bins_list.split(",") if b.strip()]
    except ValueError as exc:
        raise UsageError(f"--bins: {exc}") from exc
    if not bins_list or min(bins_list) < 1:
        raise UsageError("--bins needs positive integers")
    records = _records(paths)
    out = _out_dir(args, paths)
    _run_json(out, args, {"seed": cfg.seed, "config": cfg.to_dict(), "bins": bins_list, "paths": paths})
    rows = []
    for bins in bins_list:
        bc = TrainConfig.from_dict({**cfg.to_dict(), "bins": bins})
        ds = prepare_dataset(records, bc.length, bins, bc.multi_hot)
        res = fit(bc, ds)
        sub = out / f"bins_{bins}"
        sub.mkdir(exist_ok=True)
        _save_run(sub, res, bc, ds)
        rows.append({"bins": bins, **_metrics(res.test, bc.variant, bc.fold, res.best_epoch)})
    _write_table(out / "sweep.csv", "bins", rows)
    return 0


def cmd_transfer(args) -> int:
    cfg, paths = _resolve(args)
    if not Path(args.source_ckpt + ".manifest.json").exists() and not Path(args.source_ckpt).exists():
        raise UsageError(f"checkpoint {args.source_ckpt} does not exist")
    source, source_shape, _ = load_checkpoint(args.source_ckpt)
    # d_k and bins follow the source unless set explicitly
    inherit = {k: getattr(source_shape, k) for k in ("d_k", "bins") if k not in paths["explicit"]}
    cfg = TrainConfig.from_dict({**cfg.to_dict(), **inherit})
    ds = _dataset(cfg, paths)
    out = _out_dir(args, paths)
    _run_json(out, args, {"seed": cfg.seed, "config": cfg.to_dict(), "source_ckpt": args.source_ckpt, "paths": paths})
    _save_run(out, train_transfer(source, source_shape, cfg, ds), cfg, ds)
    return 0


def gradcheck_report(d_k: int, concepts: int, steps: int, seed: int, variant: str = "full"):
    """Finite-difference check of the joint loss over ``steps`` unrolled steps."""
    rng = np.random.default_rng(seed)
    B, n_ex, n_tok, bins = 2, 6, 5, 10
    shape = ModelShape(n_ex + 1, n_tok + 1, n_tok + 1, concepts, d_k, bins, variant)
    params = init_params(shape, rng)
    q = np.zeros((n_ex + 1, concepts))
    q[np.arange(1, n_ex + 1), rng.integers(concepts, size=n_ex)] = 1.0
    vals = rng.random((B, steps, 4))
    batch = Batch(
        rng.integers(1, n_ex + 1, (B, steps)),
        rng.integers(1, n_tok + 1, (B, steps)),
        rng.integers(1, n_tok + 1, (B, steps)),
        rng.integers(1, 3, (B, steps)),
        np.minimum(np.floor(vals * bins).astype(int), bins - 1) + 1,
        vals,
        np.ones((B, steps)),
        [f"s{i}" for i in range(B)],
    )

    def build(graph, P):
        return batch_loss(graph, P, batch, q, variant)[0]

    return grad_check(build, params)


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    d_k = 3 if args.d_k is None else args.d_k
    if min(d_k, args.concepts) < 1 or args.steps < 2:
        raise UsageError("--dk and --concepts must be positive, --steps >= 2")
    report = gradcheck_report(d_k, args.concepts, args.steps, seed)
    print(f"max relative error {report.max_rel_error:.3e} at {report.worst} over {report.n_checked} coordinates")
    if args.out:
        out = _out_dir(args, {"out": args.out})
        _run_json(out, args, {"seed": seed, "d_k": d_k, "concepts": args.concepts, "steps": args.steps})
        _write_json(out / "gradcheck.json", {"max_rel_error": report.max_rel_error, "n_checked": report.n_checked})
    return 0 if report.max_rel_error < 1e-4 else 1


def cmd_export(args) -> int:
    _, paths = _resolve(args)
    params, shape, cfg, vocab, q = _load_with_meta(args.ckpt)
    records = [r for r in _records(paths) if r.student_id == args.student]
    if not records:
        raise UsageError(f"student {args.student!r} not in {paths['data']}")
    seqs = build_sequences(records, cfg.length, vocab, shape.bins)
    inv = {v: k for k, v in vocab.exercise.items()}
    out = _out_dir(args, paths)
    rows, offset = [], 0
    for seq in seqs:
        graph = Graph(checked=False)
        P = graph.parameters(params)
        un = unroll(graph, P, Batch.from_sequences([seq]), q, shape.variant)
        for t in range(1, seq.real_length):
            o = un.outputs[t - 1]
            g = o.g.value[0]
            h_norm = float(np.linalg.norm(o.trace["h_next_rel"].value[0]))
            rows.append([offset + t, inv[int(seq.exercise[t])], repr(float(o.y.value[0])), *map(repr, map(float, g)), repr(h_norm)])
        offset += seq.real_length
    safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in args.student)
    with open(out / f"trajectory_{safe}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "exercise_id", "y", "g_conc", "g_bor", "g_conf", "g_fru", "h_related_norm"])
        w.writerows(rows)
    _run_json(out, args, {"seed": cfg.seed, "ckpt": str(args.ckpt), "student": args.student, "paths": paths})
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "transfer": cmd_transfer,
    "gradcheck": cmd_gradcheck,
    "export-trajectories": cmd_export,
}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dekt {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 1
        print(f"dekt {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
