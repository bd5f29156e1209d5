"""Command-line front end: train, describe, match, eval, bench, synth, truncate."""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .boosting import (
    MODE_BINARY,
    MODE_REAL,
    TrainConfig,
    TrainingError,
    adaboost_train,
    beblid_train,
    build_unbalanced_set,
    recommended_gamma,
)
from .datasets import Jitter, load_pairs, load_patchset, save_pairs, save_patchset, synth_patchset
from .descriptor import (
    DescriptorModel,
    ModelFormatError,
    describe_binary,
    describe_real,
    deserialize_model,
    format_descriptors,
    parse_descriptors,
    parse_keypoints,
    serialize_model,
    truncate_model,
)
from .evaluation import (
    eval_verification,
    matching_average_precisions,
    pair_distances,
    retrieval_average_precisions,
)
from .imaging import PgmError, integral_image, load_pgm
from .matching import match_nn
from .weaklearners import DEFAULT_SCALES

_ERRORS = (ValueError, OSError, TrainingError, PgmError, ModelFormatError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beblid",
        description="Boosted binary local image descriptors: train, extract, match, evaluate.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic patch set")
    p.add_argument("--out", type=Path, required=True, help="output patch-set directory")
    p.add_argument("--structures", type=int, required=True)
    p.add_argument("--instances", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--side", type=int, default=32)
    p.add_argument("--noise", type=float, default=8.0, help="pixel noise sigma")
    p.add_argument("--shift", type=float, default=1.0, help="sub-pixel shift range (+- px)")
    p.add_argument("--rotation", type=float, default=10.0, help="rotation range (+- degrees)")
    p.add_argument("--brightness", type=float, default=20.0, help="brightness offset range")
    p.add_argument("--pairs-out", type=Path, help="also write a labeled pair file")
    p.add_argument("--positive-ratio", type=float, default=0.5)
    p.add_argument("--pairs-total", type=int, default=1000)
    _common_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a descriptor model on a patch set")
    p.add_argument("--patches", type=Path, required=True, help="patch-set directory")
    p.add_argument("--out", type=Path, required=True, help="output model file")
    p.add_argument("--pairs", type=Path, help="pair file; omit to sample pairs")
    p.add_argument("--positive-ratio", type=float, default=0.5, help="sampled positive fraction")
    p.add_argument("--pairs-total", type=int, default=20000, help="sampled pair count")
    p.add_argument("--mode", choices=[MODE_BINARY, MODE_REAL], default=MODE_BINARY)
    p.add_argument("--gamma", type=float, help="learning rate; defaults per mode and ratio")
    p.add_argument("--k-max", type=int, default=512, help="maximum number of weak learners")
    p.add_argument("--candidates", type=int, default=500, help="pixel pairs sampled per round")
    p.add_argument("--scales", type=_scale_list, default=DEFAULT_SCALES, help="comma-separated box sizes")
    p.add_argument("--balanced", action="store_true", help="rebalance class priors every round")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--scale-multiplier", type=float, default=1.0)
    p.add_argument("--no-resample", action="store_true", help="keep one candidate set across rounds")
    p.add_argument("--quiet", action="store_true", help="suppress per-round progress on stderr")
    p.add_argument("--report", type=Path, help="write the training report here instead of stdout")
    p.add_argument("--csv", type=Path, help="write the per-round table as CSV")
    p.add_argument("--figures", type=Path, help="directory for rendered figures")
    _common_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("describe", help="extract descriptors at keypoints")
    p.add_argument("--image", type=Path, required=True, help="binary PGM image")
    p.add_argument("--keypoints", type=Path, required=True, help="keypoint file: x y size angle")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output descriptor file")
    _common_flags(p)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("match", help="brute-force nearest-neighbor matching")
    p.add_argument("--queries", type=Path, required=True, help="query descriptor file")
    p.add_argument("--train", type=Path, required=True, help="train descriptor file")
    p.add_argument("--out", type=Path, required=True, help="output match file: query train distance")
    p.add_argument("--cross-check", action="store_true", help="keep mutual nearest neighbors only")
    _common_flags(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="run an evaluation protocol")
    ev = p.add_subparsers(dest="task", required=True)

    v = ev.add_parser("verification", help="labeled-pair verification metrics")
    v.add_argument("--descriptors", type=Path, required=True)
    v.add_argument(
        "--pairs",
        action="append",
        required=True,
        metavar="[NAME=]FILE",
        help="labeled pair file; repeat for multiple variants",
    )
    _eval_output_flags(v)
    _common_flags(v)
    v.set_defaults(func=cmd_eval_verification)

    m = ev.add_parser("matching", help="image-matching mAP over sequences")
    m.add_argument(
        "--sequence",
        action="append",
        required=True,
        metavar="REF,REF_IDS,TGT,TGT_IDS",
        help="four comma-separated files; repeat per image pair",
    )
    _eval_output_flags(m)
    _common_flags(m)
    m.set_defaults(func=cmd_eval_matching)

    r = ev.add_parser("retrieval", help="patch-retrieval mAP")
    r.add_argument("--queries", type=Path, required=True)
    r.add_argument("--query-ids", type=Path, required=True)
    r.add_argument("--pool", type=Path, required=True)
    r.add_argument("--pool-ids", type=Path, required=True)
    r.add_argument("--self-indices", type=Path, help="pool index of each query, -1 if absent")
    _eval_output_flags(r)
    _common_flags(r)
    r.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("bench", help="time descriptor extraction on one image")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--keypoints", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--report", type=Path, help="write the timing report here instead of stdout")
    p.add_argument("--csv", type=Path, help="write per-repetition times as CSV")
    p.add_argument("--figures", type=Path, help="directory for rendered figures")
    _common_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("truncate", help="keep the first K learners of a model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    _common_flags(p)
    p.set_defaults(func=cmd_truncate)

    return parser


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--threads",
        type=int,
        default=0,
        help="worker thread hint (0 = auto); BEBLID_THREADS overrides",
    )


def _eval_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--report", type=Path, help="write the metrics report here instead of stdout")
    p.add_argument("--csv", type=Path, help="write the metrics table as CSV")
    p.add_argument("--figures", type=Path, help="directory for rendered figures")


def _scale_list(text: str) -> tuple[int, ...]:
    try:
        scales = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad scale list {text!r}") from None
    if not scales or any(s < 1 or s % 2 == 0 for s in scales):
        raise argparse.ArgumentTypeError("scales must be odd positive integers")
    return scales


def resolve_threads(args: argparse.Namespace) -> int:
    """Thread count hint; correctness never depends on it."""
    env = os.environ.get("BEBLID_THREADS")
    if env is not None:
        try:
            return max(0, int(env))
        except ValueError:
            raise ValueError(f"BEBLID_THREADS must be an integer, got {env!r}") from None
    return max(0, args.threads)


def _require(*paths: Path) -> None:
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"input path does not exist: {p}")


def _emit(lines: list[str], path: Path | None) -> None:
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def _load_model(path: Path) -> DescriptorModel:
    return deserialize_model(path.read_bytes())


def _load_ids(path: Path) -> list[int]:
    out = []
    for line in path.read_text().splitlines():
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        out.append(int(s))
    return out


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    resolve_threads(args)
    rng = np.random.default_rng(args.seed)
    jitter = Jitter(
        noise_sigma=args.noise,
        shift_range=args.shift,
        rotation_range=args.rotation,
        brightness_range=args.brightness,
    )
    ps = synth_patchset(rng, args.structures, args.instances, jitter, side=args.side)
    save_patchset(args.out, ps)
    print(f"wrote {len(ps)} patches ({args.structures} structures) to {args.out}", file=sys.stderr)
    if args.pairs_out is not None:
        pairs = build_unbalanced_set(ps, args.positive_ratio, args.pairs_total, rng)
        args.pairs_out.parent.mkdir(parents=True, exist_ok=True)
        args.pairs_out.write_text(save_pairs(pairs, len(ps)))
        print(f"wrote {len(pairs)} pairs to {args.pairs_out}", file=sys.stderr)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    resolve_threads(args)
    _require(args.patches)
    ps = load_patchset(args.patches)
    rng = np.random.default_rng(args.seed)
    if args.pairs is not None:
        _require(args.pairs)
        pairs, declared = load_pairs(args.pairs.read_text())
        if declared != len(ps):
            raise ValueError(f"pair file declares {declared} patches, set has {len(ps)}")
        positive_ratio = sum(1 for p in pairs if p.label > 0) / max(1, len(pairs))
    else:
        positive_ratio = args.positive_ratio
        pairs = build_unbalanced_set(ps, positive_ratio, args.pairs_total, rng)

    gamma = args.gamma if args.gamma is not None else recommended_gamma(args.mode, positive_ratio)
    config = TrainConfig(
        k_max=args.k_max,
        gamma=gamma,
        n_candidates=args.candidates,
        scales=args.scales,
        balanced_priors=args.balanced,
        seed=args.seed,
        mode=args.mode,
        resample_candidates=not args.no_resample,
        verbose=not args.quiet,
    )
    train = beblid_train if args.mode == MODE_BINARY else adaboost_train
    run = train(ps, pairs, config)

    model = DescriptorModel(run.ensemble, ps.side, args.scale_multiplier)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(serialize_model(model))

    lines = [
        f"mode={config.mode}",
        f"k={len(run.ensemble)}",
        f"k_max={config.k_max}",
        f"gamma={config.gamma:.17g}",
        f"positive_ratio={positive_ratio:.6g}",
        f"pairs={len(pairs)}",
        f"balanced={'yes' if config.balanced_priors else 'no'}",
        f"seed={config.seed}",
        f"stopped_early={'yes' if run.stopped_early else 'no'}",
        f"final_loss={run.final_loss:.17g}",
        f"model={args.out}",
    ]
    for r in run.rounds:
        f = r.learner.feature
        lines.append(
            f"round={r.round_index} p1=({f.p1[0]},{f.p1[1]}) p2=({f.p2[0]},{f.p2[1]}) "
            f"s={f.s} T={r.learner.threshold} alpha={r.alpha:.9g} err={r.error:.9g} "
            f"loss={r.loss:.9g}"
        )
    _emit(lines, args.report)

    if args.csv is not None:
        from .report import write_csv

        write_csv(
            args.csv,
            ["round", "p1_row", "p1_col", "p2_row", "p2_col", "s", "T", "alpha", "error", "loss"],
            [
                [
                    r.round_index,
                    r.learner.feature.p1[0],
                    r.learner.feature.p1[1],
                    r.learner.feature.p2[0],
                    r.learner.feature.p2[1],
                    r.learner.feature.s,
                    r.learner.threshold,
                    r.alpha,
                    r.error,
                    r.loss,
                ]
                for r in run.rounds
            ],
        )
    if args.figures is not None:
        from .report import save_training_figure

        save_training_figure(args.figures / "training_curve.png", run.rounds)
    return 0


def cmd_describe(args: argparse.Namespace) -> int:
    resolve_threads(args)
    _require(args.image, args.keypoints, args.model)
    img = load_pgm(args.image.read_bytes())
    kps = parse_keypoints(args.keypoints.read_text())
    model = _load_model(args.model)
    ii = integral_image(img)
    describe = describe_binary if model.mode == MODE_BINARY else describe_real
    descriptors, kept = describe(ii, kps, model)
    dropped = sorted(set(range(len(kps))) - set(kept))
    if dropped:
        print("dropped keypoints: " + " ".join(str(i) for i in dropped), file=sys.stderr)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(format_descriptors(descriptors, kept, model.mode, k=model.nbits))
    return 0


def cmd_match(args: argparse.Namespace) -> int:
    resolve_threads(args)
    _require(args.queries, args.train)
    queries, _, qmode = parse_descriptors(args.queries.read_text())
    train, _, tmode = parse_descriptors(args.train.read_text())
    if qmode != tmode:
        raise ValueError(f"descriptor mode mismatch: {qmode} vs {tmode}")
    matches = match_nn(queries, train, cross_check=args.cross_check)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as fh:
        for m in matches:
            d = f"{m.distance}" if isinstance(m.distance, int) else f"{m.distance:.17g}"
            fh.write(f"{m.query_index} {m.train_index} {d}\n")
    return 0


def cmd_eval_verification(args: argparse.Namespace) -> int:
    resolve_threads(args)
    _require(args.descriptors)
    descriptors, _, _ = parse_descriptors(args.descriptors.read_text())
    variants = []
    for spec in args.pairs:
        name, _, path = spec.rpartition("=")
        path = Path(path)
        _require(path)
        name = name or path.stem
        pairs, declared = load_pairs(path.read_text())
        if declared > len(descriptors):
            raise ValueError(f"pair file {path} declares {declared} descriptors, file has {len(descriptors)}")
        variants.append((name, pairs))

    lines = ["task=verification"]
    rows = []
    curves = {}
    results = []
    for name, pairs in variants:
        res = eval_verification(descriptors, pairs)
        results.append(res)
        lines.append(
            f"variant={name} pairs={len(pairs)} ap={res.ap:.6f} auc={res.auc:.6f} "
            f"fpr95={res.fpr95:.6f}"
        )
        rows.append([name, len(pairs), res.ap, res.auc, res.fpr95])
        d = pair_distances(descriptors, pairs)
        curves[name] = (-d, np.array([p.label for p in pairs]))
    lines.append(f"map={np.mean([r.ap for r in results]):.6f}")
    lines.append(f"auc={np.mean([r.auc for r in results]):.6f}")
    lines.append(f"fpr95={np.mean([r.fpr95 for r in results]):.6f}")
    _emit(lines, args.report)

    if args.csv is not None:
        from .report import write_csv

        write_csv(args.csv, ["variant", "pairs", "ap", "auc", "fpr95"], rows)
    if args.figures is not None:
        from .report import save_roc_figure

        save_roc_figure(args.figures / "verification_roc.png", curves)
    return 0


def cmd_eval_matching(args: argparse.Namespace) -> int:
    resolve_threads(args)
    all_aps = []
    lines = ["task=matching"]
    rows = []
    for spec in args.sequence:
        parts = [Path(p) for p in spec.split(",")]
        if len(parts) != 4:
            raise ValueError(f"--sequence needs REF,REF_IDS,TGT,TGT_IDS, got {spec!r}")
        _require(*parts)
        ref, _, _ = parse_descriptors(parts[0].read_text())
        ref_ids = _load_ids(parts[1])
        tgt, _, _ = parse_descriptors(parts[2].read_text())
        tgt_ids = _load_ids(parts[3])
        aps = matching_average_precisions(ref, ref_ids, tgt, tgt_ids)
        all_aps.append(aps)
        name = parts[0].stem
        lines.append(f"sequence={name} queries={len(aps)} map={aps.mean():.6f}")
        rows.append([name, len(aps), float(aps.mean())])
    pooled = np.concatenate(all_aps)
    lines.append(f"map={pooled.mean():.6f}")
    _emit(lines, args.report)

    if args.csv is not None:
        from .report import write_csv

        write_csv(args.csv, ["sequence", "queries", "map"], rows)
    if args.figures is not None:
        from .report import save_ap_histogram

        save_ap_histogram(args.figures / "matching_ap.png", pooled, "image matching")
    return 0


def cmd_eval_retrieval(args: argparse.Namespace) -> int:
    resolve_threads(args)
    _require(args.queries, args.query_ids, args.pool, args.pool_ids)
    queries, _, _ = parse_descriptors(args.queries.read_text())
    query_ids = _load_ids(args.query_ids)
    pool, _, _ = parse_descriptors(args.pool.read_text())
    pool_ids = _load_ids(args.pool_ids)
    self_indices = None
    if args.self_indices is not None:
        _require(args.self_indices)
        self_indices = _load_ids(args.self_indices)
    aps = retrieval_average_precisions(queries, query_ids, pool, pool_ids, self_indices)
    lines = ["task=retrieval", f"queries={len(aps)}", f"map={aps.mean():.6f}"]
    _emit(lines, args.report)

    if args.csv is not None:
        from .report import write_csv

        write_csv(args.csv, ["query", "ap"], [[i, float(a)] for i, a in enumerate(aps)])
    if args.figures is not None:
        from .report import save_ap_histogram

        save_ap_histogram(args.figures / "retrieval_ap.png", aps, "patch retrieval")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    resolve_threads(args)
    _require(args.image, args.keypoints, args.model)
    if args.repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    img = load_pgm(args.image.read_bytes())
    kps = parse_keypoints(args.keypoints.read_text())
    model = _load_model(args.model)
    describe = describe_binary if model.mode == MODE_BINARY else describe_real

    ii = integral_image(img)
    descriptors, kept = describe(ii, kps, model)  # warm-up, also counts kept keypoints
    times = []
    for _ in range(args.repetitions):
        t0 = time.perf_counter()
        ii = integral_image(img)
        describe(ii, kps, model)
        times.append((time.perf_counter() - t0) * 1000.0)
    times_arr = np.array(times)
    mean_ms = float(times_arr.mean())
    per_second = len(kept) / (mean_ms / 1000.0) if mean_ms > 0 else float("inf")
    lines = [
        f"image={img.width}x{img.height}",
        f"keypoints={len(kps)}",
        f"kept={len(kept)}",
        f"k={model.nbits}",
        f"mode={model.mode}",
        f"repetitions={args.repetitions}",
        f"mean_ms={mean_ms:.4f}",
        f"median_ms={float(np.median(times_arr)):.4f}",
        f"min_ms={float(times_arr.min()):.4f}",
        f"descriptors_per_second={per_second:.1f}",
    ]
    _emit(lines, args.report)

    if args.csv is not None:
        from .report import write_csv

        write_csv(args.csv, ["repetition", "ms"], [[i + 1, t] for i, t in enumerate(times)])
    if args.figures is not None:
        from .report import save_bench_figure

        save_bench_figure(args.figures / "bench_times.png", times)
    return 0


def cmd_truncate(args: argparse.Namespace) -> int:
    resolve_threads(args)
    _require(args.model)
    model = _load_model(args.model)
    truncated = truncate_model(model, args.bits)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(serialize_model(truncated))
    print(f"kept {truncated.nbits} of {model.nbits} learners", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
