import argparse
import glob
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from rich.console import Console
from rich.table import Table

from . import __version__
from .core.checkpoint import load_model, save_model
from .core.codec import EncodedFrame, decode_frame, decode_sequence, encode_frame
from .core.config import CodecConfig, TrainConfig
from .core.errors import ConfigError, ConfigMismatchError, HintError, VerificationError
from .core.geom import SortedVoxelSet
from .core.model import HintModel
from .core.ply_io import discover_sequences, list_frames, quantize, read_ply, write_ply
from .core.pyramid import FrameState
from .core.report import BenchReport, FrameRow
from .core.settings import configure_logging, default_checkpoint_path, default_seed
from .core.synthetic import SYNTHETIC_KINDS, is_synthetic, make_synthetic_sequence, parse_synthetic
from .core.train import train

SYNTHETIC_DEPTH = 7


def _add_codec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--depth", type=int, default=None, help="Octree depth D (bits per axis); default 10, or 7 for synthetic data")
    p.add_argument("--vd", type=int, choices=[7, 27, 125], default=None, help="Coarse (parent-level) window size")
    p.add_argument("--vfine", type=int, choices=[7, 27, 125], default=None, help="Fine (child-level) window size")
    p.add_argument("--no-coarse", action="store_true", help="Disable the coarse temporal path")
    p.add_argument("--no-fine", action="store_true", help="Disable the fine temporal path")
    p.add_argument("--no-sibling", action="store_true", help="Disable even/odd sibling context")
    p.add_argument("--spatial-only", action="store_true", help="Disable all temporal and sibling paths (baseline)")
    p.add_argument("--seed", type=int, default=default_seed())


def _add_synthetic_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--frames", type=int, default=4, help="Frames per synthetic sequence")
    p.add_argument("--sequences", type=int, default=1, help="Number of synthetic sequences")
    p.add_argument("--density", type=float, default=1.0, help="Synthetic surface samples per unit area")


def _ablation(args) -> dict:
    off = args.spatial_only
    return {
        "coarse": not (off or args.no_coarse),
        "fine": not (off or args.no_fine),
        "sibling": not (off or args.no_sibling),
    }


def _coding_config(model: HintModel, args, depth: int) -> CodecConfig:
    """Checkpoint architecture plus the run's depth and ablation switches."""
    wanted = {"vd": getattr(args, "vd", None), "vfine": getattr(args, "vfine", None)}
    wrong = [k for k, v in wanted.items() if v is not None and v != getattr(model.config, k)]
    if wrong:
        detail = ", ".join(f"{k}: flag={wanted[k]} checkpoint={getattr(model.config, k)}" for k in wrong)
        raise ConfigMismatchError(f"flags do not match the checkpoint ({detail})", wrong)
    flags = _ablation(args)
    # A path the checkpoint was trained without cannot be switched back on.
    flags = {k: v and getattr(model.config, k) for k, v in flags.items()}
    return CodecConfig.build(**{**model.config.model_dump(), **flags, "depth": depth})


def _expand_inputs(source: str, pattern: str, order_file: str | None = None) -> list[list[Path]]:
    if any(ch in source for ch in "*?["):
        paths = sorted((Path(p) for p in glob.glob(source)), key=lambda p: p.name)
        if not paths:
            raise HintError(f"no inputs match {source}")
        return [paths]
    path = Path(source)
    if path.is_file():
        return [[path]]
    if pattern == "*.ply":
        return discover_sequences(path, order_file)
    frames = sorted(path.glob(pattern), key=lambda p: p.name)
    if frames:
        return [frames]
    subdirs = [sorted(d.glob(pattern), key=lambda p: p.name) for d in sorted(p for p in path.iterdir() if p.is_dir())] if path.is_dir() else []
    subdirs = [s for s in subdirs if s]
    if not subdirs:
        raise HintError(f"no {pattern} inputs under {source}")
    return subdirs


def _sequence_name(frames: list[Path], count: int) -> str:
    return frames[0].parent.name if count > 1 else ""


def _load_sequence(paths: list[Path], depth: int) -> tuple[list[SortedVoxelSet], list[int]]:
    voxels, points = [], []
    for path in paths:
        q = quantize(read_ply(path), depth)
        voxels.append(q.voxels)
        points.append(q.points)
    return voxels, points


def _dataset(args, depth: int) -> list[tuple[str, list[SortedVoxelSet], list[int]]]:
    """(name, frames, original point counts) per sequence."""
    if is_synthetic(args.dataset):
        kind = parse_synthetic(args.dataset)
        out = []
        for s in range(args.sequences):
            frames = make_synthetic_sequence(kind, args.frames, args.density, args.seed + s, depth)
            out.append((f"{kind}{s:02d}" if args.sequences > 1 else kind, frames, [len(f) for f in frames]))
        return out
    sequences = discover_sequences(args.dataset, getattr(args, "order_file", None))
    return [(_sequence_name(paths, len(sequences)), *_load_sequence(paths, depth)) for paths in sequences]


def _run_jobs(fn, jobs: list[tuple], n_jobs: int) -> list:
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _encode_frames(frames: list[SortedVoxelSet], model: HintModel, config: CodecConfig, points: list[int]) -> list[tuple[EncodedFrame, float]]:
    """Encode frame by frame, carrying the reconstruction; (frame, ms) per frame."""
    prev = FrameState.empty()
    out = []
    for i, leaves in enumerate(frames):
        t0 = time.perf_counter()
        try:
            enc = encode_frame(leaves, prev, model, config, frame_index=i, points=points[i])
        except HintError as e:
            e.at_frame(i)
            raise
        out.append((enc, 1000.0 * (time.perf_counter() - t0)))
        prev = enc.state
    return out


def _encode_job(name: str, paths: list[Path], model: HintModel, config: CodecConfig, out_dir: Path) -> list[FrameRow]:
    frames, points = _load_sequence(paths, config.depth)
    target = out_dir / name if name else out_dir
    target.mkdir(parents=True, exist_ok=True)
    rows = []
    for path, (enc, ms) in zip(paths, _encode_frames(frames, model, config, points)):
        (target / f"{path.stem}.hint").write_bytes(enc.data)
        rows.append(FrameRow.from_stats(enc.stats, sequence=name, encode_ms=ms))
    return rows


def _bench_job(name: str, frames: list[SortedVoxelSet], points: list[int], model: HintModel, config: CodecConfig) -> list[FrameRow]:
    rows = []
    prev = FrameState.empty()
    for i, (frame, (enc, enc_ms)) in enumerate(zip(frames, _encode_frames(frames, model, config, points))):
        t0 = time.perf_counter()
        try:
            dec = decode_frame(enc.data, prev, model, config)
        except HintError as e:
            e.at_frame(i)
            raise
        dec_ms = 1000.0 * (time.perf_counter() - t0)
        prev = dec.state
        rows.append(FrameRow.from_stats(enc.stats, sequence=name, encode_ms=enc_ms, decode_ms=dec_ms, lossless=dec.leaves.same_voxels(frame)))
    return rows


def _bench_rows(dataset, model: HintModel, config: CodecConfig, n_jobs: int) -> list[FrameRow]:
    jobs = [(name, frames, points, model, config) for name, frames, points in dataset]
    return [row for rows in _run_jobs(_bench_job, jobs, n_jobs) for row in rows]


def _print_bench(console: Console, report: BenchReport) -> None:
    table = Table(title=f"hintpc bench ({report.label})")
    for col in ("sequence", "frames", "mean bpp", "payload bpp", "enc ms", "dec ms", "lossless"):
        table.add_column(col, justify="left" if col == "sequence" else "right")
    groups: dict[str, list[FrameRow]] = {}
    for r in report.rows:
        groups.setdefault(r.sequence, []).append(r)
    for name, rows in groups.items():
        sub = BenchReport(rows=rows)
        table.add_row(
            name or "-",
            str(len(rows)),
            f"{sub.mean_bpp:.4f}",
            f"{sub.mean_bpp_payload:.4f}",
            f"{sub.mean_encode_ms:.1f}",
            f"{sub.mean_decode_ms:.1f}",
            "yes" if sub.all_lossless else "NO",
        )
    console.print(table)
    console.print(f"model: {report.num_parameters} parameters, {report.model_size_mb:.3f} MB (float32)")


def cmd_encode(args) -> None:
    model = load_model(args.checkpoint)
    depth = args.depth or model.config.depth
    config = _coding_config(model, args, depth)
    sequences = _expand_inputs(args.input, "*.ply", args.order_file)
    out_dir = Path(args.out)
    jobs = [(_sequence_name(paths, len(sequences)), paths, model, config, out_dir) for paths in sequences]
    rows = [row for rows in _run_jobs(_encode_job, jobs, args.jobs) for row in rows]
    report = BenchReport(rows=rows, num_parameters=model.num_parameters, model_size_mb=model.model_size_mb)
    print(f"[OK] wrote {len(rows)} frame(s) to {out_dir} (mean {report.mean_bpp:.4f} bpp)")
    if args.csv:
        print(f"[OK] wrote {report.write_csv(args.csv)}")


def cmd_decode(args) -> None:
    model = load_model(args.checkpoint)
    out_dir = Path(args.out)
    sequences = _expand_inputs(args.input, "*.hint")
    total = 0
    for paths in sequences:
        name = _sequence_name(paths, len(sequences))
        leaves = decode_sequence([p.read_bytes() for p in paths], model)
        target = out_dir / name if name else out_dir
        for path, frame in zip(paths, leaves):
            write_ply(target / f"{path.stem}.ply", frame.coords)
        total += len(leaves)
    print(f"[OK] wrote {total} frame(s) to {out_dir}")


def cmd_train(args) -> None:
    depth = args.depth or (SYNTHETIC_DEPTH if is_synthetic(args.dataset) else 10)
    if args.resume and Path(args.out).is_file():
        model = load_model(args.out)
        config = _coding_config(model, args, depth)
        model = model.variant(config)
        print(f"[OK] resumed {args.out} at step {model.store.step}")
    else:
        config = CodecConfig.build(
            depth=depth,
            vd=args.vd,
            vfine=args.vfine,
            channels=args.channels,
            hidden=args.hidden,
            share_embedding=args.share_embedding,
            seed=args.seed,
            **_ablation(args),
        )
        model = HintModel(config)
    dataset = [frames for _, frames, _ in _dataset(args, depth)]
    try:
        train_cfg = TrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed, checkpoint=args.out, log_every=args.log_every)
    except ValueError as e:
        raise ConfigError(f"invalid training options: {e}") from e
    result = train(dataset, model, train_cfg)
    if result.checkpoint is None:
        save_model(args.out, model)
    print(f"[OK] trained {result.steps} steps, final epoch mean {result.final_loss:.4f} bits/code")
    print(f"[OK] wrote {args.out}")


def cmd_bench(args) -> None:
    console = Console()
    depth = args.depth or (SYNTHETIC_DEPTH if is_synthetic(args.dataset) else 10)
    ckpt = Path(args.checkpoint) if args.checkpoint else None
    if ckpt is not None and ckpt.is_file():
        model = load_model(ckpt)
    elif is_synthetic(args.dataset):
        print(f"[WARN] no checkpoint at {ckpt}; benchmarking an untrained model" if ckpt else "[WARN] no checkpoint; benchmarking an untrained model")
        model = HintModel(CodecConfig.build(depth=depth, vd=args.vd, vfine=args.vfine, seed=args.seed))
    else:
        raise HintError(f"checkpoint not found: {ckpt}")
    config = _coding_config(model, args, depth)
    dataset = _dataset(args, depth)

    report = BenchReport(
        label="spatial-only" if not (config.coarse or config.fine or config.sibling) else "hint",
        rows=_bench_rows(dataset, model, config, args.jobs),
        num_parameters=model.num_parameters,
        model_size_mb=model.model_size_mb,
    )
    if args.baseline_checkpoint:
        base_model = load_model(args.baseline_checkpoint)
        base_config = base_model.config.model_copy(update={"depth": depth}).spatial_only()
        if base_model.config.coarse or base_model.config.fine or base_model.config.sibling:
            print(f"[WARN] {args.baseline_checkpoint} was trained with temporal or sibling paths; running it with them disabled")
            report.baseline_label = "paths disabled"
        else:
            report.baseline_label = "spatial-only"
        report.baseline_bpp = BenchReport(rows=_bench_rows(dataset, base_model, base_config, args.jobs)).mean_bpp
    elif args.compare_spatial_only:
        # Same parameters with the paths switched off, not a separately trained baseline.
        report.baseline_label = "paths disabled"
        report.baseline_bpp = BenchReport(rows=_bench_rows(dataset, model, config.spatial_only(), args.jobs)).mean_bpp

    _print_bench(console, report)
    if report.reduction_vs_baseline is not None:
        print(f"[OK] {report.baseline_label} {report.baseline_bpp:.4f} bpp -> {report.mean_bpp:.4f} bpp ({report.reduction_vs_baseline:+.2f}% saved)")
    if args.csv:
        print(f"[OK] wrote {report.write_csv(args.csv)}")
    if not report.all_lossless:
        bad = ", ".join(f"{r.sequence or '-'}#{r.frame}" for r in report.failed_frames)
        raise VerificationError(f"round trip failed for frame(s) {bad}")
    print(f"[OK] {len(report.rows)} frame(s) round-tripped losslessly, mean {report.mean_bpp:.4f} bpp")


def cmd_verify(args) -> None:
    orig = list_frames(args.orig, args.order_file)
    decoded = list_frames(args.decoded, args.order_file)
    if not orig:
        raise HintError(f"no .ply frames under {args.orig}")
    if len(orig) != len(decoded):
        raise VerificationError(f"frame count differs: {len(orig)} original vs {len(decoded)} decoded")
    failed = []
    for a, b in zip(orig, decoded):
        va = quantize(read_ply(a), args.depth).voxels
        vb = quantize(read_ply(b), args.depth).voxels
        if va.same_voxels(vb):
            print(f"[OK] {a.name}")
        else:
            print(f"[ERR] {a.name}: {len(va)} voxels vs {len(vb)} decoded")
            failed.append(a.name)
    if failed:
        raise VerificationError(f"{len(failed)} frame(s) differ: {', '.join(failed)}")
    print(f"[OK] {len(orig)} frame(s) identical")


def main(argv=None):
    p = argparse.ArgumentParser(prog="hintpc")
    p.add_argument("--version", action="version", version=f"hintpc {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    e = sub.add_parser("encode", help="Encode PLY frames into .hint bitstreams")
    e.add_argument("input", help="PLY file, frame directory, directory of sequences, or glob")
    e.add_argument("--out", default="encoded", help="Output directory")
    e.add_argument("--checkpoint", default=default_checkpoint_path(), help="Model checkpoint (or set HINTPC_CHECKPOINT)")
    e.add_argument("--csv", default="", help="Write per-frame stats CSV")
    e.add_argument("--jobs", type=int, default=1, help="Encode independent sequences in parallel")
    e.add_argument("--order-file", default=None, help="Text file listing frame names in coding order")
    _add_codec_flags(e)

    d = sub.add_parser("decode", help="Decode .hint bitstreams into PLY frames")
    d.add_argument("input", help=".hint file, directory, or glob")
    d.add_argument("--out", default="decoded", help="Output directory")
    d.add_argument("--checkpoint", default=default_checkpoint_path(), help="Model checkpoint (or set HINTPC_CHECKPOINT)")

    t = sub.add_parser("train", help="Train the entropy model on frame sequences")
    t.add_argument("dataset", help=f"Frame directory, directory of sequences, or synthetic:<{'|'.join(SYNTHETIC_KINDS)}>")
    t.add_argument("--epochs", type=int, default=1)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--out", default=default_checkpoint_path(), help="Checkpoint path (saved after every epoch)")
    t.add_argument("--resume", action="store_true", help="Continue from --out when it exists")
    t.add_argument("--channels", type=int, default=32)
    t.add_argument("--hidden", type=int, default=64)
    t.add_argument("--share-embedding", action="store_true", help="Share the code embedding of the fine and sibling paths")
    t.add_argument("--log-every", type=int, default=50)
    t.add_argument("--order-file", default=None)
    _add_codec_flags(t)
    _add_synthetic_flags(t)

    b = sub.add_parser("bench", help="Encode + decode a dataset and report BPP and timings")
    b.add_argument("dataset", help=f"Frame directory, directory of sequences, or synthetic:<{'|'.join(SYNTHETIC_KINDS)}>")
    b.add_argument("--checkpoint", default=None, help="Model checkpoint (optional for synthetic data)")
    b.add_argument("--csv", default="", help="Write per-frame stats CSV")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--order-file", default=None)
    b.add_argument("--compare-spatial-only", action="store_true", help="Also run the checkpoint with temporal and sibling paths disabled and report the BPP reduction")
    b.add_argument("--baseline-checkpoint", default=None, help="Separately trained spatial-only checkpoint to compare against")
    _add_codec_flags(b)
    _add_synthetic_flags(b)

    v = sub.add_parser("verify", help="Compare original and decoded frames voxel by voxel")
    v.add_argument("orig")
    v.add_argument("decoded")
    v.add_argument("--depth", type=int, default=10, help="Quantization bits used for the originals")
    v.add_argument("--order-file", default=None)

    args = p.parse_args(argv)
    configure_logging()

    commands = {
        "encode": cmd_encode,
        "decode": cmd_decode,
        "train": cmd_train,
        "bench": cmd_bench,
        "verify": cmd_verify,
    }
    try:
        commands[args.cmd](args)
    except HintError as err:
        where = f" (frame {err.frame_index})" if err.frame_index is not None else ""
        print(f"[ERR] {err}{where}", file=sys.stderr)
        raise SystemExit(err.exit_code)


if __name__ == "__main__":
    main()
