"""Command-line pipeline: synth/ingest a dataset, train models, extract
couplings matrices, score them, and render heatmaps.

Every command writes its outputs atomically and drops a JSON manifest next
to them recording the flag set, input and output content hashes, tool
version, and wall-clock time, so any stage can be audited or re-run. The
NCA_THREADS environment variable caps the worker count used for independent
units (training seeds, extraction segments). Errors print one JSON line to
stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import glob as globlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, serial
from .analysis import (
    HeatmapSpec,
    MetricsRecord,
    aggregate,
    evaluate_segment,
    export_heatmap,
    linear_composition,
    write_report_csv,
    write_report_json,
)
from .linalg import ShapeError
from .models import ARCH_TAGS, Arch, load_checkpoint, save_checkpoint
from .nca import NcaConfig, NcaError, load_couplings, run_nca, save_couplings
from .spectral import (
    Dataset,
    StftConfig,
    WavError,
    fit_scaler,
    load_dataset,
    load_wav_mono,
    normalized_window,
    save_dataset,
    stft_mag,
)
from .synth import make_synthetic_dataset
from .training import TrainConfig, TrainingError, train_multi_seed, write_history_csv


class CliError(Exception):
    pass


def worker_count(n_units: int) -> int:
    raw = os.environ.get("NCA_THREADS", "1")
    try:
        w = int(raw)
    except ValueError:
        raise CliError(f"NCA_THREADS={raw!r} is not an integer") from None
    return max(1, min(w, n_units))


def _hash_paths(paths) -> dict[str, str]:
    return {str(p): serial.sha256_file(p) for p in sorted(str(p) for p in paths)}


def write_manifest(
    manifest_path: Path, command: str, flags: dict, inputs, outputs, started: float
) -> None:
    manifest = {
        "tool": "nca",
        "version": __version__,
        "command": command,
        "flags": flags,
        "inputs": _hash_paths(inputs),
        "outputs": _hash_paths(outputs),
        "wall_clock_s": round(time.perf_counter() - started, 6),
    }
    serial.write_file_atomic(
        manifest_path, (json.dumps(manifest, sort_keys=True, indent=2) + "\n").encode()
    )


def list_segments(ds: Dataset, frames: int) -> list[tuple[int, int, int]]:
    """All non-overlapping full windows of the given frame count, per pair."""
    out = []
    for pair_idx, (mix, _) in enumerate(ds.pairs):
        for w in range(mix.frames // frames):
            out.append((pair_idx, w * frames, (w + 1) * frames))
    return out


def segment_id(pair_idx: int, start: int, stop: int) -> str:
    return f"{pair_idx}:{start}:{stop}"


def parse_segment_id(segment: str) -> tuple[int, int, int]:
    try:
        pair_idx, start, stop = (int(v) for v in segment.split(":"))
    except ValueError:
        raise CliError(f"malformed segment id {segment!r}, expected pair:start:stop") from None
    return pair_idx, start, stop


def cmd_synth(args) -> int:
    started = time.perf_counter()
    ds = make_synthetic_dataset(args.n, args.frames, args.pairs, args.seed)
    out = Path(args.out)
    save_dataset(ds, out)
    flags = {"n": args.n, "frames": args.frames, "pairs": args.pairs, "seed": args.seed,
             "out": str(out)}
    write_manifest(Path(str(out) + ".manifest.json"), "synth", flags, [], [out], started)
    return 0


def cmd_ingest(args) -> int:
    started = time.perf_counter()
    in_dir = Path(args.input)
    if not in_dir.is_dir():
        raise CliError(f"input directory {in_dir} does not exist")
    mixes = {p.name[: -len(".mix.wav")]: p for p in sorted(in_dir.glob("*.mix.wav"))}
    voxes = {p.name[: -len(".vox.wav")]: p for p in sorted(in_dir.glob("*.vox.wav"))}
    unpaired = sorted(set(mixes) ^ set(voxes))
    if unpaired:
        raise CliError(f"unpaired tracks (need both .mix.wav and .vox.wav): {', '.join(unpaired)}")
    if not mixes:
        raise CliError(f"no *.mix.wav/*.vox.wav pairs found in {in_dir}")

    cfg = StftConfig(
        sample_rate=args.sr,
        window_len=args.window,
        hop=args.hop,
        fft_size=args.fft,
        bins_kept=args.fft // 2 + 1,
    )
    pairs = []
    for track in sorted(mixes):
        mix_sig = load_wav_mono(mixes[track], expect_rate=args.sr)
        vox_sig = load_wav_mono(voxes[track], expect_rate=args.sr)
        usable = min(len(mix_sig), len(vox_sig))
        pairs.append(
            (
                stft_mag(mix_sig[:usable], cfg, track),
                stft_mag(vox_sig[:usable], cfg, track),
            )
        )
    scaler = fit_scaler([mix for mix, _ in pairs])
    out = Path(args.out)
    save_dataset(Dataset(cfg, pairs, scaler), out)
    flags = {"input": str(in_dir), "out": str(out), "sr": args.sr, "window": args.window,
             "hop": args.hop, "fft": args.fft}
    inputs = list(mixes.values()) + list(voxes.values())
    write_manifest(Path(str(out) + ".manifest.json"), "ingest", flags, inputs, [out], started)
    return 0


def _parse_seeds(raw: str) -> list[int]:
    try:
        return [int(s) for s in raw.split(",") if s != ""]
    except ValueError:
        raise CliError(f"bad --seeds value {raw!r}, expected comma-separated integers") from None


def cmd_train(args) -> int:
    started = time.perf_counter()
    ds = load_dataset(args.dataset)
    arch = Arch.mss_dae(args.hidden_layers) if args.model == "mss-dae" else Arch(args.model)
    seeds = _parse_seeds(args.seeds)
    if not seeds:
        raise CliError("no seeds given")
    cfg = TrainConfig(
        batch_size=args.batch_size,
        initial_lr=args.lr,
        max_epochs=args.max_epochs,
    )
    results = train_multi_seed(arch, ds, cfg, seeds, workers=worker_count(len(seeds)))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for seed, result in zip(seeds, results):
        ck_path = out_dir / f"{args.model}-seed{seed}.ncm"
        save_checkpoint(ck_path, result.params, seed, result.epochs)
        csv_path = out_dir / f"{args.model}-seed{seed}-history.csv"
        write_history_csv(result.history, csv_path)
        outputs += [ck_path, csv_path]
    flags = {"dataset": args.dataset, "model": args.model, "hidden_layers": args.hidden_layers,
             "seeds": seeds, "batch_size": args.batch_size, "lr": args.lr,
             "max_epochs": args.max_epochs, "out": str(out_dir)}
    write_manifest(out_dir / f"train-{args.model}.manifest.json", "train", flags,
                   [args.dataset], outputs, started)
    return 0


def _couplings_loss_csv(path: Path, losses: list[float]) -> None:
    lines = ["iteration,l1_loss"] + [f"{i},{v!r}" for i, v in enumerate(losses)]
    serial.write_file_atomic(path, ("\n".join(lines) + "\n").encode())


def cmd_couplings(args) -> int:
    started = time.perf_counter()
    ck = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    if ck.params.n != ds.config.bins_kept:
        raise CliError(
            f"checkpoint is {ck.params.n}-dimensional but dataset keeps {ds.config.bins_kept} bins"
        )
    segments = list_segments(ds, args.frames)
    if not segments:
        raise CliError(f"dataset has no full {args.frames}-frame window")
    if args.segment != "all":
        try:
            idx = int(args.segment)
        except ValueError:
            raise CliError(f"--segment must be an index or 'all', got {args.segment!r}") from None
        if not 0 <= idx < len(segments):
            raise CliError(f"segment index {idx} out of range ({len(segments)} windows)")
        segments = [segments[idx]]

    out = Path(args.out)
    single_file = out.suffix == ".ncc"
    if single_file and len(segments) > 1:
        raise CliError(f"{len(segments)} segments selected; --out must be a directory")
    if not single_file:
        out.mkdir(parents=True, exist_ok=True)
    ck_hash = serial.sha256_file(args.checkpoint)
    ck_stem = Path(args.checkpoint).stem

    def extract(seg: tuple[int, int, int]) -> list[Path]:
        pair_idx, start, stop = seg
        x_mix, _ = normalized_window(ds, pair_idx, start, stop)
        cfg = NcaConfig(
            strategy=args.strategy,
            iterations=args.iters,
            lr=args.lr,
            batch_frames=stop - start,
            seed=args.seed,
        )
        state = run_nca(ck.params, x_mix, cfg)
        seg_id = segment_id(pair_idx, start, stop)
        meta = {
            "strategy": args.strategy,
            "arch": ck.params.arch.tag,
            "checkpoint": ck_hash,
            "segment": seg_id,
            "final_loss": state.losses[-1],
            "iterations": args.iters,
            "lr": args.lr,
            "seed": args.seed,
        }
        if single_file:
            c_path = out
        else:
            c_path = out / f"{ck_stem}-{args.strategy}-{pair_idx}-{start}.ncc"
        save_couplings(c_path, state.c, meta)
        loss_path = Path(str(c_path)[: -len(".ncc")] + "-loss.csv")
        _couplings_loss_csv(loss_path, state.losses)
        return [c_path, loss_path]

    workers = worker_count(len(segments))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as ex:
            produced = list(ex.map(extract, segments))
    else:
        produced = [extract(seg) for seg in segments]

    outputs = [p for group in produced for p in group]
    flags = {"checkpoint": args.checkpoint, "dataset": args.dataset, "strategy": args.strategy,
             "segment": args.segment, "iters": args.iters, "lr": args.lr,
             "frames": args.frames, "seed": args.seed, "out": str(out)}
    manifest_path = (
        Path(str(out) + ".manifest.json")
        if single_file
        else out / f"couplings-{ck_stem}-{args.strategy}.manifest.json"
    )
    write_manifest(manifest_path, "couplings", flags,
                   [args.checkpoint, args.dataset], outputs, started)
    return 0


def cmd_analyze(args) -> int:
    started = time.perf_counter()
    couplings_paths = sorted(globlib.glob(args.couplings))
    if not couplings_paths:
        raise CliError(f"no couplings files match {args.couplings!r}")
    ck_dir = Path(args.checkpoints)
    by_hash = {serial.sha256_file(p): p for p in sorted(ck_dir.glob("*.ncm"))}
    if not by_hash:
        raise CliError(f"no checkpoints (*.ncm) found in {ck_dir}")
    ds = load_dataset(args.dataset)

    records: list[MetricsRecord] = []
    baseline_done: set[tuple[str, str]] = set()
    for c_path in couplings_paths:
        c, meta = load_couplings(c_path)
        ck_hash = meta.get("checkpoint", "")
        if ck_hash not in by_hash:
            raise CliError(f"{c_path}: no checkpoint in {ck_dir} matches hash {ck_hash[:12]}...")
        ck = load_checkpoint(by_hash[ck_hash])
        seg = meta.get("segment", "")
        pair_idx, start, stop = parse_segment_id(seg)
        x_mix, x_true = normalized_window(ds, pair_idx, start, stop)
        records.append(
            evaluate_segment(ck.params, c, x_mix, x_true, meta.get("strategy", "student"), seg)
        )
        if (ck_hash, seg) not in baseline_done:
            baseline_done.add((ck_hash, seg))
            lin = linear_composition(ck.params)
            records.append(evaluate_segment(ck.params, lin, x_mix, x_true, "linear", seg))
            eye = np.eye(ck.params.n)
            records.append(evaluate_segment(ck.params, eye, x_mix, x_true, "identity", seg))

    out = Path(args.out)
    report = aggregate(records)
    write_report_json(report, out)
    csv_path = out.with_suffix(".csv")
    write_report_csv(records, csv_path)
    flags = {"couplings": args.couplings, "checkpoints": str(ck_dir),
             "dataset": args.dataset, "out": str(out)}
    inputs = list(couplings_paths) + list(by_hash.values()) + [args.dataset]
    write_manifest(Path(str(out) + ".manifest.json"), "analyze", flags, inputs,
                   [out, csv_path], started)
    return 0


def cmd_heatmap(args) -> int:
    started = time.perf_counter()
    c, _meta = load_couplings(args.couplings)
    zoom = None
    if args.zoom:
        try:
            lo, hi = (int(v) for v in args.zoom.split(":"))
        except ValueError:
            raise CliError(f"bad --zoom value {args.zoom!r}, expected lo:hi") from None
        zoom = (lo, hi)
    out = Path(args.out)
    fmt = "png" if out.suffix == ".png" else "pgm"
    export_heatmap(c, HeatmapSpec(zoom=zoom, row_normalize=args.row_normalize, fmt=fmt), out)
    flags = {"couplings": args.couplings, "zoom": args.zoom,
             "row_normalize": args.row_normalize, "out": str(out)}
    write_manifest(Path(str(out) + ".manifest.json"), "heatmap", flags,
                   [args.couplings], [out], started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nca",
        description="Train shallow spectrogram separation models and extract "
        "linear couplings matrices from them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic quasi-harmonic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=64, help="frequency bins")
    p.add_argument("--frames", type=int, default=720, help="frames per pair")
    p.add_argument("--pairs", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="build a dataset from <track>.mix.wav/<track>.vox.wav pairs")
    p.add_argument("--input", required=True, help="directory of WAV pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--sr", type=int, default=44100)
    p.add_argument("--window", type=int, default=2048)
    p.add_argument("--hop", type=int, default=384)
    p.add_argument("--fft", type=int, default=4096)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one architecture over one or more seeds")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True, choices=ARCH_TAGS)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--seeds", default="0", help="comma-separated seed list")
    p.add_argument("--hidden-layers", type=int, default=2, help="mss-dae only")
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--max-epochs", type=int, default=200)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("couplings", help="extract couplings matrices from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--strategy", required=True, choices=("student", "compositional"))
    p.add_argument("--out", required=True, help="output .ncc file or directory")
    p.add_argument("--segment", default="all", help="window index, or 'all'")
    p.add_argument("--iters", type=int, default=600)
    p.add_argument("--lr", type=float, default=4e-4)
    p.add_argument("--frames", type=int, default=350, help="frames per window")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_couplings)

    p = sub.add_parser("analyze", help="score couplings files and baselines into a report")
    p.add_argument("--couplings", required=True, help="glob of .ncc files")
    p.add_argument("--checkpoints", required=True, help="directory of .ncm files")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="report JSON path (CSV written alongside)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("heatmap", help="render |C| as a grayscale image")
    p.add_argument("--couplings", required=True)
    p.add_argument("--out", required=True, help=".pgm or .png path")
    p.add_argument("--zoom", default=None, help="lo:hi square window")
    p.add_argument("--row-normalize", action="store_true")
    p.set_defaults(func=cmd_heatmap)
    return parser


_KNOWN_ERRORS = (
    CliError,
    NcaError,
    TrainingError,
    WavError,
    ShapeError,
    serial.FormatError,
    ValueError,
    OSError,
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _KNOWN_ERRORS as e:
        line = json.dumps(
            {"command": args.command, "error": type(e).__name__, "message": str(e)}
        )
        print(line, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
