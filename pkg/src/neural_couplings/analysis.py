"""Metrics and reporting for couplings matrices.

TOD-R scores diagonal dominance: sqrt(N) * trace(|C|) over the L1 mass of
the off-diagonal part; it is undefined (None) when the off-diagonal mass is
exactly zero. SNR compares spectral estimates in dB, capped at +300. The
evaluation of a segment clips the couplings estimate C X at zero before
scoring, and for skip-filtering models multiplies it with the input, mirroring
the model's own masking.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import serial
from .linalg import Mat, ShapeError, hadamard, l2_norm_sq, matmul, relu, trace_abs
from .models import ModelParams, forward

SNR_CAP_DB = 300.0

log = logging.getLogger(__name__)


@dataclass
class MetricsRecord:
    arch: str
    method: str  # student | compositional | linear | identity
    segment: str
    tod_r: float | None
    snr_model_db: float
    snr_truth_db: float


@dataclass(frozen=True)
class HeatmapSpec:
    """Rendering choices: square zoom window, per-row max normalization, format."""

    zoom: tuple[int, int] | None = None
    row_normalize: bool = False
    fmt: str = "pgm"

    def __post_init__(self):
        if self.fmt not in ("pgm", "png"):
            raise ValueError(f"unknown heatmap format {self.fmt!r}")


def linear_composition(params: ModelParams) -> Mat:
    """Plain product of the weight matrices, encoder applied first; biases ignored."""
    c = np.eye(params.n)
    for w, _ in params.layers:
        c = matmul(w, c)
    return c


def tod_r(c: Mat) -> float | None:
    """sqrt(N) * trace(|C|) / l1(off-diagonal of C); None when that mass is zero."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ShapeError(f"tod_r: matrix must be square, got {c.shape}")
    off = np.abs(c)
    np.fill_diagonal(off, 0.0)
    off_mass = float(off.sum())
    if off_mass == 0.0:
        return None
    return math.sqrt(c.shape[0]) * trace_abs(c) / off_mass


def snr_db(reference: Mat, estimate: Mat) -> float:
    """10 log10 of reference energy over error energy, capped at +300 dB."""
    ref = np.asarray(reference, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    if ref.shape != est.shape:
        raise ShapeError(f"snr_db: shapes {ref.shape} and {est.shape} differ")
    ref_energy = l2_norm_sq(ref)
    if ref_energy == 0.0:
        raise ValueError("snr_db: all-zero reference")
    err_energy = l2_norm_sq(ref - est)
    if err_energy == 0.0:
        return SNR_CAP_DB
    return min(10.0 * math.log10(ref_energy / err_energy), SNR_CAP_DB)


def couplings_estimate(params: ModelParams, c: Mat, x_mix: Mat) -> Mat:
    """C X clipped at zero; skip-filtering models then mask the input with it."""
    est = relu(matmul(c, x_mix))
    return hadamard(est, x_mix) if params.arch.uses_mask else est


def evaluate_segment(
    params: ModelParams,
    c: Mat,
    x_mix: Mat,
    x_true: Mat,
    method: str = "student",
    segment: str = "",
) -> MetricsRecord:
    """Score one couplings matrix on one segment.

    The model reference is the model's own spectral output on x_mix. The
    identity baseline scores the raw mixture itself; every other method
    scores the clipped couplings estimate.
    """
    trace = forward(params, x_mix)
    est = np.asarray(x_mix, dtype=np.float64) if method == "identity" else couplings_estimate(params, c, x_mix)
    return MetricsRecord(
        arch=params.arch.tag,
        method=method,
        segment=segment,
        tod_r=tod_r(c),
        snr_model_db=snr_db(trace.output, est),
        snr_truth_db=snr_db(x_true, est),
    )


def _stats(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}  # population std


def aggregate(records: list[MetricsRecord]) -> dict:
    """Per (arch, method) cell: count, SNR mean/std, TOD-R mean/std over the
    defined values with the undefined count reported alongside."""
    cells: dict[str, dict[str, dict]] = {}
    for arch in sorted({r.arch for r in records}):
        for method in sorted({r.method for r in records if r.arch == arch}):
            group = [r for r in records if r.arch == arch and r.method == method]
            cell = {
                "n": len(group),
                "snr_model_db": _stats([r.snr_model_db for r in group]),
                "snr_truth_db": _stats([r.snr_truth_db for r in group]),
            }
            defined = [r.tod_r for r in group if r.tod_r is not None]
            tod = {"defined": len(defined), "excluded": len(group) - len(defined)}
            if defined:
                tod.update(_stats(defined))
            else:
                log.warning("TOD-R undefined for every record in cell (%s, %s)", arch, method)
            cell["tod_r"] = tod
            cells.setdefault(arch, {})[method] = cell
    return {"cells": cells, "record_count": len(records)}


def write_report_json(report: dict, path) -> None:
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    serial.write_file_atomic(path, text.encode("utf-8"))


def write_report_csv(records: list[MetricsRecord], path) -> None:
    """Flat rows, fixed column order, sorted by (arch, method, segment)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["arch", "method", "segment", "tod_r", "snr_model_db", "snr_truth_db"])
    for r in sorted(records, key=lambda r: (r.arch, r.method, r.segment)):
        tod = "" if r.tod_r is None else repr(r.tod_r)
        writer.writerow([r.arch, r.method, r.segment, tod, repr(r.snr_model_db), repr(r.snr_truth_db)])
    serial.write_file_atomic(path, buf.getvalue().encode("utf-8"))


def _quantize(img: Mat) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0.0, 255.0).astype(np.uint8)


def _pgm_bytes(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def _png_bytes(pixels: np.ndarray) -> bytes:
    """Minimal 8-bit grayscale PNG: IHDR + one zlib IDAT + IEND."""
    h, w = pixels.shape
    raw = b"".join(b"\x00" + pixels[r].tobytes() for r in range(h))

    def chunk(tag: bytes, data: bytes) -> bytes:
        return (
            struct.pack(">I", len(data))
            + tag
            + data
            + struct.pack(">I", zlib.crc32(tag + data))
        )

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw, 9))
        + chunk(b"IEND", b"")
    )


def export_heatmap(c: Mat, spec: HeatmapSpec, path) -> None:
    """Render |C| (optionally a square zoom window) as an 8-bit grayscale
    image, row 0 at the top. Without row normalization the image is scaled
    by its global maximum."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2:
        raise ShapeError(f"heatmap: expected a matrix, got shape {c.shape}")
    if spec.zoom is not None:
        lo, hi = spec.zoom
        if not (0 <= lo < hi <= min(c.shape)):
            raise ValueError(f"zoom [{lo}, {hi}) out of range for shape {c.shape}")
        img = np.abs(c[lo:hi, lo:hi])
    else:
        img = np.abs(c)
    if spec.row_normalize:
        row_max = img.max(axis=1, keepdims=True)
        img = np.divide(img, row_max, out=np.zeros_like(img), where=row_max > 0)
    else:
        global_max = img.max()
        if global_max > 0:
            img = img / global_max
    pixels = _quantize(img)
    data = _png_bytes(pixels) if spec.fmt == "png" else _pgm_bytes(pixels)
    serial.write_file_atomic(path, data)
