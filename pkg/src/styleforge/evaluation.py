"""Quantitative metrics and the resolution-sweep latency benchmark.

Pixel-scale metrics (reconstruction error, TV score) are reported on the
0-255 scale. The Frechet distance runs over pluggable embeddings; the default
embedding is the global-average-pooled relu5_1 feature of the encoder, not
Inception-V3, so its values are not comparable to published FID numbers.
"""

import json
import statistics
import threading
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .architectures import ArchitectureSpec, Model, build, reconstruct, stylize
from .errors import DimensionMismatch, EmptyInput, ImageTooSmall

STANDARD_RESOLUTIONS = ((256, 128), (512, 256), (768, 384), (1024, 512))
FRECHET_NOTE = "Frechet distance over global-average-pooled relu5_1 encoder features (not Inception-V3 FID)"
TIMING_NOTE = "timings include style-image encoding; exclude file I/O and model load"

_BENCH_LOCK = threading.Lock()


def recon_error(images, model):
    """Mean over images of ||255*I - 255*reconstruct(I)||_F.

    ``model`` is a Model, or any callable image -> image (e.g. a stub).
    """
    if len(images) == 0:
        raise EmptyInput("recon_error needs at least one image")
    rebuild = (lambda x: reconstruct(model, x)) if isinstance(model, Model) else model
    total = 0.0
    for image in images:
        out = rebuild(image)
        total += float(torch.linalg.vector_norm(255.0 * (image.double() - out.double())))
    return total / len(images)


def tv_score(image):
    """Anisotropic total variation per pixel per channel, 0-255 scale.

    Accepts a (C, H, W) or (H, W) array/tensor with values in [0, 1].
    """
    x = np.asarray(image.detach().cpu() if isinstance(image, torch.Tensor) else image, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    c, h, w = x.shape
    if h < 2 or w < 2:
        raise ImageTooSmall(f"tv_score needs H, W >= 2, got {h}x{w}")
    x = 255.0 * x
    total = np.abs(np.diff(x, axis=2)).sum() + np.abs(np.diff(x, axis=1)).sum()
    return float(total / (h * w * c))


@dataclass
class EmbeddingSet:
    features: np.ndarray  # (N, D)
    source: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        if self.features.ndim != 2 or self.features.shape[0] < 2:
            raise ValueError("an embedding set needs shape (N, D) with N >= 2")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("embedding set contains non-finite values")


def _sym_sqrt(mat):
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(A, B):
    """||mu_A - mu_B||^2 + Tr(S_A + S_B - 2 (S_A S_B)^(1/2)).

    The trace of the cross term uses Tr((S_A S_B)^(1/2)) = Tr((R S_B R)^(1/2))
    with R = S_A^(1/2), so only symmetric eigendecompositions are needed.
    """
    A = A if isinstance(A, EmbeddingSet) else EmbeddingSet(A)
    B = B if isinstance(B, EmbeddingSet) else EmbeddingSet(B)
    if A.features.shape[1] != B.features.shape[1]:
        raise DimensionMismatch(f"embedding dims differ: {A.features.shape[1]} vs {B.features.shape[1]}")
    mu_a, mu_b = A.features.mean(axis=0), B.features.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(A.features, rowvar=False))
    cov_b = np.atleast_2d(np.cov(B.features, rowvar=False))
    root_a = _sym_sqrt(cov_a)
    cross = np.trace(_sym_sqrt(root_a @ cov_b @ root_a))
    d = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross)
    return max(d, 0.0)


def embed_images(images, encoder, source=""):
    """Default embedding: global-average-pooled relu5_1 features (512-D)."""
    rows = []
    with torch.no_grad():
        for image in images:
            stage5 = encoder(image.unsqueeze(0))[4]
            rows.append(stage5.mean(dim=(2, 3))[0].double().cpu().numpy())
    return EmbeddingSet(np.stack(rows), source=source)


@dataclass
class BenchRow:
    resolution: tuple  # (W, H)
    arch: str
    warmup_runs: int
    timed_runs: int
    median_s: float
    p90_s: float
    device: str
    skipped: str = None


@dataclass
class BenchReport:
    rows: list
    baseline: list = field(default_factory=list)
    notes: list = field(default_factory=lambda: [TIMING_NOTE])

    def speedups(self):
        """arch -> {"WxH": baseline_median / arch_median}."""
        base = {r.resolution: r.median_s for r in self.baseline if r.skipped is None}
        out = {}
        for r in self.rows:
            if r.skipped is None and r.resolution in base:
                out.setdefault(r.arch, {})[f"{r.resolution[0]}x{r.resolution[1]}"] = base[r.resolution] / r.median_s
        return out

    def to_json(self):
        return json.dumps({
            "rows": [asdict(r) for r in self.rows],
            "baseline": [asdict(r) for r in self.baseline],
            "speedups": self.speedups(),
            "notes": self.notes,
        }, indent=2)

    def to_table(self):
        archs = list(dict.fromkeys(r.arch for r in self.baseline + self.rows))
        cells = {(r.resolution, r.arch): r for r in self.baseline + self.rows}
        resolutions = list(dict.fromkeys(r.resolution for r in self.rows + self.baseline))
        head = ["Method"] + archs
        lines = []
        for res in resolutions:
            line = [f"{res[0]}x{res[1]}"]
            for arch in archs:
                r = cells.get((res, arch))
                line.append("-" if r is None else ("skipped" if r.skipped else f"{r.median_s:.2f}"))
            lines.append(line)
        widths = [max(len(row[i]) for row in [head] + lines) for i in range(len(head))]
        fmt = lambda row: "  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(row, widths)))
        out = [fmt(head), "-" * len(fmt(head))] + [fmt(line) for line in lines]
        out.append(f"(median seconds; {TIMING_NOTE})")
        return "\n".join(out)


def _time_calls(fn, warmup, runs):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), float(np.percentile(times, 90))


def _row(fn, resolution, arch, warmup, runs, device):
    try:
        median, p90 = _time_calls(fn, warmup, runs)
    except (MemoryError, RuntimeError) as exc:
        if isinstance(exc, RuntimeError) and "out of memory" not in str(exc).lower():
            raise
        return BenchRow(resolution, arch, warmup, 0, float("nan"), float("nan"), device, skipped=str(exc))
    return BenchRow(resolution, arch, warmup, runs, median, p90, device)


def multi_round(model, content, style, rounds=5):
    """Looped vanilla-AE stylization: feed each output back in as content."""
    x = content
    for _ in range(rounds):
        x = stylize(model, x, style, allow_untrained=True)
    return x


def bench(model_specs, resolutions, runs, encoder, seed=0, warmup=2, baseline_rounds=5,
          baseline_transfer="wct", device="cpu"):
    """Median/p90 stylize wall time per (spec, resolution) plus a multi-round baseline.

    ``model_specs`` holds ArchitectureSpecs or (name, spec) pairs. Models are
    built untrained from ``seed``; timing does not depend on weight values.
    """
    if runs < 5:
        raise ValueError("runs must be >= 5")
    named = [s if isinstance(s, tuple) else (s.label(), s) for s in model_specs]
    models = [(name, build(spec, encoder, seed=seed).to(device)) for name, spec in named]
    baseline_model = build(ArchitectureSpec.vanilla(transfer=baseline_transfer), encoder, seed=seed).to(device)
    baseline_name = f"vanilla({baseline_transfer})x{baseline_rounds}"

    gen = torch.Generator().manual_seed(seed)
    rows, baseline = [], []
    with _BENCH_LOCK, torch.no_grad():
        for (w, h) in resolutions:
            content = torch.rand(3, h, w, generator=gen).to(device)
            style = torch.rand(3, h, w, generator=gen).to(device)
            for name, model in models:
                fn = lambda m=model: stylize(m, content, style, allow_untrained=True)
                rows.append(_row(fn, (w, h), name, warmup, runs, device))
            fn = lambda: multi_round(baseline_model, content, style, baseline_rounds)
            baseline.append(_row(fn, (w, h), baseline_name, warmup, runs, device))
    return BenchReport(rows=rows, baseline=baseline)
