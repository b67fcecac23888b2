"""Synthetic forgery corpus.

Real images are 1/f^2-power Gaussian random fields plus a smooth colour
gradient.  Fakes are produced by a 2x area downsample followed by a
nearest-neighbour upsample, blended 50/50 with the original inside a
centered disc, which leaves replicated high-frequency structure.
"""

from __future__ import annotations

import csv
import enum
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .spectral import Transform, apply_transform, band_means, log_scale

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (5 / 7, 1 / 7, 1 / 7)
FAKE_DISC_RADIUS = 0.375  # fraction of the image side
GAP_P_VALUE = 0.01


class Label(enum.IntEnum):
    REAL = 0
    FAKE = 1


class CorpusError(Exception):
    """Raised for malformed corpus files or layouts."""


@dataclass
class Sample:
    image: np.ndarray  # [3, N, N] in [0, 1]
    label: Label
    group_id: int
    seed: int


@dataclass
class Corpus:
    train: list[Sample] = field(default_factory=list)
    val: list[Sample] = field(default_factory=list)
    test: list[Sample] = field(default_factory=list)

    def split(self, name: str) -> list[Sample]:
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    def balance(self) -> dict[str, tuple[int, int]]:
        """(real, fake) counts per split."""
        out = {}
        for name in SPLITS:
            labels = [s.label for s in self.split(name)]
            out[name] = (labels.count(Label.REAL), labels.count(Label.FAKE))
        return out

    @property
    def image_size(self) -> int:
        for name in SPLITS:
            if self.split(name):
                return self.split(name)[0].image.shape[-1]
        raise CorpusError("corpus is empty")


# ---------------------------------------------------------------------------
# generators


def gen_real(seed: int, n: int = 64) -> Sample:
    """Natural-image surrogate with power spectrum falling as 1/f^2."""
    if n < 16:
        raise ValueError(f"image size must be at least 16, got {n}")
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(n)[:, None]
    fx = np.fft.fftfreq(n)[None, :]
    f = np.hypot(fy, fx)
    f[0, 0] = 1.0 / n
    amplitude = 1.0 / f  # power ~ 1/f^2
    amplitude[0, 0] = 0.0

    def field_(g):
        noise = g.standard_normal((n, n)) + 1j * g.standard_normal((n, n))
        return np.real(np.fft.ifft2(noise * amplitude))

    base = field_(rng)
    base /= base.std()
    img = np.empty((3, n, n))
    tint = rng.uniform(0.6, 1.4, size=3)
    yy, xx = np.mgrid[0:n, 0:n] / (n - 1)
    for c in range(3):
        own = field_(rng)
        own /= own.std()
        gx, gy = rng.uniform(-1.5, 1.5, size=2)
        img[c] = tint[c] * (0.8 * base + 0.2 * own) + gx * xx + gy * yy
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    return Sample(np.clip(img, 0.0, 1.0), Label.REAL, group_id=-1, seed=seed)


def upsample_artifact(image: np.ndarray) -> np.ndarray:
    """2x area-average downsample then 2x nearest-neighbour upsample."""
    c, n, _ = image.shape
    small = image.reshape(c, n // 2, 2, n // 2, 2).mean(axis=(2, 4))
    return small.repeat(2, axis=1).repeat(2, axis=2)


def forgery_mask(n: int) -> np.ndarray:
    centre = (n - 1) / 2
    yy, xx = np.mgrid[0:n, 0:n]
    return np.hypot(yy - centre, xx - centre) <= FAKE_DISC_RADIUS * n


def gen_fake(real: Sample) -> Sample:
    """Fake counterpart of ``real``: upsampling artifacts blended into a centered disc."""
    img = real.image
    mask = forgery_mask(img.shape[-1])
    blended = np.where(mask[None], 0.5 * img + 0.5 * upsample_artifact(img), img)
    return Sample(np.clip(blended, 0.0, 1.0), Label.FAKE, real.group_id, real.seed)


def sample_seed(corpus_seed: int, index: int) -> int:
    """Per-pair seed derived from (corpus seed, index), independent of execution order."""
    return int(np.random.SeedSequence([corpus_seed, index]).generate_state(1, dtype=np.uint32)[0])


def gen_pair(corpus_seed: int, index: int, n: int) -> tuple[Sample, Sample]:
    attempt = 0
    while True:
        seed = sample_seed(corpus_seed, index) if attempt == 0 else sample_seed(corpus_seed + attempt * 7919, index)
        real = gen_real(seed, n)
        real.group_id = index
        fake = gen_fake(real)
        # constant images carry no artifact; draw again
        if np.any(fake.image != real.image):
            return real, fake
        attempt += 1


def _gen_pair_args(args):
    return gen_pair(*args)


def split_counts(n_groups: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three non-negative values summing to 1, got {fractions}")
    n_train = int(round(n_groups * fractions[0]))
    n_val = int(round(n_groups * fractions[1]))
    n_val = min(n_val, n_groups - n_train)
    return n_train, n_val, n_groups - n_train - n_val


def build_corpus(
    n_per_class: int,
    n: int = 64,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 7,
    workers: int = 1,
    check_gap: bool = True,
) -> Corpus:
    """Deterministic corpus of ``n_per_class`` real/fake pairs split by group.

    Pairs share a group id and always land in the same split.  With
    ``check_gap`` the high-frequency spectral gap between fakes and reals is
    verified before returning.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be positive")
    counts = split_counts(n_per_class, fractions)
    jobs = [(seed, i, n) for i in range(n_per_class)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(_gen_pair_args, jobs, chunksize=32))
    else:
        pairs = [gen_pair(*job) for job in jobs]

    order = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED])).permutation(n_per_class)
    corpus = Corpus()
    start = 0
    for name, count in zip(SPLITS, counts):
        groups = sorted(int(g) for g in order[start : start + count])
        start += count
        split = corpus.split(name)
        for g in groups:
            split.extend(pairs[g])
    if check_gap and n_per_class >= 10:
        p = spectral_gap_pvalue([s.image for s in _flat(corpus) if s.label == Label.REAL],
                                [s.image for s in _flat(corpus) if s.label == Label.FAKE])
        if not p < GAP_P_VALUE:
            raise CorpusError(f"fake/real high-frequency gap not significant (p={p:.3g})")
        logger.info("spectral gap p-value %.3g", p)
    return corpus


def _flat(corpus: Corpus):
    for name in SPLITS:
        yield from corpus.split(name)


def high_band_energy(image: np.ndarray, transform: Transform | str = Transform.DCT) -> float:
    """Mean log-scaled coefficient in the highest of four radial bands, over channels."""
    spec = log_scale(apply_transform(image, transform))
    return float(band_means(spec, transform)[-1])


def spectral_gap_pvalue(reals, fakes, transform: Transform | str = Transform.DCT) -> float:
    """Welch t-test p-value between per-image highest-band energies."""
    a = [high_band_energy(im, transform) for im in reals]
    b = [high_band_energy(im, transform) for im in fakes]
    return float(stats.ttest_ind(a, b, equal_var=False).pvalue)


# ---------------------------------------------------------------------------
# PPM I/O


def write_ppm(path: Path | str, image: np.ndarray) -> None:
    """Write a [3, N, N] image in [0, 1] as binary P6 with maxval 255."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected [3, H, W] image, got {arr.shape}")
    pixels = to_uint8(arr).transpose(1, 2, 0)
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def write_ppm_rgb(path: Path | str, pixels: np.ndarray) -> None:
    """Write an [H, W, 3] uint8 array as P6."""
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    out, pos = [], 0
    while len(out) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated header")
        out.append(data[start:pos])
    return out, pos + 1  # single whitespace byte after maxval


def read_ppm(path: Path | str) -> np.ndarray:
    """Read a binary P6 file into a [3, H, W] float array in [0, 1]."""
    path = Path(path)
    try:
        data = path.read_bytes()
        (magic, w, h, maxval), offset = _tokens(data, 4)
        if magic != b"P6":
            raise ValueError(f"not a P6 file (magic {magic!r})")
        w, h, maxval = int(w), int(h), int(maxval)
        if maxval != 255:
            raise ValueError(f"unsupported maxval {maxval}")
        body = data[offset:]
        if len(body) != w * h * 3:
            raise ValueError(f"expected {w * h * 3} pixel bytes, found {len(body)}")
    except (OSError, ValueError) as exc:
        raise CorpusError(f"{path}: {exc}") from exc
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# corpus on disk

MANIFEST = "manifest.csv"
MANIFEST_HEADER = ("path", "label", "group_id", "seed")


def save_corpus(corpus: Corpus, root: Path | str) -> None:
    """Write ``<root>/{split}/{real,fake}/img_%06d.ppm`` plus ``manifest.csv``."""
    root = Path(root)
    rows = []
    for name in SPLITS:
        for kind in ("real", "fake"):
            (root / name / kind).mkdir(parents=True, exist_ok=True)
        for s in corpus.split(name):
            kind = "real" if s.label == Label.REAL else "fake"
            rel = f"{name}/{kind}/img_{s.group_id:06d}.ppm"
            write_ppm(root / rel, s.image)
            rows.append((rel, kind, s.group_id, s.seed))
    with open(root / MANIFEST, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)


def load_corpus(root: Path | str) -> Corpus:
    root = Path(root)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise CorpusError(f"{manifest}: missing manifest")
    corpus = Corpus()
    with open(manifest, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != MANIFEST_HEADER:
            raise CorpusError(f"{manifest}: bad header {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rel, kind, group, seed = row
                split = rel.split("/", 1)[0]
                label = {"real": Label.REAL, "fake": Label.FAKE}[kind]
                sample = Sample(read_ppm(root / rel), label, int(group), int(seed))
                corpus.split(split).append(sample)
            except (ValueError, KeyError) as exc:
                raise CorpusError(f"{manifest}:{lineno}: malformed row {row} ({exc})") from exc
    return corpus


def thread_count() -> int:
    """Worker cap from ``MDCS_THREADS`` (default 1)."""
    raw = os.environ.get("MDCS_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"MDCS_THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"MDCS_THREADS must be a positive integer, got {raw!r}")
    return value
