"""Spike datasets: Spiking Heidelberg Digits files and a synthetic stand-in.

Samples are event lists ``(times in seconds, channel indices)``.  Binning
turns them into dense ``[time, channel]`` arrays for the simulator.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError
from .io import read_container, write_container

log = logging.getLogger(__name__)

SPLITS = ("train", "test")


@dataclass
class SpikeDataset:
    samples: list  # [(times, units)]
    labels: np.ndarray
    n_channels: int
    n_classes: int
    split: str = "train"
    duration: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.samples) != len(self.labels):
            raise FormatError(f"{len(self.samples)} samples but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise FormatError(f"labels outside 0..{self.n_classes - 1}")
        for k, (t, u) in enumerate(self.samples):
            if len(t) != len(u):
                raise FormatError(f"sample {k}: {len(t)} times but {len(u)} units")
            if len(u) and (np.min(u) < 0 or np.max(u) >= self.n_channels):
                raise FormatError(f"sample {k}: channel index outside 0..{self.n_channels - 1}")
            if len(t) and np.min(t) < 0:
                raise FormatError(f"sample {k}: negative spike time")

    def __len__(self):
        return len(self.samples)


# -- SHD -------------------------------------------------------------------

SHD_CHANNELS = 700


def _shd_file(path, split: str) -> Path:
    if split not in SPLITS:
        raise DomainError(f"split must be one of {SPLITS}, got {split!r}")
    if path is None or str(path) == "":
        raise FileNotFoundError("no SHD path given")
    path = Path(path)
    if path.is_dir():
        for name in (f"shd_{split}.h5", f"shd_{split}.hdf5"):
            if (path / name).exists():
                return path / name
        raise FileNotFoundError(f"no shd_{split}.h5 under {path}")
    if not path.exists():
        raise FileNotFoundError(f"SHD file {path} does not exist")
    return path


def load_shd(path, split: str = "train") -> SpikeDataset:
    """Read one split of the SHD distribution (``shd_train.h5`` / ``shd_test.h5``).

    ``path`` is either the directory holding both files or a single file.
    """
    import h5py

    fname = _shd_file(path, split)
    try:
        fh = h5py.File(fname, "r")
    except OSError as exc:
        raise FileNotFoundError(f"cannot open {fname}: {exc}") from None
    with fh:
        try:
            times = fh["spikes"]["times"]
            units = fh["spikes"]["units"]
            labels = np.asarray(fh["labels"], dtype=np.int64)
        except KeyError as exc:
            raise FormatError(f"{fname}: missing dataset {exc}") from None
        if not (len(times) == len(units) == len(labels)):
            raise FormatError(
                f"{fname}: {len(times)} time arrays, {len(units)} unit arrays, {len(labels)} labels"
            )
        samples = [
            (np.asarray(times[k], dtype=np.float64), np.asarray(units[k], dtype=np.int64))
            for k in range(len(labels))
        ]
        n_channels = int(fh.attrs.get("n_channels", SHD_CHANNELS))
        if "extra" in fh and "keys" in fh["extra"]:
            n_classes = len(fh["extra"]["keys"])
        else:
            n_classes = int(fh.attrs.get("n_classes", labels.max() + 1 if labels.size else 0))
        duration = float(fh.attrs.get("duration", 1.0))
    ds = SpikeDataset(samples, labels, n_channels, n_classes, split, duration,
                      meta={"source": str(fname)})
    log.info("loaded %d %s samples from %s", len(ds), split, fname)
    return ds


def save_shd(ds: SpikeDataset, path) -> Path:
    """Write a dataset in the SHD file layout (used for subsets and tests)."""
    import h5py

    path = Path(path)
    if path.is_dir():
        path = path / f"shd_{ds.split}.h5"
    with h5py.File(path, "w") as fh:
        grp = fh.create_group("spikes")
        ft = h5py.vlen_dtype(np.dtype("float64"))
        fu = h5py.vlen_dtype(np.dtype("int64"))
        t = grp.create_dataset("times", (len(ds),), dtype=ft)
        u = grp.create_dataset("units", (len(ds),), dtype=fu)
        for k, (tt, uu) in enumerate(ds.samples):
            t[k] = np.asarray(tt, dtype=np.float64)
            u[k] = np.asarray(uu, dtype=np.int64)
        fh.create_dataset("labels", data=ds.labels.astype(np.int64))
        extra = fh.create_group("extra")
        extra.create_dataset("keys", data=np.array([f"class_{c}" for c in range(ds.n_classes)], dtype="S"))
        fh.attrs["n_channels"] = ds.n_channels
        fh.attrs["duration"] = ds.duration
    return path


def pool_channels(ds: SpikeDataset, factor: int) -> SpikeDataset:
    """Merge groups of ``factor`` adjacent channels (700 -> 140 for factor 5)."""
    if factor < 1:
        raise DomainError("pooling factor must be >= 1")
    if factor == 1:
        return ds
    n = -(-ds.n_channels // factor)
    samples = [(t, np.asarray(u) // factor) for t, u in ds.samples]
    return SpikeDataset(samples, ds.labels, n, ds.n_classes, ds.split, ds.duration, dict(ds.meta))


# -- binning ---------------------------------------------------------------


def bin_sample(times, units, n_channels: int, n_steps: int, duration: float, clip: bool = True):
    times = np.asarray(times, dtype=np.float64)
    units = np.asarray(units, dtype=np.int64)
    out = np.zeros((n_steps, n_channels), dtype=np.float32)
    if times.size:
        bins = np.floor(times / duration * n_steps).astype(np.int64)
        bins = np.clip(bins, 0, n_steps - 1)
        np.add.at(out, (bins, units), 1.0)
    if clip:
        np.minimum(out, 1.0, out=out)
    return out


def bin_spikes(ds: SpikeDataset, n_steps: int, duration: float | None = None, clip: bool = True) -> np.ndarray:
    """Dense ``[sample, time, channel]`` array.

    An event at time ``t`` lands in bin ``floor(t / duration * n_steps)``;
    events at or after ``duration`` go to the last bin.  With ``clip`` the
    counts are capped at 1.
    """
    duration = ds.duration if duration is None else duration
    if n_steps < 1:
        raise DomainError("n_steps must be >= 1")
    if not duration > 0:
        raise DomainError("duration must be > 0")
    out = np.zeros((len(ds), n_steps, ds.n_channels), dtype=np.float32)
    for k, (t, u) in enumerate(ds.samples):
        out[k] = bin_sample(t, u, ds.n_channels, n_steps, duration, clip)
    return out


def cached_bins(ds: SpikeDataset, n_steps: int, cache_stem, duration=None, clip=True) -> np.ndarray:
    """Bin ``ds`` once and keep the result as a flat binary container."""
    duration = ds.duration if duration is None else duration
    meta = {"n_steps": n_steps, "duration": duration, "clip": clip, "n_samples": len(ds),
            "n_channels": ds.n_channels, "split": ds.split, "source": ds.meta.get("source", "")}
    stem = Path(cache_stem)
    if stem.with_suffix(".json").exists():
        arrays, stored = read_container(stem)
        if stored == meta:
            return arrays["x"]
    x = bin_spikes(ds, n_steps, duration, clip)
    write_container(stem, {"x": x, "y": ds.labels}, meta)
    return x


# -- synthetic task ----------------------------------------------------------


def template_distances(templates: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distances between binary [class, time, channel] templates."""
    flat = templates.reshape(len(templates), -1).astype(np.int64)
    return (flat[:, None, :] != flat[None, :, :]).sum(axis=-1)


def _draw_templates(rng, n_classes, n_channels, n_steps, events_per_channel, span=1.0):
    """One template per class: each channel fires ``events_per_channel`` times
    within the first ``span`` fraction of the window."""
    last = max(1, int(round(span * n_steps)))
    times = []
    for _ in range(n_classes):
        t = rng.integers(0, last, size=(n_channels, events_per_channel))
        times.append(t)
    return np.stack(times)  # [class, channel, event] in steps


def _template_raster(step_times, n_steps):
    n_classes, n_channels, _ = step_times.shape
    out = np.zeros((n_classes, n_steps, n_channels), dtype=np.int8)
    for c in range(n_classes):
        for ch in range(n_channels):
            out[c, step_times[c, ch], ch] = 1
    return out


def synthetic_task(
    n_classes: int = 4,
    n_channels: int = 32,
    n_steps: int = 40,
    seed=0,
    n_train: int = 256,
    n_test: int = 128,
    jitter: float = 1.0,
    dropout: float = 0.1,
    events_per_channel: int = 2,
    min_distance: int | None = None,
    duration: float = 1.0,
    max_tries: int = 100,
    span: float = 1.0,
):
    """Train/test pair of a template-matching spike classification task.

    Each class has a fixed random raster; samples copy it with Gaussian
    timing jitter (``jitter`` in steps) and drop each event with
    probability ``dropout``.  Templates are redrawn until every pair differs
    in at least ``min_distance`` bins (default: half the events of one
    template).  ``span`` < 1 leaves the end of the window free of
    template events.
    """
    if n_classes < 2:
        raise DomainError("synthetic_task needs at least 2 classes")
    if not 0.0 < span <= 1.0:
        raise DomainError("span must be in (0, 1]")
    rng = np.random.default_rng(seed)
    if min_distance is None:
        min_distance = n_channels * events_per_channel // 2
    for _ in range(max_tries):
        step_times = _draw_templates(rng, n_classes, n_channels, n_steps, events_per_channel, span)
        dist = template_distances(_template_raster(step_times, n_steps))
        off = dist[~np.eye(n_classes, dtype=bool)]
        if off.min() >= min_distance:
            break
        log.debug("templates too close (min distance %d), redrawing", off.min())
    else:
        raise DomainError(f"could not draw {n_classes} templates {min_distance} bins apart")
    dt = duration / n_steps

    def make(n, split):
        samples, labels = [], []
        for k in range(n):
            c = k % n_classes
            base = step_times[c]
            ch = np.repeat(np.arange(n_channels), base.shape[1])
            t = (base.ravel() + 0.5 + rng.normal(0.0, jitter, size=base.size)) * dt
            keep = (rng.random(base.size) >= dropout) & (t >= 0) & (t < duration)
            order = np.argsort(t[keep], kind="stable")
            samples.append((t[keep][order], ch[keep][order]))
            labels.append(c)
        perm = rng.permutation(n)
        return SpikeDataset([samples[i] for i in perm], np.array(labels)[perm], n_channels,
                            n_classes, split, duration,
                            meta={"source": "synthetic", "templates": step_times})

    train = make(n_train, "train")
    test = make(n_test, "test")
    return train, test
