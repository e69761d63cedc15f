"""Labeling of image pairs as diachronic or synchronic, and dataset manifests."""

from __future__ import annotations

import datetime as dt
import itertools
import json
import logging
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InsufficientPairs

log = logging.getLogger(__name__)

YEAR_DAYS = 365.25
DIACHRONIC = "Diachronic"
SYNCHRONIC = "Synchronic"
UNLABELED = "Unlabeled"


@dataclass
class ImageMeta:
    image_id: str
    aoi_id: str
    acq_date: dt.date
    rpc_path: str | None = None
    image_path: str | None = None

    def __post_init__(self):
        self.acq_date = as_date(self.acq_date)

    @classmethod
    def from_dict(cls, d: dict) -> "ImageMeta":
        return cls(str(d["image_id"]), str(d["aoi_id"]), d["acq_date"], d.get("rpc_path"), d.get("image_path"))


@dataclass
class CurateConfig:
    gap_thresh: float = 30.0
    match_thresh: float = 40.0
    per_megapixel: bool = False  # compare matches per megapixel of image area instead of raw counts


@dataclass
class PairLabel:
    a: str
    b: str
    gap_days: float
    n_matches: int
    label: str
    season_wrapped: bool = False  # raw and folded gaps fall on different sides of the threshold
    aoi: str | None = None

    def manifest_record(self) -> dict:
        return {"aoi": self.aoi, "left_id": self.a, "right_id": self.b, "label": self.label,
                "gap_days": self.gap_days, "n_matches": self.n_matches}


def as_date(value) -> dt.date:
    """A date from a date, datetime (taken in UTC) or ISO-8601 string."""
    if isinstance(value, dt.datetime):
        if value.tzinfo is not None:
            value = value.astimezone(dt.timezone.utc)
        return value.date()
    if isinstance(value, dt.date):
        return value
    text = str(value).strip()
    if len(text) == 10:
        return dt.date.fromisoformat(text)
    return as_date(dt.datetime.fromisoformat(text.replace("Z", "+00:00")))


def seasonal_gap(d1, d2) -> float:
    """Days between two dates folded modulo one year into [0, 182.625]."""
    g = abs((as_date(d1) - as_date(d2)).days)
    m = g % YEAR_DAYS
    return min(m, YEAR_DAYS - m)


def label_from(gap: float, n_matches: float, cfg: CurateConfig | None = None) -> str:
    cfg = cfg or CurateConfig()
    if gap > cfg.gap_thresh and n_matches < cfg.match_thresh:
        return DIACHRONIC
    if gap <= cfg.gap_thresh and n_matches >= cfg.match_thresh:
        return SYNCHRONIC
    return UNLABELED


def label_pair(meta_a: ImageMeta, meta_b: ImageMeta, n_matches: int, cfg: CurateConfig | None = None,
               area_px: float | None = None) -> PairLabel:
    """Diachronic iff folded gap > 30 d and fewer than 40 matches;
    synchronic iff folded gap <= 30 d and at least 40 matches.

    With ``cfg.per_megapixel`` the match count is divided by the image area
    in megapixels (``area_px``) before thresholding.
    """
    cfg = cfg or CurateConfig()
    gap = seasonal_gap(meta_a.acq_date, meta_b.acq_date)
    raw = abs((meta_a.acq_date - meta_b.acq_date).days)
    score = float(n_matches)
    if cfg.per_megapixel:
        if not area_px:
            raise ValueError("per-megapixel thresholds need the image area")
        score = n_matches / (area_px / 1e6)
    wrapped = (raw > cfg.gap_thresh) != (gap > cfg.gap_thresh)
    return PairLabel(meta_a.image_id, meta_b.image_id, gap, int(n_matches), label_from(gap, score, cfg),
                     wrapped, meta_a.aoi_id)


def load_image_meta(path) -> list[ImageMeta]:
    """Image metadata from JSON: a list, or an object with an "images" list."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data["images"]
    return [ImageMeta.from_dict(d) for d in data]


def matches_from_dir(directory):
    """Match counter reading ``<a>__<b>.csv`` (either order) from a directory.

    Counts non-empty, non-comment lines; a missing file gives None.
    """
    directory = Path(directory)

    def count(a: ImageMeta, b: ImageMeta):
        for name in (f"{a.image_id}__{b.image_id}.csv", f"{b.image_id}__{a.image_id}.csv"):
            p = directory / name
            if p.exists():
                lines = (line.split("#", 1)[0].strip() for line in p.read_text().splitlines())
                return sum(1 for line in lines if line)
        return None

    return count


def build_manifest(images, match_source, quotas: dict, seed: int = 0,
                   cfg: CurateConfig | None = None) -> list[PairLabel]:
    """Label every same-AOI pair and sample up to the quotas per AOI.

    Args:
        images: list of ImageMeta.
        match_source: callable (meta_a, meta_b) -> count or None, a dict
            keyed by (id_a, id_b) in either order, or a directory of
            match CSVs (see :func:`matches_from_dir`).
        quotas: {"dia_per_aoi": int, "sync_per_aoi": int}.
        seed: sampling seed.

    Returns:
        sampled PairLabels, by AOI then diachronic before synchronic.
        InsufficientPairs is warned for each AOI/label below quota.
    """
    cfg = cfg or CurateConfig()
    if isinstance(match_source, dict):
        table = match_source

        def counter(a, b):
            return table.get((a.image_id, b.image_id), table.get((b.image_id, a.image_id)))
    elif callable(match_source):
        counter = match_source
    else:
        counter = matches_from_dir(match_source)

    by_aoi: dict = {}
    for m in images:
        by_aoi.setdefault(m.aoi_id, []).append(m)
    rng = np.random.default_rng(seed)
    want = {DIACHRONIC: int(quotas.get("dia_per_aoi", 0)), SYNCHRONIC: int(quotas.get("sync_per_aoi", 0))}
    out = []
    for aoi in sorted(by_aoi):
        metas = sorted(by_aoi[aoi], key=lambda m: m.image_id)
        if len(metas) < 2:
            warnings.warn(f"AOI {aoi}: fewer than two images", InsufficientPairs, stacklevel=2)
            continue
        pools = {DIACHRONIC: [], SYNCHRONIC: []}
        for a, b in itertools.combinations(metas, 2):
            n = counter(a, b)
            if n is None:
                log.warning("no match count for %s/%s; pair skipped", a.image_id, b.image_id)
                continue
            lab = label_pair(a, b, n, cfg)
            if lab.label in pools:
                pools[lab.label].append(lab)
        for label in (DIACHRONIC, SYNCHRONIC):
            pool, k = pools[label], want[label]
            if len(pool) < k:
                warnings.warn(f"AOI {aoi}: {len(pool)} {label.lower()} pair(s) for a quota of {k}",
                              InsufficientPairs, stacklevel=2)
            if len(pool) > k:
                idx = np.sort(rng.choice(len(pool), size=k, replace=False))
                pool = [pool[i] for i in idx]
            out.extend(pool)
    return out


def write_manifest(labels, path) -> None:
    with open(path, "w") as f:
        for lab in labels:
            f.write(json.dumps(lab.manifest_record()) + "\n")


def read_manifest(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
