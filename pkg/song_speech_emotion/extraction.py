"""Corpus-wide feature extraction into the binary cache."""

from __future__ import annotations

from dataclasses import asdict
import logging
from multiprocessing import Pool
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from tqdm import tqdm

from .audio_io import AudioClip, load_wav
from .dsp_core import FrameMatrix
from .feature_cache import (
    CacheError,
    FeatureCache,
    cache_path,
    derive_hsf,
    file_digest,
    load_cache,
    read_manifest,
    settings_fingerprint,
    write_cache,
    write_manifest,
)
from .features_spectral import (
    DEFAULT_PARAMS,
    L193_COLUMNS,
    PAA_COLUMNS,
    FeatureParams,
    extract_l193,
    extract_paa,
)
from .features_voice import GEMAPS_COLUMNS, extract_gemaps
from .ravdess import UtteranceRecord

logger = logging.getLogger(__name__)

EXTRACTORS = {"G23": extract_gemaps, "P34": extract_paa, "L193": extract_l193}
COLUMNS = {"G23": GEMAPS_COLUMNS, "P34": PAA_COLUMNS, "L193": L193_COLUMNS}


class ExtractionSummary(NamedTuple):
    lld_path: Path
    hsf_path: Path
    extracted: int
    reused: int
    target_frames: int


def extract_features(clip: AudioClip, set_id: str, params: FeatureParams = DEFAULT_PARAMS) -> FrameMatrix:
    try:
        extractor = EXTRACTORS[set_id]
    except KeyError:
        raise ValueError(f"unknown feature set {set_id!r}, expected one of {tuple(EXTRACTORS)}") from None
    return extractor(clip, params)


def _extract_one(job):
    path, set_id, params, digest = job
    matrix = extract_features(load_wav(path), set_id, params)
    return Path(path).stem, digest, matrix.values.astype(np.float32)


def _open_existing(path: Path) -> FeatureCache | None:
    if not path.exists():
        return None
    try:
        return load_cache(path)
    except CacheError as error:
        logger.warning("rebuilding unreadable cache: %s", error)
        return None


def extract_corpus(
    records: Sequence[UtteranceRecord],
    set_id: str,
    cache_dir: str | Path,
    task: str,
    params: FeatureParams = DEFAULT_PARAMS,
    workers: int = 1,
    hsf_before_padding: bool = True,
    progress: bool = True,
) -> ExtractionSummary:
    """Extract `set_id` LLDs for every record and write the LLD and HSF caches.

    Entries whose source audio hash is unchanged are reused from an existing
    cache; only new or modified files are decoded. Each manifest stores a
    fingerprint of the settings its cache was built with, and a cache whose
    fingerprint no longer matches is rebuilt. Files are extracted in a
    worker pool and written by this process alone.
    """
    lld_path = cache_path(cache_dir, task, set_id, "LLD")
    hsf_path = cache_path(cache_dir, task, set_id, "HSF")
    lld_fingerprint = settings_fingerprint({"set_id": set_id, "frame_params": asdict(params)})

    existing = _open_existing(lld_path)
    if existing is not None and read_manifest(lld_path).get("fingerprint") != lld_fingerprint:
        logger.info("%s %s: extraction settings changed, rebuilding the cache", task, set_id)
        existing = None

    digests = [file_digest(record.path) for record in records]
    jobs = [
        (str(record.path), set_id, params, digest)
        for record, digest in zip(records, digests)
        if existing is None
        or record.utterance_id not in existing
        or existing.entries[record.utterance_id].content_hash != digest
    ]
    reused = len(records) - len(jobs)

    fresh = {}
    bar = dict(total=len(jobs), desc=f"{task} {set_id}", disable=not progress or not jobs)
    if workers > 1 and len(jobs) > 1:
        with Pool(processes=workers) as pool:
            outcomes = list(tqdm(pool.imap(_extract_one, jobs), **bar))
    else:
        outcomes = [_extract_one(job) for job in tqdm(jobs, **bar)]
    for utterance_id, digest, values in outcomes:
        fresh[utterance_id] = (digest, values)

    entries = {}
    for record in records:
        if record.utterance_id in fresh:
            entries[record.utterance_id] = fresh[record.utterance_id]
        else:
            entry = existing.entries[record.utterance_id]
            entries[record.utterance_id] = (entry.content_hash, entry.values)
    target_frames = max(values.shape[0] for _, values in entries.values())

    settings = {
        "set_id": set_id,
        "task": task,
        "target_frames": target_frames,
        "n_utterances": len(records),
        "frame_params": asdict(params),
        "hsf_statistics": "mean and population standard deviation per column",
        "hsf_before_padding": hsf_before_padding,
        "chroma_normalization": "peak bin = 1 per frame",
    }
    hsf_fingerprint = settings_fingerprint({
        "lld": lld_fingerprint,
        "target_frames": target_frames,
        "hsf_before_padding": hsf_before_padding,
    })
    columns = COLUMNS[set_id]

    lld_unchanged = (
        not jobs
        and existing is not None
        and list(existing.entries) == list(entries)
        and existing.target_frames == target_frames
    )
    if lld_unchanged:
        lld = existing
    else:
        lld = FeatureCache(set_id, "LLD", target_frames)
        for utterance_id, (digest, values) in entries.items():
            lld.add(utterance_id, digest, values)
        write_cache(lld_path, lld)
        write_manifest(lld_path, columns, {**settings, "kind": "LLD", "fingerprint": lld_fingerprint})

    hsf_current = hsf_path.exists() and read_manifest(hsf_path).get("fingerprint") == hsf_fingerprint
    if lld_unchanged and hsf_current:
        logger.info("%s %s: all %d utterances cached", task, set_id, len(records))
        return ExtractionSummary(lld_path, hsf_path, 0, reused, target_frames)

    if not hsf_before_padding:
        logger.warning("HSF computed from padded matrices (sensitivity mode)")
    hsf = derive_hsf(lld, hsf_before_padding, params.hop_s, params.win_s)
    write_cache(hsf_path, hsf)
    hsf_columns = [f"{name}_mean" for name in columns] + [f"{name}_std" for name in columns]
    write_manifest(hsf_path, hsf_columns, {**settings, "kind": "HSF", "fingerprint": hsf_fingerprint})

    logger.info("%s %s: extracted %d, reused %d, padded length %d frames",
                task, set_id, len(jobs), reused, target_frames)
    return ExtractionSummary(lld_path, hsf_path, len(jobs), reused, target_frames)


def cache_features(records: Sequence[UtteranceRecord], set_id: str, kind: str,
                   cache_dir: str | Path, task: str, **options) -> Path:
    """Bring the caches for `set_id` up to date and return the `kind` cache path."""
    summary = extract_corpus(records, set_id, cache_dir, task, **options)
    if kind == "LLD":
        return summary.lld_path
    if kind == "HSF":
        return summary.hsf_path
    raise ValueError(f"unknown feature kind {kind!r}")
