"""On-disk formats: frame containers (DVFR), embeddings (DVEM), corpus
manifests, and trial lists.

DVFR: magic "DVFR" | u32 rows | u32 cols | float32 LE row-major values |
      u32 metadata length | UTF-8 "key=value" lines.
DVEM: magic "DVEM" | u32 dim | float32 LE values | u32 len | UTF-8 provenance.
Manifest: text lines "path,speaker_id,duration".
Trials: CSV "enroll_id,probe_id,label[,score]" with labels genuine/impostor.
"""

import struct

import numpy as np

FRAME_MAGIC = b"DVFR"
EMBED_MAGIC = b"DVEM"
TRIAL_LABELS = ("genuine", "impostor")


def _encode_meta(meta):
    return "\n".join(f"{k}={v}" for k, v in meta.items()).encode("utf-8")


def _decode_meta(blob):
    meta = {}
    for line in blob.decode("utf-8").splitlines():
        if line:
            k, _, v = line.partition("=")
            meta[k] = v
    return meta


def write_frames(path, values, meta=None):
    """values: [rows, cols] float array; meta: flat str dict (ids etc.)."""
    arr = np.ascontiguousarray(np.asarray(values, dtype="<f4"))
    if arr.ndim != 2:
        raise ValueError(f"frame container values must be 2-D, got shape {arr.shape}")
    blob = _encode_meta(meta or {})
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


def read_frames(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FRAME_MAGIC:
        raise ValueError(f"not a DVFR file: {path}")
    rows, cols = struct.unpack_from("<II", blob, 4)
    need = 12 + 4 * rows * cols
    if len(blob) < need + 4:
        raise ValueError(f"truncated DVFR file: {path}")
    values = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=12).reshape(rows, cols)
    (meta_len,) = struct.unpack_from("<I", blob, need)
    meta = _decode_meta(blob[need + 4 : need + 4 + meta_len])
    return values.copy(), meta


def write_embedding(path, vector, provenance=""):
    vec = np.ascontiguousarray(np.asarray(vector, dtype="<f4"))
    if vec.ndim != 1:
        raise ValueError(f"embedding must be 1-D, got shape {vec.shape}")
    blob = provenance.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<I", vec.size))
        fh.write(vec.tobytes())
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


def read_embedding(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != EMBED_MAGIC:
        raise ValueError(f"not a DVEM file: {path}")
    (dim,) = struct.unpack_from("<I", blob, 4)
    vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=8)
    (plen,) = struct.unpack_from("<I", blob, 8 + 4 * dim)
    provenance = blob[12 + 4 * dim : 12 + 4 * dim + plen].decode("utf-8")
    return vec.copy(), provenance


def read_manifest(path):
    """[(relpath, speaker_id, duration_s), ...]; utterance id is the path
    minus its extension."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValueError(f"{path}:{ln}: expected 'path,speaker_id,duration', got {line!r}")
            entries.append((parts[0], parts[1], float(parts[2])))
    if not entries:
        raise ValueError(f"empty manifest: {path}")
    return entries


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8") as fh:
        for rel, spk, dur in entries:
            fh.write(f"{rel},{spk},{dur:.3f}\n")


def utt_id(relpath):
    stem = relpath.rsplit(".", 1)[0]
    return stem


def read_trials(path):
    """[(enroll_id, probe_id, label, score-or-None), ...]."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if parts[0] == "enroll_id":  # header
                continue
            if len(parts) not in (3, 4):
                raise ValueError(f"{path}:{ln}: expected 3 or 4 columns, got {len(parts)}")
            label = parts[2]
            if label not in TRIAL_LABELS:
                raise ValueError(f"{path}:{ln}: label must be one of {TRIAL_LABELS}, got {label!r}")
            score = float(parts[3]) if len(parts) == 4 else None
            rows.append((parts[0], parts[1], label, score))
    if not rows:
        raise ValueError(f"empty trial list: {path}")
    return rows


def write_trials(path, rows):
    """rows: iterable of (enroll_id, probe_id, label[, score])."""
    with open(path, "w", encoding="utf-8") as fh:
        first = rows[0] if rows else ()
        fh.write("enroll_id,probe_id,label,score\n" if len(first) == 4 else "enroll_id,probe_id,label\n")
        for row in rows:
            if len(row) == 4 and row[3] is not None:
                fh.write(f"{row[0]},{row[1]},{row[2]},{row[3]!r}\n")
            else:
                fh.write(f"{row[0]},{row[1]},{row[2]}\n")
