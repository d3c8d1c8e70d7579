"""Readers and writers for sensor logs, frame timelines, latents and images.

Text formats are UTF-8 CSV with a fixed header; floats are written with
``repr`` so every value survives a round trip exactly.  Parsers stop at the
first malformed row and report its line number.

Binary latent container (``.lseq``), all little-endian::

    b"LSEQ" | u32 version (=1) | u64 N | u64 D | N x f64 stamps | N*D x f32 values (row-major)
"""
import csv
import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError
from .gp import LatentSequence
from .kernels import FrameTimeline
from .metrics import DisparityMap
from .so3 import GyroLog, PoseLog

GYRO_HEADER = ["t", "wx", "wy", "wz"]
POSE_HEADER = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"]
FRAMES_HEADER = ["frame_id", "t"]
LSEQ_MAGIC = b"LSEQ"
LSEQ_VERSION = 1
_LSEQ_HEAD = struct.Struct("<4sIQQ")
QUAT_NORM_TOL = 1e-3


def _fmt(x):
    return repr(float(x))


def _read_rows(path, header):
    """Yield ``(line_number, fields)`` after validating the header."""
    path = Path(path)
    try:
        f = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise FormatError(f"cannot open: {e.strerror}", path) from e
    with f:
        reader = csv.reader(f)
        try:
            first = next(reader, None)
        except (csv.Error, UnicodeDecodeError) as e:
            raise FormatError(str(e), path, 1) from e
        if first is None:
            raise FormatError(f"empty file; expected header {','.join(header)!r}", path, 1)
        if [c.strip() for c in first] != header:
            raise FormatError(
                f"bad header {','.join(first)!r}; expected {','.join(header)!r}", path, 1)
        try:
            for row in reader:
                line = reader.line_num
                if not row or all(not c.strip() for c in row):
                    raise FormatError("blank row", path, line)
                if len(row) != len(header):
                    raise FormatError(
                        f"expected {len(header)} fields, found {len(row)}", path, line)
                yield line, row
        except (csv.Error, UnicodeDecodeError) as e:
            raise FormatError(str(e), path, reader.line_num) from e


def _floats(row, path, line, names):
    out = []
    for name, text in zip(names, row):
        try:
            v = float(text)
        except ValueError:
            raise FormatError(f"field {name!r}: {text!r} is not a number", path, line) from None
        if not np.isfinite(v):
            raise FormatError(f"field {name!r}: {text!r} is not finite", path, line)
        out.append(v)
    return out


def _check_time(t, prev, path, line):
    if prev is not None and not t > prev:
        raise FormatError(
            f"timestamps must be strictly increasing: t={t!r} after t={prev!r}", path, line)


def read_gyro_csv(path):
    ts, ws = [], []
    prev = None
    for line, row in _read_rows(path, GYRO_HEADER):
        t, wx, wy, wz = _floats(row, path, line, GYRO_HEADER)
        _check_time(t, prev, path, line)
        prev = t
        ts.append(t)
        ws.append((wx, wy, wz))
    return GyroLog(np.array(ts, dtype=np.float64), np.array(ws, dtype=np.float64).reshape(-1, 3))


def write_gyro_csv(path, gyro):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(GYRO_HEADER)
        for t, om in zip(gyro.t, gyro.omega):
            w.writerow([_fmt(t)] + [_fmt(v) for v in om])


def read_pose_csv(path):
    ts, ps, qs = [], [], []
    prev = None
    for line, row in _read_rows(path, POSE_HEADER):
        vals = _floats(row, path, line, POSE_HEADER)
        t = vals[0]
        _check_time(t, prev, path, line)
        prev = t
        q = np.array(vals[4:8])
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > QUAT_NORM_TOL:
            raise FormatError(
                f"quaternion norm {n:.6g} outside [0.999, 1.001]; cannot normalize", path, line)
        # leave already-unit quaternions bit-identical
        if abs(n - 1.0) > 1e-12:
            q = q / n
        ts.append(t)
        ps.append(vals[1:4])
        qs.append(q)
    return PoseLog(np.array(ts, dtype=np.float64), np.array(ps).reshape(-1, 3),
                   np.array(qs).reshape(-1, 4))


def write_pose_csv(path, poses):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(POSE_HEADER)
        for t, p, q in zip(poses.t, poses.p, poses.q):
            w.writerow([_fmt(t)] + [_fmt(v) for v in p] + [_fmt(v) for v in q])


def read_frames_csv(path):
    ids, ts = [], []
    seen = set()
    prev = None
    for line, row in _read_rows(path, FRAMES_HEADER):
        text = row[0].strip()
        try:
            fid = int(text)
        except ValueError:
            raise FormatError(f"frame_id {text!r} is not an integer", path, line) from None
        if fid < 0:
            raise FormatError(f"frame_id {fid} is negative", path, line)
        if fid in seen:
            raise FormatError(f"duplicate frame_id {fid}", path, line)
        seen.add(fid)
        (t,) = _floats(row[1:], path, line, ["t"])
        _check_time(t, prev, path, line)
        prev = t
        ids.append(fid)
        ts.append(t)
    if not ts:
        raise FormatError("no frames", path, 2)
    return FrameTimeline(np.array(ids, dtype=np.int64), np.array(ts, dtype=np.float64))


def write_frames_csv(path, frames):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(FRAMES_HEADER)
        for i, t in zip(frames.frame_ids, frames.t):
            w.writerow([int(i), _fmt(t)])


def write_latents(path, latents):
    t = np.ascontiguousarray(latents.timestamps, dtype="<f8")
    Y = np.ascontiguousarray(latents.Y, dtype="<f4")
    n, d = Y.shape
    with open(path, "wb") as f:
        f.write(_LSEQ_HEAD.pack(LSEQ_MAGIC, LSEQ_VERSION, n, d))
        f.write(t.tobytes())
        f.write(Y.tobytes())


def read_latents(path):
    """Read a latent container; values are returned as float32."""
    data = Path(path).read_bytes()
    if len(data) < _LSEQ_HEAD.size:
        raise FormatError(
            f"truncated header: expected {_LSEQ_HEAD.size} bytes, got {len(data)}", path)
    magic, version, n, d = _LSEQ_HEAD.unpack_from(data)
    if magic != LSEQ_MAGIC:
        raise FormatError(f"bad magic {magic!r}; expected {LSEQ_MAGIC!r}", path)
    if version != LSEQ_VERSION:
        raise FormatError(f"unsupported version {version}; only {LSEQ_VERSION} is supported", path)
    expected = _LSEQ_HEAD.size + 8 * n + 4 * n * d
    if len(data) != expected:
        kind = "truncated payload" if len(data) < expected else "trailing bytes"
        raise FormatError(f"{kind}: expected {expected} bytes, got {len(data)}", path)
    off = _LSEQ_HEAD.size
    t = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64)
    Y = np.frombuffer(data, dtype="<f4", count=n * d, offset=off + 8 * n)
    Y = Y.astype(np.float32).reshape(n, d)
    try:
        return LatentSequence(t, Y)
    except ValueError as e:
        raise FormatError(str(e), path) from e


# -- images --------------------------------------------------------------------

def _read_token(data, pos, path):
    """Next whitespace-separated header token in a PNM/PFM header (``#`` comments skipped)."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("truncated header", path)
    return data[start:pos], pos


def _pnm_header(data, path):
    magic, pos = _read_token(data, 0, path)
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos, path)
        try:
            fields.append(int(tok))
        except ValueError:
            raise FormatError(f"bad header field {tok!r}", path) from None
    # exactly one whitespace byte separates header and raster
    return magic, fields, pos + 1


def read_gray_image(path):
    """8-bit binary PGM (P5, maxval 255) scaled to [0, 1]."""
    data = Path(path).read_bytes()
    magic, pos = _read_token(data, 0, path)
    if magic != b"P5":
        raise FormatError(f"unsupported image type {magic!r}; expected binary PGM 'P5'", path)
    _, (w, h, maxval), off = _pnm_header(data, path)
    if maxval != 255:
        raise FormatError(f"maxval {maxval} is not 255", path)
    need = w * h
    if len(data) - off < need:
        raise FormatError(f"truncated raster: expected {need} bytes, got {len(data) - off}", path)
    img = np.frombuffer(data, dtype=np.uint8, count=need, offset=off).reshape(h, w)
    return img.astype(np.float64) / 255.0


def write_gray_image(path, img):
    img = np.asarray(img)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img).tobytes())


def read_pfm(path):
    data = Path(path).read_bytes()
    magic, pos = _read_token(data, 0, path)
    if magic != b"Pf":
        raise FormatError(f"unsupported PFM type {magic!r}; only grayscale 'Pf' is accepted", path)
    tok_w, pos = _read_token(data, pos, path)
    tok_h, pos = _read_token(data, pos, path)
    tok_s, pos = _read_token(data, pos, path)
    try:
        w, h, scale = int(tok_w), int(tok_h), float(tok_s)
    except ValueError:
        raise FormatError("bad PFM header", path) from None
    if scale == 0:
        raise FormatError("PFM scale must be nonzero", path)
    off = pos + 1
    need = 4 * w * h
    if len(data) - off < need:
        raise FormatError(f"truncated raster: expected {need} bytes, got {len(data) - off}", path)
    dtype = "<f4" if scale < 0 else ">f4"
    vals = np.frombuffer(data, dtype=dtype, count=w * h, offset=off).reshape(h, w)
    # rows are stored bottom-up
    return np.flipud(vals).astype(np.float32)


def write_pfm(path, values, little_endian=True):
    values = np.asarray(values, dtype=np.float32)
    h, w = values.shape
    scale = -1.0 if little_endian else 1.0
    dtype = "<f4" if little_endian else ">f4"
    with open(path, "wb") as f:
        f.write(b"Pf\n%d %d\n%s\n" % (w, h, repr(scale).encode()))
        f.write(np.ascontiguousarray(np.flipud(values), dtype=dtype).tobytes())


def read_disparity(path):
    """Disparity map from PFM (NaN/inf invalid) or 16-bit PGM (raw/256, 0 invalid)."""
    data = Path(path).read_bytes()[:2]
    if data == b"Pf":
        vals = read_pfm(path)
        return DisparityMap(vals, np.isfinite(vals))
    if data == b"P5":
        raw = Path(path).read_bytes()
        _, (w, h, maxval), off = _pnm_header(raw, path)
        if maxval < 256:
            raise FormatError(f"disparity PGM must be 16-bit (maxval {maxval})", path)
        need = 2 * w * h
        if len(raw) - off < need:
            raise FormatError(
                f"truncated raster: expected {need} bytes, got {len(raw) - off}", path)
        px = np.frombuffer(raw, dtype=">u2", count=w * h, offset=off).reshape(h, w)
        valid = px > 0
        vals = np.where(valid, px.astype(np.float32) / np.float32(256.0), np.float32(np.nan))
        return DisparityMap(vals.astype(np.float32), valid)
    raise FormatError(f"unrecognised disparity format {data!r}; expected PFM or 16-bit PGM", path)


def write_disparity_pgm(path, disp):
    disp = disp if isinstance(disp, DisparityMap) else DisparityMap(disp)
    raw = np.where(disp.valid, np.rint(disp.values.astype(np.float64) * 256.0), 0)
    raw = np.clip(raw, 0, 65535).astype(">u2")
    h, w = raw.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (w, h))
        f.write(raw.tobytes())


def write_matrix_csv(path, M):
    """Matrix as headerless CSV at full (round-trip) precision."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        for row in np.atleast_2d(M):
            w.writerow([_fmt(v) for v in row])


def read_matrix_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for line, row in enumerate(csv.reader(f), start=1):
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise FormatError("non-numeric matrix entry", path, line) from None
    return np.array(rows, dtype=np.float64)
