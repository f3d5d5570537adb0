"""WAV decoding, MFCC extraction and multi-window feature tensors.

Archive layout (``AFEA``, little-endian)::

    magic "AFEA" | version u32 | flags u32 | clip count u64
    per clip: id (u16 len + UTF-8) | label u32 | T u32 | 3*T*40 f32
    label table: count u32, then names (u16 len + UTF-8) in index order

``flags`` bit 0 marks single-window archives (channel 1 replicated).
"""

import csv
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct, rfft
from scipy.io import wavfile

from ._binio import FormatError, Reader, Writer

log = logging.getLogger(__name__)

SAMPLE_RATE = 44100
N_COEFFS = 40
N_MELS = 128
LOG_FLOOR = 1e-10
WINDOWS = (4096, 11025, 22050)

ARCHIVE_MAGIC = b"AFEA"
ARCHIVE_VERSION = 1
FLAG_SINGLE_WINDOW = 1


class AudioError(Exception):
    pass


class UnreadableAudioError(AudioError):
    pass


class UnsupportedEncodingError(AudioError):
    pass


class EmptyAudioError(AudioError):
    pass


class ClipTooShortError(AudioError):
    pass


class ManifestError(ValueError):
    pass


@dataclass
class PcmBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")

    def __len__(self):
        return int(self.samples.shape[0])


@dataclass
class FeatureMatrix:
    frames: np.ndarray  # (T, 40)
    window: int
    hop: int


@dataclass
class FeatureTensor:
    channels: np.ndarray  # (3, T, 40) float32
    clip_id: str
    label: int
    single_window: bool = False

    @property
    def n_frames(self) -> int:
        return int(self.channels.shape[1])


def decode_wav(path) -> PcmBuffer:
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError as e:
        raise UnreadableAudioError(f"{path}: no such file") from e
    except ValueError as e:
        msg = str(e)
        if "Unknown wave file format" in msg or "bit depth" in msg.lower():
            raise UnsupportedEncodingError(f"{path}: {msg}") from e
        raise UnreadableAudioError(f"{path}: {msg}") from e
    except (OSError, EOFError, struct.error) as e:
        raise UnreadableAudioError(f"{path}: {e}") from e
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    else:
        raise UnsupportedEncodingError(f"{path}: unsupported sample type {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1, dtype=np.float64).astype(np.float32)
    if samples.shape[0] == 0:
        raise EmptyAudioError(f"{path}: no audio samples")
    return PcmBuffer(samples, int(rate))


def write_wav16(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32767.0), -32768, 32767).astype("<i2")
    wavfile.write(path, sample_rate, pcm)


def resample_linear(pcm: PcmBuffer, target_rate: int) -> PcmBuffer:
    if target_rate <= 0:
        raise ValueError("target rate must be positive")
    if target_rate == pcm.sample_rate:
        return pcm
    n_out = int(round(len(pcm) * target_rate / pcm.sample_rate))
    pos = np.arange(n_out, dtype=np.float64) * (pcm.sample_rate / target_rate)
    out = np.interp(pos, np.arange(len(pcm), dtype=np.float64), pcm.samples.astype(np.float64))
    return PcmBuffer(out.astype(np.float32), target_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


_FB_CACHE: dict = {}


def mel_filterbank(n_fft: int, sample_rate: int, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular area-normalized filters from 0 Hz to Nyquist, ``(n_mels, n_fft // 2 + 1)``."""
    key = (n_fft, sample_rate, n_mels)
    if key in _FB_CACHE:
        return _FB_CACHE[key]
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down)) * (2.0 / (hi - lo))
    _FB_CACHE[key] = fb
    return fb


def frame_count(n_samples: int, window: int, hop: int) -> int:
    if n_samples < window:
        raise ClipTooShortError(f"clip of {n_samples} samples is shorter than window {window}")
    return (n_samples - window) // hop + 1


def mfcc(pcm: PcmBuffer, window: int = 4096, hop: int = 1024, n_mels: int = N_MELS, n_coeffs: int = N_COEFFS) -> FeatureMatrix:
    n_frames = frame_count(len(pcm), window, hop)
    x = pcm.samples.astype(np.float64)
    frames = sliding_window_view(x, window)[::hop][:n_frames]
    # periodic Hann
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window) / window)
    power = np.abs(rfft(frames * hann, n=window, axis=1)) ** 2
    mel = power @ mel_filterbank(window, pcm.sample_rate, n_mels).T
    logmel = np.log(np.maximum(mel, LOG_FLOOR))
    cep = dct(logmel, type=2, norm="ortho", axis=1)[:, :n_coeffs]
    return FeatureMatrix(cep, window, hop)


def _align(frames: np.ndarray, n_target: int) -> np.ndarray:
    n_src = frames.shape[0]
    if n_src == n_target:
        return frames
    if n_src == 1:
        return np.repeat(frames, n_target, axis=0)
    pos = np.linspace(0.0, n_src - 1.0, n_target)
    src = np.arange(n_src, dtype=np.float64)
    return np.stack([np.interp(pos, src, frames[:, c]) for c in range(frames.shape[1])], axis=1)


def multi_window_features(pcm: PcmBuffer, clip_id: str, label: int, windows=WINDOWS, multi_window: bool = True) -> FeatureTensor:
    """Stack MFCCs at three window lengths (hop = window // 4) onto the first window's frame axis.

    With ``multi_window=False`` the first channel is replicated three times.
    """
    if not multi_window:
        first = mfcc(pcm, windows[0], windows[0] // 4).frames
        return FeatureTensor(np.stack([first] * 3).astype(np.float32), clip_id, label, single_window=True)
    mats = [mfcc(pcm, w, w // 4).frames for w in windows]
    n_target = mats[0].shape[0]
    chans = np.stack([_align(m, n_target) for m in mats]).astype(np.float32)
    return FeatureTensor(chans, clip_id, label, single_window=False)


# --------------------------------------------------------------------------
# manifest + archive

@dataclass
class FeatureArchive:
    tensors: list
    label_names: list
    single_window: bool = False

    def __len__(self):
        return len(self.tensors)


def read_manifest(path):
    """Return ``[(audio_path, label_name, clip_id)]``.

    Relative paths resolve against the manifest's directory; the clip id is the
    path as written in the manifest, minus its extension.
    """
    path = Path(path)
    base = path.parent
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:2]] != ["path", "label"]:
            raise ManifestError(f"{path}: header must be 'path,label'")
        for lineno, row in enumerate(reader, start=2):
            p, lab = (row.get("path") or "").strip(), (row.get("label") or "").strip()
            if not p or not lab:
                raise ManifestError(f"{path}:{lineno}: empty path or label")
            audio = Path(p) if Path(p).is_absolute() else base / p
            if not audio.is_file():
                raise ManifestError(f"{path}:{lineno}: audio file not found: {p}")
            rows.append((audio, lab, str(Path(p).with_suffix(""))))
    if not rows:
        raise ManifestError(f"{path}: manifest has no rows")
    return rows


def extract_file(audio_path, clip_id: str, label: int, multi_window: bool = True) -> FeatureTensor:
    pcm = resample_linear(decode_wav(audio_path), SAMPLE_RATE)
    return multi_window_features(pcm, clip_id, label, multi_window=multi_window)


def extract_manifest(manifest, multi_window: bool = True, workers: int = 1, progress=None) -> FeatureArchive:
    rows = read_manifest(manifest)
    names = sorted({lab for _, lab, _ in rows})
    index = {n: i for i, n in enumerate(names)}
    jobs = [(p, cid, index[lab], lineno) for lineno, (p, lab, cid) in enumerate(rows, start=2)]

    def run(job):
        p, cid, lab, lineno = job
        try:
            return extract_file(p, cid, lab, multi_window)
        except AudioError as e:
            raise type(e)(f"{manifest}:{lineno}: {e}") from e

    tensors = []
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            for n, t in enumerate(pool.map(run, jobs), 1):
                tensors.append(t)
                if progress:
                    progress(n, len(jobs))
    else:
        for n, job in enumerate(jobs, 1):
            tensors.append(run(job))
            if progress:
                progress(n, len(jobs))
    return FeatureArchive(tensors, names, single_window=not multi_window)


def save_archive(archive: FeatureArchive, path) -> None:
    w = Writer()
    w.raw(ARCHIVE_MAGIC)
    w.u32(ARCHIVE_VERSION)
    w.u32(FLAG_SINGLE_WINDOW if archive.single_window else 0)
    w.u64(len(archive.tensors))
    for t in archive.tensors:
        c, n_frames, n_coeffs = t.channels.shape
        if c != 3 or n_coeffs != N_COEFFS:
            raise ValueError(f"clip {t.clip_id}: expected 3 x T x {N_COEFFS}, got {t.channels.shape}")
        w.str16(t.clip_id)
        w.u32(t.label)
        w.u32(n_frames)
        w.array(t.channels, "<f4")
    w.u32(len(archive.label_names))
    for name in archive.label_names:
        w.str16(name)
    with open(path, "wb") as fh:
        fh.write(w.getvalue())


def load_archive(path) -> FeatureArchive:
    with open(path, "rb") as fh:
        r = Reader(fh.read(), "feature archive")
    r.expect_magic(ARCHIVE_MAGIC)
    r.expect_version(ARCHIVE_VERSION)
    single = bool(r.u32() & FLAG_SINGLE_WINDOW)
    tensors = []
    for _ in range(r.u64()):
        cid = r.str16()
        label = r.u32()
        n_frames = r.u32()
        chans = r.array(3 * n_frames * N_COEFFS, "<f4").astype(np.float32).reshape(3, n_frames, N_COEFFS)
        tensors.append(FeatureTensor(chans, cid, label, single))
    names = [r.str16() for _ in range(r.u32())]
    if not r.at_end():
        raise FormatError("trailing bytes after feature archive")
    for t in tensors:
        if t.label >= len(names):
            raise FormatError(f"clip {t.clip_id} has label {t.label} outside the label table")
    return FeatureArchive(tensors, names, single)
