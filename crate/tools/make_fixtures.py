#!/usr/bin/env python3
"""Generate the committed test fixtures and reference values.

Everything here is computed independently of the Rust code:

* fixture clips (16-bit PCM, 16 kHz) and their MFCCs computed with librosa
  and scipy in float64,
* SQAF embedding files written with numpy,
* the seeded split of the 20-record example manifest, from a from-scratch
  xoshiro256** / splitmix64 implementation,
* human-agreement values from raw votes.

Run from the repository root:  python3 tools/make_fixtures.py
"""

import json
import math
import struct
from pathlib import Path

import librosa
import numpy as np
import scipy.fft
from scipy.io import wavfile

OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "fixtures"
SR = 16000
MASK = (1 << 64) - 1


# ---------------------------------------------------------------- clips

def clips():
    rng = np.random.default_rng(20240611)
    noise = rng.normal(0.0, 0.2, SR)

    n = 12345
    t = np.arange(n) / SR
    tones = 0.3 * np.sin(2 * np.pi * 440 * t) + 0.2 * np.sin(2 * np.pi * 1875 * t + 0.3)

    n = 19200
    t = np.arange(n) / SR
    f0 = 140 + 15 * np.sin(2 * np.pi * 3 * t)
    phase = 2 * np.pi * np.cumsum(f0) / SR
    voiced = sum(np.sin(k * phase) / k for k in range(1, 12))
    env = 0.5 * (1 - np.cos(2 * np.pi * 4 * t)) * 0.25
    speechlike = voiced * env
    speechlike[: SR // 10] = 0.0  # leading digital silence exercises the dB floor

    return {"noise": noise, "tones": tones, "speechlike": speechlike}


def to_pcm16(x):
    return np.clip(np.round(x * 32767.0), -32768, 32767).astype(np.int16)


def mfcc_reference(y):
    spec = np.abs(
        librosa.stft(y, n_fft=400, hop_length=200, win_length=400, window="hann", center=True, pad_mode="reflect")
    ) ** 2
    mel = librosa.filters.mel(sr=SR, n_fft=400, n_mels=128, fmin=0.0, fmax=SR / 2, htk=True, norm=None, dtype=np.float64)
    db = librosa.power_to_db(mel @ spec, ref=1.0, amin=1e-10, top_db=80.0)
    return scipy.fft.dct(db, type=2, axis=0, norm="ortho")[:40].T  # (T, 40)


# ---------------------------------------------------------------- SQAF

def write_sqaf(path, matrix, layer):
    m = np.asarray(matrix, dtype="<f4")
    t, d = m.shape
    with open(path, "wb") as f:
        f.write(b"SQAF")
        f.write(struct.pack("<IIII", 1, layer, t, d))
        f.write(m.tobytes(order="C"))


# ---------------------------------------------------------------- RNG oracle

def splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return state, z ^ (z >> 31)


def rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK


class Xoshiro:
    def __init__(self, seed):
        s, st = [], seed
        for _ in range(4):
            st, v = splitmix64(st)
            s.append(v)
        self.s = s

    def next(self):
        s = self.s
        result = (rotl((s[1] * 5) & MASK, 7) * 9) & MASK
        t = (s[1] << 17) & MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
        return result

    def below(self, n):
        m = self.next() * n
        low = m & MASK
        if low < n:
            threshold = ((1 << 64) - n) % n
            while low < threshold:
                m = self.next() * n
                low = m & MASK
        return m >> 64


def split_oracle(n, seed):
    idx = list(range(n))
    rng = Xoshiro(seed)
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        idx[i], idx[j] = idx[j], idx[i]
    cut = math.ceil(0.85 * n - 1e-12)
    labels = [None] * n
    for pos, i in enumerate(idx):
        labels[i] = "Train" if pos < cut else "Validation"
    return labels


# ---------------------------------------------------------------- main

def main():
    (OUT / "audio").mkdir(parents=True, exist_ok=True)
    (OUT / "sqaf").mkdir(parents=True, exist_ok=True)

    golden = {}
    for name, x in clips().items():
        pcm = to_pcm16(x)
        wavfile.write(OUT / "audio" / f"{name}.wav", SR, pcm)
        y = pcm.astype(np.float64) / 32768.0
        m = mfcc_reference(y)
        golden[name] = {"num_frames": m.shape[0], "dim": m.shape[1], "values": m.ravel().tolist()}
    (OUT / "mfcc_golden.json").write_text(json.dumps(golden))

    rng = np.random.default_rng(7)
    sqaf = {}
    for layer, (t, d) in {0: (7, 1024), 5: (7, 1024), 21: (7, 1024)}.items():
        m = rng.normal(size=(t, d)).astype(np.float32)
        m[0, 0] = -0.0
        m[1, 1] = np.float32(1e-40)  # subnormal
        path = OUT / "sqaf" / f"clip_layer{layer}.sqaf"
        write_sqaf(path, m, layer)
        sqaf[path.name] = {
            "layer": layer,
            "num_frames": t,
            "dim": d,
            "checksum": float(np.sum(m.astype(np.float64))),
            "first_row_head": [float(v) for v in m[0, :4]],
        }
    write_sqaf(OUT / "sqaf" / "mfcc_like.sqaf", rng.normal(size=(5, 40)).astype(np.float32), 0xFFFFFFFF)
    (OUT / "sqaf_expected.json").write_text(json.dumps(sqaf, indent=1))

    corpora = ["Tencent"] * 6 + ["PSTN"] * 8 + ["NISQA"] * 3 + ["IUB"] * 3
    splits = {}
    for seed in (1, 2, 99):
        splits[str(seed)] = split_oracle(len(corpora), seed)
    (OUT / "split_oracle.json").write_text(
        json.dumps({"corpora": corpora, "splits": splits, "train_count": {str(n): math.ceil(0.85 * n - 1e-12) for n in range(1, 201)}}, indent=1)
    )

    votes = [[3, 4, 5], [2, 2]]
    lines = []
    for i, v in enumerate(votes):
        v = np.asarray(v, dtype=float)
        lines.append(json.dumps({
            "id": f"h{i}",
            "corpus": "PSTN",
            "mos": float(v.mean()),
            "vote_count": len(v),
            "vote_std": float(v.std(ddof=1)),
        }))
    (OUT / "human_two_samples.jsonl").write_text("\n".join(lines) + "\n")
    per_vote = np.concatenate([np.asarray(v, float) - np.mean(v) for v in votes])
    (OUT / "human_expected.json").write_text(json.dumps({
        "two_sample_rmse": float(np.sqrt(np.mean(per_vote ** 2))),
        "one_sample_rmse": float(np.sqrt(np.mean((np.array([3, 4, 5.0]) - 4) ** 2))),
    }, indent=1))


if __name__ == "__main__":
    main()
