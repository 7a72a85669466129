"""Regenerates the small clip dataset under clips/. Standard library only."""

import json
import math
import struct
import wave
import zlib
from pathlib import Path

ROOT = Path(__file__).parent / "clips"

CLIPS = [
    # id, frames, width, height, tone Hz
    ("clip_a", 5, 32, 24, 440.0),
    ("clip_b", 3, 24, 16, 220.0),
    ("clip_c", 2, 16, 16, 880.0),
]


def png(width, height, rows, color_type):
    def chunk(tag, data):
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    raw = b"".join(b"\x00" + bytes(r) for r in rows)
    ihdr = struct.pack(">IIBBBBB", width, height, 8, color_type, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")


def frame_rows(w, h, seed):
    rows = []
    for y in range(h):
        row = []
        for x in range(w):
            row += [(x * 7 + seed * 31) % 256, (y * 11 + seed * 17) % 256, ((x + y) * 5 + seed) % 256]
        rows.append(row)
    return rows


def gt_rows(w, h, i):
    x0, y0 = (i * 3) % (w // 2), (i * 2) % (h // 2)
    x1, y1 = x0 + w // 2, y0 + h // 2
    return [[255 if x0 <= x < x1 and y0 <= y < y1 else 0 for x in range(w)] for y in range(h)]


def write_wav(path, hz, seconds=0.05, rate=16000):
    n = int(rate * seconds)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(rate)
        f.writeframes(b"".join(struct.pack("<h", int(8000 * math.sin(2 * math.pi * hz * t / rate))) for t in range(n)))


def main():
    samples = []
    for cid, n, w, h, hz in CLIPS:
        for sub in ("frames", "audio", "labels"):
            (ROOT / cid / sub).mkdir(parents=True, exist_ok=True)
        frames, audio, labels = [], [], []
        for i in range(n):
            name = f"{i:05}"
            (ROOT / cid / "frames" / f"{name}.png").write_bytes(png(w, h, frame_rows(w, h, i + len(cid) * 13 + ord(cid[-1])), 2))
            write_wav(ROOT / cid / "audio" / f"{name}.wav", hz * (1 + i / 10))
            (ROOT / cid / "labels" / f"{name}.png").write_bytes(png(w, h, gt_rows(w, h, i), 0))
            frames.append(f"{cid}/frames/{name}.png")
            audio.append(f"{cid}/audio/{name}.wav")
            labels.append(f"{cid}/labels/{name}.png")
        samples.append({"id": cid, "frames": frames, "audio_segments": audio, "gt_masks": labels})
    manifest = {"dataset": "s4-mini", "samples": samples}
    (ROOT / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main()
