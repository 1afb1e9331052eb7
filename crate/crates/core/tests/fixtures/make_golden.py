"""Writes the golden SCRW1 network, its input frame and a float64 reference output.

Run from this directory: python3 make_golden.py
"""
import json
import struct

import numpy as np

SIDE = 8
CLASSES = ["lion", "cat"]
PER_ANCHOR = 4 + len(CLASSES) + 1


def values(n, salt):
    # Small dyadic rationals: exact in f32.
    return np.array([((i * 37 + salt * 11) % 17 - 8) / 32.0 for i in range(n)], dtype=np.float64)


def same_pad(size, k, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2


def conv(x, w, b, stride):
    h, wd, cin = x.shape
    k = w.shape[0]
    oh, pt = same_pad(h, k, stride)
    ow, pl = same_pad(wd, k, stride)
    out = np.zeros((oh, ow, w.shape[3]))
    for oy in range(oh):
        for ox in range(ow):
            for ky in range(k):
                for kx in range(k):
                    iy, ix = oy * stride + ky - pt, ox * stride + kx - pl
                    if 0 <= iy < h and 0 <= ix < wd:
                        out[oy, ox] += x[iy, ix] @ w[ky, kx]
    return out + b


def depthwise(x, w, stride):
    k, _, c = w.shape
    full = np.zeros((k, k, c, c))
    for ch in range(c):
        full[:, :, ch, ch] = w[:, :, ch]
    return conv(x, full, np.zeros(c), stride)


layers = []
blob = bytearray(b"SCRW" + struct.pack("<II", 1, 0))


def emit(kind, k, stride, cin, cout, *arrays):
    blob.extend(struct.pack("<BHHHH", kind, k, stride, cin, cout))
    for a in arrays:
        blob.extend(np.asarray(a, dtype="<f4").tobytes())
    layers.append(kind)


salt = iter(range(1, 100))
stem_w = values(3 * 3 * 3 * 4, next(salt)).reshape(3, 3, 3, 4)
stem_b = values(4, next(salt))
dw1 = values(3 * 3 * 4, next(salt)).reshape(3, 3, 4)
pw1_w = values(4 * 4, next(salt)).reshape(4, 4)
pw1_b = values(4, next(salt))
head1_w = values(3 * 3 * 4 * PER_ANCHOR, next(salt)).reshape(3, 3, 4, PER_ANCHOR)
head1_b = values(PER_ANCHOR, next(salt))
dw2 = values(3 * 3 * 4, next(salt)).reshape(3, 3, 4)
pw2_w = values(4 * 4, next(salt)).reshape(4, 4)
pw2_b = values(4, next(salt))
head2_w = values(1 * 1 * 4 * PER_ANCHOR, next(salt)).reshape(1, 1, 4, PER_ANCHOR)
head2_b = values(PER_ANCHOR, next(salt))

emit(1, 3, 2, 3, 4, stem_w, stem_b)
emit(4, 0, 0, 4, 4)
emit(2, 3, 1, 4, 4, dw1)
emit(3, 1, 1, 4, 4, pw1_w, pw1_b)
emit(4, 0, 0, 4, 4)
emit(5, 3, 1, 4, PER_ANCHOR, head1_w, head1_b)
emit(2, 3, 2, 4, 4, dw2)
emit(3, 1, 1, 4, 4, pw2_w, pw2_b)
emit(5, 1, 1, 4, PER_ANCHOR, head2_w, head2_b)
blob[8:12] = struct.pack("<I", len(layers))

pixels = np.array([(y * 31 + x * 7 + c * 3) % 256 for y in range(SIDE) for x in range(SIDE) for c in range(3)], dtype=np.uint8)
image = pixels.reshape(SIDE, SIDE, 3).astype(np.float64) / 255.0
# The engine works in f32; start the reference from the same rounded inputs.
image = image.astype(np.float32).astype(np.float64)

x = np.maximum(conv(image, stem_w, stem_b, 2), 0)
x = np.maximum(conv(depthwise(x, dw1, 1), pw1_w[None, None], pw1_b, 1), 0)
h1 = conv(x, head1_w, head1_b, 1)
x = conv(depthwise(x, dw2, 2), pw2_w[None, None], pw2_b, 1)
h2 = conv(x, head2_w, head2_b, 1)

with open("golden.scrw", "wb") as f:
    f.write(blob)
with open("golden_input.ppm", "wb") as f:
    f.write(b"P6\n%d %d\n255\n" % (SIDE, SIDE) + pixels.tobytes())
with open("golden_reference.json", "w") as f:
    json.dump(
        {
            "classes": CLASSES,
            "heads": [
                {"side": int(h.shape[0]), "channels": int(h.shape[2]), "values": [float(v) for v in h.ravel()]}
                for h in (h1, h2)
            ],
        },
        f,
        indent=1,
    )
    f.write("\n")
