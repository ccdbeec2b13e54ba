"""Writer for the AFV latent-dump wire format.

Implements the documented binary dump + text manifest contract (see the
primary repository's docs/formats.md) so the adapter couples to the
pipeline only through files: a 23-byte little-endian header (magic
"AFVL", version, n/C/H/W, dtype code 0 = f32), the raw float32 payload,
and a `<dump>.manifest` sidecar with labels and attack-success flags.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"AFVL"
FORMAT_VERSION = 1
DTYPE_F32LE = 0
_HEADER = struct.Struct("<4sHIIIIB")


def write_dump(
    values: np.ndarray,
    shape: tuple[int, int, int],
    labels: np.ndarray,
    attack_success: np.ndarray,
    class_names: dict[int, str],
    path: str,
) -> int:
    """Write (n, C*H*W) float32 values plus the manifest; returns dump bytes."""
    values = np.ascontiguousarray(values, dtype="<f4")
    c, h, w = shape
    n = values.shape[0]
    if values.ndim != 2 or values.shape[1] != c * h * w:
        raise ValueError(f"values must be (n, {c * h * w}) for shape {shape}")
    if n == 0:
        raise ValueError("empty capture")
    labels = np.asarray(labels, dtype=np.int64)
    attack_success = np.asarray(attack_success, dtype=bool)
    if labels.shape != (n,) or attack_success.shape != (n,):
        raise ValueError("labels/attack_success length must match samples")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, n, c, h, w, DTYPE_F32LE)
    with open(path, "wb") as f:
        f.write(header)
        f.write(values.tobytes())
    lines = [
        "format afv-latent-manifest",
        f"version {FORMAT_VERSION}",
        f"n_samples {n}",
    ]
    for label in sorted(class_names):
        lines.append(f"class {label} {class_names[label]}")
    for i in range(n):
        lines.append(f"sample {i} {int(labels[i])} {1 if attack_success[i] else 0}")
    with open(path + ".manifest", "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return _HEADER.size + values.nbytes
