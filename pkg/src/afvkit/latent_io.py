"""Binary latent-dump format and dataset manifest.

A dump file carries the flattened hidden-layer values of a batch of samples
as raw little-endian float32, preceded by a fixed 23-byte header. Labels,
attack-success flags and class names live in a text manifest sidecar
(``<dump>.manifest``) so the binary payload stays pure numbers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"AFVL"
FORMAT_VERSION = 1
DTYPE_F32LE = 0

_HEADER = struct.Struct("<4sHIIIIB")  # magic, version, n, C, H, W, dtype
HEADER_SIZE = _HEADER.size


class DumpFormatError(ValueError):
    """Malformed dump or manifest file."""


@dataclass
class LatentTensor:
    """One sample's flattened hidden-layer values with channel layout.

    ``values`` is row-major over (channels, height, width); the channel of
    flat index k is ``k // (height * width)``. Stored as float32 so that
    dump round-trips are bit-exact.
    """

    values: np.ndarray
    channels: int
    height: int
    width: int

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32).ravel()
        if self.channels < 1 or self.height < 1 or self.width < 1:
            raise ValueError("shape dimensions must be positive")
        if self.values.size != self.channels * self.height * self.width:
            raise ValueError(
                f"value count {self.values.size} != C*H*W = "
                f"{self.channels * self.height * self.width}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("latent values must be finite")

    @property
    def length(self) -> int:
        return self.values.size

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


@dataclass
class LatentDataset:
    """Ordered collection of same-shape latent tensors with per-sample labels.

    Label 0 is the clean/natural class. ``attack_success`` records whether the
    perturbation actually flipped the protected model's prediction; it is True
    by convention for clean samples.
    """

    samples: list[LatentTensor]
    labels: np.ndarray
    attack_success: np.ndarray
    class_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.attack_success = np.asarray(self.attack_success, dtype=bool)
        n = len(self.samples)
        if self.labels.shape != (n,) or self.attack_success.shape != (n,):
            raise ValueError("labels/attack_success length must match samples")
        if n > 0:
            shape = self.samples[0].shape
            for i, s in enumerate(self.samples):
                if s.shape != shape:
                    raise ValueError(f"sample {i} shape {s.shape} != {shape}")
        for lab in np.unique(self.labels):
            if int(lab) not in self.class_names:
                raise ValueError(f"label {int(lab)} has no class_name entry")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def shape(self) -> tuple[int, int, int]:
        if not self.samples:
            raise ValueError("empty dataset has no shape")
        return self.samples[0].shape

    def stack(self) -> np.ndarray:
        """All samples as one (n, L) float32 matrix."""
        return np.stack([s.values for s in self.samples])

    def select(self, mask: np.ndarray) -> "LatentDataset":
        idx = np.flatnonzero(mask)
        return LatentDataset(
            samples=[self.samples[i] for i in idx],
            labels=self.labels[idx],
            attack_success=self.attack_success[idx],
            class_names=dict(self.class_names),
        )


def manifest_path(dump_path: str) -> str:
    return str(dump_path) + ".manifest"


def write_dump(dataset: LatentDataset, path: str) -> int:
    """Write a dataset as header + f32 payload, plus the manifest sidecar.

    Returns the number of bytes written to the binary dump.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    c, h, w = dataset.shape
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, len(dataset), c, h, w, DTYPE_F32LE)
    payload = dataset.stack().astype("<f4", copy=False)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())
    _write_manifest(dataset, manifest_path(path))
    return HEADER_SIZE + payload.nbytes


def _write_manifest(dataset: LatentDataset, path: str) -> None:
    lines = [
        "format afv-latent-manifest",
        f"version {FORMAT_VERSION}",
        f"n_samples {len(dataset)}",
    ]
    for label in sorted(dataset.class_names):
        lines.append(f"class {label} {dataset.class_names[label]}")
    for i in range(len(dataset)):
        ok = 1 if dataset.attack_success[i] else 0
        lines.append(f"sample {i} {int(dataset.labels[i])} {ok}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _read_manifest(path: str, n_expected: int):
    class_names: dict[int, str] = {}
    labels = np.zeros(n_expected, dtype=np.int64)
    success = np.zeros(n_expected, dtype=bool)
    seen = np.zeros(n_expected, dtype=bool)
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise DumpFormatError(f"missing manifest: {e}") from e
    n_declared = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 2)
        key = parts[0]
        if key == "format":
            if parts[1] != "afv-latent-manifest":
                raise DumpFormatError(f"manifest line {lineno}: unknown format")
        elif key == "version":
            if int(parts[1]) != FORMAT_VERSION:
                raise DumpFormatError(f"manifest line {lineno}: unsupported version")
        elif key == "n_samples":
            n_declared = int(parts[1])
        elif key == "class":
            class_names[int(parts[1])] = parts[2]
        elif key == "sample":
            idx_s, rest = parts[1], parts[2].split()
            idx = int(idx_s)
            if not 0 <= idx < n_expected:
                raise DumpFormatError(f"manifest line {lineno}: sample index out of range")
            labels[idx] = int(rest[0])
            success[idx] = rest[1] == "1"
            seen[idx] = True
        else:
            raise DumpFormatError(f"manifest line {lineno}: unknown record {key!r}")
    if n_declared != n_expected:
        raise DumpFormatError(
            f"manifest/sample-count mismatch: manifest says {n_declared}, dump holds {n_expected}"
        )
    if not seen.all():
        raise DumpFormatError("manifest missing per-sample records")
    return labels, success, class_names


def read_dump(path: str) -> LatentDataset:
    """Read a dump + manifest back into a LatentDataset (bit-exact values)."""
    with open(path, "rb") as f:
        head = f.read(HEADER_SIZE)
        if len(head) < HEADER_SIZE:
            raise DumpFormatError("truncated header")
        magic, version, n, c, h, w, dtype_code = _HEADER.unpack(head)
        if magic != MAGIC:
            raise DumpFormatError("bad magic")
        if version != FORMAT_VERSION:
            raise DumpFormatError(f"unsupported version {version}")
        if dtype_code != DTYPE_F32LE:
            raise DumpFormatError(f"unknown dtype code {dtype_code}")
        length = c * h * w
        payload = f.read(n * length * 4)
    if len(payload) < n * length * 4:
        raise DumpFormatError("truncated payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(n, length)
    labels, success, class_names = _read_manifest(manifest_path(path), n)
    samples = [LatentTensor(values[i].copy(), c, h, w) for i in range(n)]
    return LatentDataset(samples, labels, success, class_names)
