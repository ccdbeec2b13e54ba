#!/usr/bin/env python3
"""Regenerate the committed golden fixtures under tests/golden/.

The fixtures freeze the on-disk formats (dump, manifest, profile, AFV
table). test_golden.py rebuilds them from the same seeds and asserts byte
equality, so any unintended format change shows up as a diff here.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from afvkit import baseline, dataset_ops, latent_io, synth
from afvkit.features import FeatureToggles, extract_matrix

OUT = os.path.join(os.path.dirname(__file__), "..", "tests", "golden")


def build():
    spec = synth.SynthSpec(
        channels=2,
        height=2,
        width=2,
        n_per_class=3,
        families=[synth.FamilySpec("meanshift_1p0", "mean_shift", 1.0)],
        seed=20260810,
    )
    ds = synth.generate(spec)
    ref = synth.generate_reference(spec, 12)
    profile = baseline.fit_profile(ref)
    values, layout = extract_matrix(ds, profile, FeatureToggles())
    table = dataset_ops.AfvTable(values, ds.labels, ds.attack_success, layout,
                                 dict(ds.class_names))
    table = dataset_ops.split(table, 0.7, seed=1)
    return ds, profile, table


def main():
    os.makedirs(OUT, exist_ok=True)
    ds, profile, table = build()
    latent_io.write_dump(ds, os.path.join(OUT, "golden.afvl"))
    baseline.save_profile(profile, os.path.join(OUT, "golden_profile.txt"))
    dataset_ops.save_table(table, os.path.join(OUT, "golden_table.csv"))
    print(f"wrote golden fixtures to {OUT}")


if __name__ == "__main__":
    main()
