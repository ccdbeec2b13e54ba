"""Byte-stability of the on-disk formats against committed golden fixtures.

tools/make_golden.py created the files under tests/golden/ once; here the
same seeds must reproduce them bit-for-bit and the committed bytes must
parse back into equal objects.
"""

import sys
from pathlib import Path

import numpy as np

from afvkit import baseline, dataset_ops, latent_io

GOLDEN = Path(__file__).parent / "golden"
sys.path.insert(0, str(Path(__file__).parents[1] / "tools"))

from make_golden import build  # noqa: E402


def test_golden_dump_reproduces_bit_for_bit(tmp_path):
    ds, _, _ = build()
    latent_io.write_dump(ds, str(tmp_path / "fresh.afvl"))
    assert (tmp_path / "fresh.afvl").read_bytes() == (GOLDEN / "golden.afvl").read_bytes()
    assert (
        (tmp_path / "fresh.afvl.manifest").read_bytes()
        == (GOLDEN / "golden.afvl.manifest").read_bytes()
    )


def test_golden_profile_and_table_reproduce(tmp_path):
    _, profile, table = build()
    baseline.save_profile(profile, str(tmp_path / "p.txt"))
    assert (tmp_path / "p.txt").read_bytes() == (GOLDEN / "golden_profile.txt").read_bytes()
    dataset_ops.save_table(table, str(tmp_path / "t.csv"))
    assert (tmp_path / "t.csv").read_bytes() == (GOLDEN / "golden_table.csv").read_bytes()


def test_golden_dump_parses():
    ds = latent_io.read_dump(str(GOLDEN / "golden.afvl"))
    assert len(ds) == 6
    assert ds.shape == (2, 2, 2)
    assert ds.class_names == {0: "clean", 1: "meanshift_1p0"}
    assert np.array_equal(np.unique(ds.labels), [0, 1])


def test_golden_profile_parses():
    profile = baseline.load_profile(str(GOLDEN / "golden_profile.txt"))
    assert profile.shape == (2, 2, 2)
    assert profile.d_count == 12
    assert profile.normative_hist.sum() == profile.length


def test_golden_table_parses():
    table = dataset_ops.load_table(str(GOLDEN / "golden_table.csv"))
    assert len(table) == 6
    assert len(table.layout) == 132
    assert set(np.unique(table.split)) == {"train", "test"}
