#!/usr/bin/env python3
"""Convert the Indian Pines MAT files into esmhc cube and label containers.

    python3 scripts/convert_indian_pines.py \
        Indian_pines_corrected.mat Indian_pines_gt.mat wavelengths.txt out/

wavelengths.txt holds one value in nm per retained band (200 for the
corrected cube), whitespace or comma separated. Writes
out/indian_pines.hsi and out/indian_pines_gt.lbl.
"""

import argparse
import re
import struct
import sys
from pathlib import Path

import numpy as np
from scipy.io import loadmat

CUBE_MAGIC = b"HSICUBE1"
LABEL_MAGIC = b"HSILBL01"


def only_array(mat_path):
    data = loadmat(mat_path)
    arrays = {k: v for k, v in data.items() if not k.startswith("__")}
    if len(arrays) != 1:
        raise SystemExit(f"{mat_path}: expected one variable, found {sorted(arrays)}")
    return next(iter(arrays.values()))


def read_wavelengths(path):
    tokens = [t for t in re.split(r"[\s,]+", Path(path).read_text()) if t]
    return np.array([float(t) for t in tokens], dtype="<f8")


def write_cube(path, cube, wavelengths):
    h, w, c = cube.shape
    with open(path, "wb") as f:
        f.write(CUBE_MAGIC)
        f.write(struct.pack("<3I", h, w, c))
        f.write(wavelengths.astype("<f8").tobytes())
        # band-interleaved-by-pixel, row-major over (row, col, band)
        f.write(np.ascontiguousarray(cube, dtype="<f4").tobytes())


def write_labels(path, labels):
    h, w = labels.shape
    k = int(labels.max())
    with open(path, "wb") as f:
        f.write(LABEL_MAGIC)
        f.write(struct.pack("<3I", h, w, k))
        f.write(np.ascontiguousarray(labels, dtype="<u2").tobytes())
    return k


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("cube_mat")
    p.add_argument("gt_mat")
    p.add_argument("wavelengths")
    p.add_argument("out_dir")
    args = p.parse_args(argv)

    cube = only_array(args.cube_mat).astype(np.float32)
    labels = only_array(args.gt_mat)
    wl = read_wavelengths(args.wavelengths)
    if cube.ndim != 3:
        raise SystemExit(f"cube must be H x W x C, got shape {cube.shape}")
    if labels.shape != cube.shape[:2]:
        raise SystemExit(f"labels {labels.shape} do not match cube {cube.shape[:2]}")
    if wl.size != cube.shape[2]:
        raise SystemExit(f"{wl.size} wavelengths for {cube.shape[2]} bands")
    if labels.min() < 0 or labels.max() > 0xFFFF:
        raise SystemExit("labels must fit in u16")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_cube(out / "indian_pines.hsi", cube, wl)
    k = write_labels(out / "indian_pines_gt.lbl", labels.astype(np.int64))
    h, w, c = cube.shape
    print(f"{h}x{w}x{c} cube, {k} classes, {int((labels > 0).sum())} labeled pixels -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
