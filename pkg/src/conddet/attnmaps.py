"""Attention-map export: per layer, head, and kind, for one query.

For every decoder layer and each map kind (spatial / content / combined)
two artifacts are written:

* ``layer{L}_{kind}.csv``, one row per head, each row the query's full
  softmax distribution over the key grid (rows sum to 1).
* ``layer{L}_head{H}_{kind}.pgm``, the same distribution folded back to
  the key grid as an 8-bit grayscale image, max-normalized per map.
"""

import os

import numpy as np


def write_pgm(path, grid):
    """Max-normalized 8-bit binary PGM of a 2-d array."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError("PGM needs a 2-d array")
    peak = grid.max()
    scaled = np.zeros_like(grid) if peak <= 0 else grid / peak
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    h, w = grid.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def dump_attention(model, image, query, out_dir):
    """Run the model with map recording and write every map for one query.

    Returns the list of written file paths.
    """
    outputs = model.forward(image, record_maps=True)
    n = model.cfg.num_queries
    if not (0 <= query < n):
        raise ValueError(f"query index {query} outside [0, {n})")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for layer, maps in enumerate(outputs.maps):
        for kind, stack in maps.kinds().items():
            rows = stack[:, query, :]  # (heads, keys)
            csv_path = os.path.join(out_dir, f"layer{layer}_{kind}.csv")
            with open(csv_path, "w", encoding="ascii") as fh:
                for row in rows:
                    # repr of a plain float round-trips the full 64 bits
                    fh.write(",".join(repr(float(v)) for v in row) + "\n")
            written.append(csv_path)
            for head in range(rows.shape[0]):
                pgm_path = os.path.join(out_dir, f"layer{layer}_head{head}_{kind}.pgm")
                write_pgm(pgm_path, rows[head].reshape(maps.grid_h, maps.grid_w))
                written.append(pgm_path)
    return written
