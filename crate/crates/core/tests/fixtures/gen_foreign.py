"""Writes .ply fixtures the way common splat exporters do, independent of the
Rust writer. Re-run to regenerate; outputs are checked in."""
import json
import math
import random
import struct

random.seed(20240611)

BASE = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
        "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]


def splat():
    q = [random.gauss(0, 1) for _ in range(4)]
    return {
        "x": random.uniform(-2, 2), "y": random.uniform(-2, 2), "z": random.uniform(-2, 2),
        "nx": 0.0, "ny": 0.0, "nz": 0.0,
        "f_dc_0": random.uniform(-2, 2), "f_dc_1": random.uniform(-2, 2), "f_dc_2": random.uniform(-2, 2),
        "opacity": random.uniform(-5, 5),
        "scale_0": math.log(random.uniform(0.01, 0.3)),
        "scale_1": math.log(random.uniform(0.01, 0.3)),
        "scale_2": math.log(random.uniform(0.01, 0.3)),
        "rot_0": q[0], "rot_1": q[1], "rot_2": q[2], "rot_3": q[3],
    }


def f32(v):
    return struct.unpack("<f", struct.pack("<f", v))[0]


def write(path, props, rows, comments=()):
    header = ["ply", "format binary_little_endian 1.0"]
    header += [f"comment {c}" for c in comments]
    header.append(f"element vertex {len(rows)}")
    header += [f"property {t} {n}" for n, t in props]
    header.append("end_header")
    body = bytearray()
    for r in rows:
        for n, t in props:
            v = r.get(n, random.uniform(-1, 1))
            body += struct.pack("<d" if t == "double" else "<f", v) if t in ("float", "double") else struct.pack("<B", 7)
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode())
        f.write(body)


rows = [splat() for _ in range(5)]
write("reference17.ply", [(n, "float") for n in BASE], rows, ["generated by gen_foreign.py"])

# Shuffled order, higher-order SH, a double-typed position and a uchar extra.
props = [(n, "float") for n in BASE] + [(f"f_rest_{i}", "float") for i in range(45)] + [("flag", "uchar")]
random.shuffle(props)
props = [(n, "double" if n == "x" else t) for n, t in props]
write("shuffled.ply", props, rows, ["exporter: foreign", "SH degree 3"])

expected = [{
    "position": [f32(r["x"]), f32(r["y"]), f32(r["z"])],
    "x_f64": r["x"],
    "color_dc": [f32(r["f_dc_0"]), f32(r["f_dc_1"]), f32(r["f_dc_2"])],
    "raw_opacity": f32(r["opacity"]),
    "log_scale": [f32(r["scale_0"]), f32(r["scale_1"]), f32(r["scale_2"])],
    "rotation_raw": [f32(r["rot_0"]), f32(r["rot_1"]), f32(r["rot_2"]), f32(r["rot_3"])],
} for r in rows]
with open("foreign_expected.json", "w") as f:
    json.dump(expected, f, indent=1)
