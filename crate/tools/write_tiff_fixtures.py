#!/usr/bin/env python3
"""Independent GeoTIFF writer used as a decoding oracle.

Writes single-band classic TIFFs with struct and zlib only, and a JSON
sidecar per file listing the expected samples. Float samples are listed as
IEEE-754 bit patterns, int16 samples as integers.

    python3 tools/write_tiff_fixtures.py OUT_DIR
    python3 tools/write_tiff_fixtures.py --testville PATH
"""

import argparse
import json
import math
import random
import struct
import zlib
from pathlib import Path

SHORT, LONG, DOUBLE, ASCII = 3, 4, 12, 2
TYPE_SIZE = {SHORT: 2, LONG: 4, DOUBLE: 8, ASCII: 1}
TYPE_CODE = {SHORT: "H", LONG: "I", DOUBLE: "d"}


def pack_samples(values, sample, order):
    code = "f" if sample == "f32" else "h"
    return struct.pack(order + code * len(values), *values)


def horizontal_diff(rows, width):
    """Predictor 2 applied to int16 rows (wrapping arithmetic)."""
    out = []
    for row in rows:
        prev = 0
        for i, v in enumerate(row):
            d = v if i == 0 else v - prev
            d = (d + 32768) % 65536 - 32768
            out.append(d)
            prev = v
    return out


def chunks(values, width, height, layout, block):
    """Yields row-major sample lists per strip or padded tile."""
    if layout == "strips":
        for r0 in range(0, height, block[0]):
            rows = [values[r * width:(r + 1) * width] for r in range(r0, min(height, r0 + block[0]))]
            yield rows, width
    else:
        th, tw = block
        for r0 in range(0, height, th):
            for c0 in range(0, width, tw):
                rows = []
                for r in range(r0, r0 + th):
                    row = []
                    for c in range(c0, c0 + tw):
                        row.append(values[r * width + c] if r < height and c < width else 0)
                    rows.append(row)
                yield rows, tw


def write_tiff(path, *, width, height, sample, values, order="<", layout="strips",
               block=(2, None), compression=1, predictor=1, nodata=None,
               scale=(0.001, 0.001), tie=(10.0, 60.0)):
    payloads = []
    for rows, row_width in chunks(values, width, height, layout, block):
        flat = horizontal_diff(rows, row_width) if predictor == 2 else [v for r in rows for v in r]
        raw = pack_samples(flat, sample, order)
        payloads.append(zlib.compress(raw, 6) if compression == 8 else raw)

    tags = {
        256: (LONG, [width]),
        257: (LONG, [height]),
        258: (SHORT, [32 if sample == "f32" else 16]),
        259: (SHORT, [compression]),
        262: (SHORT, [1]),
        277: (SHORT, [1]),
        284: (SHORT, [1]),
        339: (SHORT, [3 if sample == "f32" else 2]),
        33550: (DOUBLE, [scale[0], scale[1], 0.0]),
        33922: (DOUBLE, [0.0, 0.0, 0.0, tie[0], tie[1], 0.0]),
    }
    if predictor != 1:
        tags[317] = (SHORT, [predictor])
    if nodata is not None:
        tags[42113] = (ASCII, nodata.encode() + b"\0")

    # Layout: header, pixel data, out-of-line tag values, IFD.
    data = bytearray(struct.pack(order + "2sHI", b"II" if order == "<" else b"MM", 42, 0))
    offsets = []
    for p in payloads:
        offsets.append(len(data))
        data += p
        if len(data) % 2:
            data += b"\0"
    counts = [len(p) for p in payloads]
    if layout == "strips":
        tags[273] = (LONG, offsets)
        tags[278] = (LONG, [block[0]])
        tags[279] = (LONG, counts)
    else:
        tags[322] = (LONG, [block[1]])
        tags[323] = (LONG, [block[0]])
        tags[324] = (LONG, offsets)
        tags[325] = (LONG, counts)

    entries = []
    for tag in sorted(tags):
        typ, val = tags[tag]
        if typ == ASCII:
            blob, count = bytes(val), len(val)
        else:
            blob, count = struct.pack(order + TYPE_CODE[typ] * len(val), *val), len(val)
        if len(blob) <= 4:
            field = blob.ljust(4, b"\0")
        else:
            field = struct.pack(order + "I", len(data))
            data += blob
            if len(data) % 2:
                data += b"\0"
        entries.append(struct.pack(order + "HHI", tag, typ, count) + field)

    ifd_offset = len(data)
    data += struct.pack(order + "H", len(entries)) + b"".join(entries) + struct.pack(order + "I", 0)
    data[4:8] = struct.pack(order + "I", ifd_offset)
    Path(path).write_bytes(bytes(data))

    nd = float(nodata) if nodata is not None else None
    if sample == "f32":
        expected = [struct.unpack("<I", struct.pack("<f", v))[0] for v in values]
        as_f32 = [struct.unpack("<f", struct.pack("<f", v))[0] for v in values]
    else:
        expected = list(values)
        as_f32 = [float(v) for v in values]
    mask = [math.isnan(v) or (nd is not None and v == nd) for v in as_f32]
    sidecar = {
        "width": width,
        "height": height,
        "sample": sample,
        "nodata": nodata,
        "expected": expected,
        "nodata_mask": mask,
        "lon0": tie[0] + scale[0] / 2,
        "lat0": tie[1] - scale[1] / 2,
        "dlon": scale[0],
        "dlat": scale[1],
    }
    Path(path).with_suffix(".json").write_text(json.dumps(sidecar))


def f32_values(rng, n, nodata):
    vals = []
    for i in range(n):
        roll = rng.random()
        if nodata is not None and roll < 0.1:
            vals.append(nodata)
        elif roll < 0.12:
            vals.append(float("nan"))
        elif roll < 0.14:
            vals.append(-0.0)
        elif roll < 0.16:
            vals.append(1e-40)
        else:
            vals.append(struct.unpack("<f", struct.pack("<f", rng.uniform(-500.0, 9000.0)))[0])
    return vals


def i16_values(rng, n, nodata):
    vals = []
    for _ in range(n):
        if nodata is not None and rng.random() < 0.1:
            vals.append(nodata)
        else:
            vals.append(rng.choice([-32767, 32767, 0]) if rng.random() < 0.05 else rng.randint(-400, 4000))
    return vals


CASES = [
    # name, order, sample, layout, block, compression, predictor, nodata, width, height
    ("le_strip_none_f32", "<", "f32", "strips", (2, None), 1, 1, "-9999", 7, 5),
    ("be_strip_none_f32", ">", "f32", "strips", (3, None), 1, 1, "-9999", 9, 8),
    ("le_strip_deflate_f32", "<", "f32", "strips", (4, None), 8, 1, "-3.4028234663852886e+38", 13, 11),
    ("be_strip_deflate_i16", ">", "i16", "strips", (1, None), 8, 1, "-32768", 6, 4),
    ("le_strip_none_i16", "<", "i16", "strips", (5, None), 1, 1, None, 10, 12),
    ("le_strip_deflate_i16_pred2", "<", "i16", "strips", (2, None), 8, 2, "-32768", 11, 7),
    ("be_strip_deflate_i16_pred2", ">", "i16", "strips", (3, None), 8, 2, None, 5, 9),
    ("le_tile_deflate_f32", "<", "f32", "tiles", (16, 16), 8, 1, None, 20, 18),
    ("be_tile_none_i16", ">", "i16", "tiles", (16, 16), 1, 1, "-32768", 17, 33),
    ("le_tile_none_f32", "<", "f32", "tiles", (16, 32), 1, 1, "0", 40, 16),
    ("be_tile_deflate_f32", ">", "f32", "tiles", (32, 16), 8, 1, "-9999", 33, 35),
]


def write_cases(out):
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20240611)
    for name, order, sample, layout, block, comp, pred, nodata, w, h in CASES:
        nd = None if nodata is None else (float(nodata) if sample == "f32" else int(nodata))
        gen = f32_values if sample == "f32" else i16_values
        values = gen(rng, w * h, nd)
        write_tiff(out / f"{name}.tif", width=w, height=h, sample=sample, values=values, order=order,
                   layout=layout, block=block, compression=comp, predictor=pred, nodata=nodata,
                   scale=(0.00027777777777777778, 0.00027777777777777778), tie=(-3.05, 59.17))


def write_testville(path):
    """4x4 float32 DEM, pixel centers on a 0.001 degree lattice from
    (10.000, 59.903) to (10.003, 59.900); z = 100 + 2*col + 3*row."""
    values = [100.0 + 2 * c + 3 * r for r in range(4) for c in range(4)]
    write_tiff(path, width=4, height=4, sample="f32", values=values, order="<", layout="strips",
               block=(2, None), compression=8, nodata="-9999", scale=(0.001, 0.001), tie=(9.9995, 59.9035))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", nargs="?", type=Path)
    ap.add_argument("--testville", type=Path)
    args = ap.parse_args()
    if args.out:
        write_cases(args.out)
    if args.testville:
        write_testville(args.testville)
    if not args.out and not args.testville:
        ap.error("nothing to do")


if __name__ == "__main__":
    main()
