"""Regenerate the binary and derived fixtures under tests/fixtures.

Needs pyproj, piexif and Pillow. Outputs are committed; tests never run this.

    python3 crates/core/tests/oracles/make_fixtures.py
"""

import io
import json
import math
import os

import piexif
from PIL import Image
from pyproj import Geod, Proj

HERE = os.path.dirname(os.path.abspath(__file__))
FIX = os.path.join(HERE, "..", "fixtures")
E2E = os.path.join(FIX, "e2e")

GEOD = Geod(ellps="WGS84")


def write(path, data, mode="w"):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, mode) as f:
        f.write(data)


# --- EXIF: two independent writers, both byte orders -----------------------

def gradient(w, h, seed):
    img = Image.new("RGB", (w, h))
    px = img.load()
    for y in range(h):
        for x in range(w):
            px[x, y] = ((x * 4 + seed) % 256, (y * 5 + seed * 3) % 256, (x + y + seed * 7) % 256)
    return img


def piexif_fixture():
    exif = {
        "0th": {piexif.ImageIFD.Orientation: 1, piexif.ImageIFD.Make: b"FixtureCam"},
        "Exif": {
            piexif.ExifIFD.DateTimeOriginal: b"2024:05:01 10:00:00",
            piexif.ExifIFD.OffsetTimeOriginal: b"+01:00",
            piexif.ExifIFD.FocalLengthIn35mmFilm: 28,
            piexif.ExifIFD.PixelXDimension: 64,
            piexif.ExifIFD.PixelYDimension: 48,
        },
        "GPS": {
            piexif.GPSIFD.GPSLatitudeRef: b"N",
            piexif.GPSIFD.GPSLatitude: ((51, 1), (24, 1), (0, 1)),
            piexif.GPSIFD.GPSLongitudeRef: b"W",
            piexif.GPSIFD.GPSLongitude: ((0, 1), (12, 1), (0, 1)),
            piexif.GPSIFD.GPSAltitudeRef: 0,
            piexif.GPSIFD.GPSAltitude: (35, 1),
            piexif.GPSIFD.GPSImgDirectionRef: b"T",
            piexif.GPSIFD.GPSImgDirection: (1235, 10),
        },
    }
    buf = io.BytesIO()
    gradient(64, 48, 1).save(buf, "JPEG", quality=80, exif=piexif.dump(exif))
    write(os.path.join(FIX, "exif_piexif.jpg"), buf.getvalue(), "wb")


def pillow_fixture():
    # Pillow's writer, set to little-endian TIFF.
    exif = Image.Exif()
    exif.endian = "<"
    exif[0x0112] = 6  # Orientation: rotated 90° CW
    gps = exif.get_ifd(0x8825)
    gps[1] = "S"
    gps[2] = (33.0, 52.0, 7.5)
    gps[3] = "E"
    gps[4] = (151.0, 12.0, 36.0)
    ex = exif.get_ifd(0x8769)
    ex[0x9003] = "2023:12:24 18:30:05"
    ex[0x920A] = 4.25  # FocalLength, no 35 mm equivalent
    buf = io.BytesIO()
    gradient(40, 30, 2).save(buf, "JPEG", quality=80, exif=exif.tobytes())
    write(os.path.join(FIX, "exif_pillow_le.jpg"), buf.getvalue(), "wb")


# --- Overpass fixture -------------------------------------------------------

ORIGIN = (51.5010, -0.1250)
M_LAT = 1 / 111_250.0
M_LON = 1 / (111_320.0 * math.cos(math.radians(ORIGIN[0])))


def ll(x, y):
    return round(ORIGIN[0] + y * M_LAT, 7), round(ORIGIN[1] + x * M_LON, 7)


def way_geom(wid, pts, tags):
    ring = [ll(x, y) for x, y in pts]
    ring.append(ring[0])
    lats = [p[0] for p in ring]
    lons = [p[1] for p in ring]
    return {
        "type": "way",
        "id": wid,
        "bounds": {"minlat": min(lats), "minlon": min(lons), "maxlat": max(lats), "maxlon": max(lons)},
        "nodes": [wid * 10 + i for i in range(len(ring) - 1)] + [wid * 10],
        "geometry": [{"lat": a, "lon": b} for a, b in ring],
        "tags": tags,
    }


def overpass_fixture():
    elements = [
        way_geom(201, [(-60, 40), (-45, 40), (-45, 52), (-60, 52)], {"building": "yes", "height": "12.5 m"}),
        way_geom(202, [(-40, 40), (-20, 40), (-20, 48), (-30, 48), (-30, 58), (-40, 58)],
                 {"building": "house", "building:levels": "4", "name": "Corner House"}),
        way_geom(203, [(-15, 40), (0, 42), (-3, 55)], {"building": "shed"}),
        # Highway: open way, not a building.
        {"type": "way", "id": 204, "nodes": [1, 2, 3],
         "geometry": [{"lat": 51.5013, "lon": -0.1260}, {"lat": 51.5014, "lon": -0.1255},
                      {"lat": 51.5015, "lon": -0.1251}],
         "tags": {"highway": "residential"}},
        # Closed but explicitly not a building.
        way_geom(205, [(10, 40), (20, 40), (20, 50)], {"building": "no", "amenity": "parking"}),
        # Building with only two distinct vertices: skipped with a warning.
        {"type": "way", "id": 206, "nodes": [7, 8, 7],
         "geometry": [{"lat": 51.5016, "lon": -0.1240}, {"lat": 51.5017, "lon": -0.1240},
                      {"lat": 51.5016, "lon": -0.1240}],
         "tags": {"building": "yes"}},
        {"type": "relation", "id": 207, "members": [], "tags": {"type": "multipolygon", "building": "yes"}},
    ]
    doc = {
        "version": 0.6,
        "generator": "Overpass API 0.7.62 (hand-assembled fixture)",
        "osm3s": {"timestamp_osm_base": "2024-05-01T00:00:00Z"},
        "elements": elements,
    }
    write(os.path.join(FIX, "overpass_fixture.json"), json.dumps(doc, indent=1) + "\n")
    return [e for e in elements if e["id"] in (201, 202, 203)]


# --- End-to-end scene fixture ----------------------------------------------

E2E_BUILDINGS = [
    (1001, [(-30, 10), (-10, 10), (-10, 25), (-30, 25)], {"building": "yes", "height": "12 m"}),
    (1002, [(0, 10), (20, 10), (20, 20), (10, 20), (10, 30), (0, 30)], {"building": "yes", "building:levels": "4"}),
    (1003, [(25, 15), (40, 15), (40, 30), (25, 30)], {"building": "retail"}),
]


def e2e_fixture():
    ways = [way_geom(i, pts, tags) for i, pts, tags in E2E_BUILDINGS]
    write(os.path.join(E2E, "osm.json"), json.dumps({"version": 0.6, "elements": ways}, indent=1) + "\n")

    # Terrain: 13 × 10 nodes at 10 m in UTM 30N, gentle slope, one NODATA corner.
    utm = Proj(proj="utm", zone=30, ellps="WGS84")
    e0, n0 = utm(ORIGIN[1], ORIGIN[0])
    x0 = math.floor(e0 / 10) * 10 - 60
    y0 = math.floor(n0 / 10) * 10 - 40
    ncols, nrows = 13, 10
    rows = []
    for r in range(nrows):
        y = (nrows - 1 - r) * 10
        vals = []
        for c in range(ncols):
            if r == 0 and c == ncols - 1:
                vals.append("-9999")
            else:
                vals.append(f"{20 + 0.04 * c * 10 + 0.02 * y:.2f}")
        rows.append(" ".join(vals))
    asc = (
        f"ncols {ncols}\nnrows {nrows}\nxllcenter {x0}\nyllcenter {y0}\n"
        f"cellsize 10\nNODATA_value -9999\n" + "\n".join(rows) + "\n"
    )
    write(os.path.join(E2E, "terrain.asc"), asc)

    images = [
        ("img_a", (-15, -20), 10.0, "2024-05-01T10:00:00Z", 28.0, 11),
        ("img_b", (15, -25), 350.0, "2024-05-01T10:05:00Z", 26.0, 23),
    ]
    for name, (x, y), heading, ts, f35, seed in images:
        buf = io.BytesIO()
        gradient(640, 480, seed).save(buf, "JPEG", quality=70)
        write(os.path.join(E2E, f"{name}.jpg"), buf.getvalue(), "wb")
        lat, lon = ll(x, y)
        side = {"schema_version": 1, "lat": lat, "lon": lon, "heading": heading, "timestamp": ts, "focal35": f35}
        write(os.path.join(E2E, f"{name}.json"), json.dumps(side, indent=1) + "\n")

    dets = {
        "schema_version": 1,
        "detections": [
            {"image_id": "img_a", "class_label": "person", "confidence": 0.91,
             "bbox": [300.0, 250.0, 40.0, 110.0], "identity": "p1"},
            {"image_id": "img_b", "class_label": "person", "confidence": 0.87,
             "bbox": [350.0, 240.0, 36.0, 100.0], "identity": "p1"},
            {"image_id": "img_b", "class_label": "kite", "confidence": 0.55,
             "bbox": [100.0, 10.0, 30.0, 14.0]},
        ],
    }
    write(os.path.join(E2E, "detections.json"), json.dumps(dets, indent=1) + "\n")
    return ways


# --- Geodesic perimeters ----------------------------------------------------

def perimeters(ways):
    out = []
    for w in ways:
        lats = [p["lat"] for p in w["geometry"]]
        lons = [p["lon"] for p in w["geometry"]]
        out.append({"osm_id": w["id"], "perimeter_m": GEOD.line_length(lons, lats)})
    write(os.path.join(FIX, "perimeter_oracle.json"), json.dumps(out, indent=1) + "\n")


if __name__ == "__main__":
    piexif_fixture()
    pillow_fixture()
    ways = overpass_fixture() + e2e_fixture()
    perimeters(ways)
