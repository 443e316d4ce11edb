"""Smoke test for the pytopotag extension module.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`,
then run `python crates/python/python/smoke_test.py`.
"""

import json
import math
import os
import sys
import tempfile

import pytopotag


def check_render_and_detect():
    w, h, pixels = pytopotag.render_tag(4, 8390)
    assert len(pixels) == w * h
    dets = pytopotag.detect(pixels, w, h, grids=[4])
    assert len(dets) == 1, dets
    d = dets[0]
    assert (d.family, d.id) == (4, 8390)
    assert d.bits == pytopotag.encode_id(4, 8390)
    assert len(d.vertices) == 16 and len(d.homography) == 9
    assert d.rotation_quat is None and d.translation_m is None
    assert json.loads(d.to_json())["id"] == 8390


def check_blank_and_errors():
    assert pytopotag.detect(bytes([255]) * (320 * 240), 320, 240) == []
    assert pytopotag.capacity(3) == 128
    for bad in (lambda: pytopotag.render_tag(6, 1), lambda: pytopotag.render_tag(3, 128), lambda: pytopotag.detect(b"\0", 2, 2)):
        try:
            bad()
        except ValueError:
            continue
        raise AssertionError("expected ValueError")
    try:
        pytopotag.detect_file("/nonexistent/frame.png")
    except OSError:
        pass
    else:
        raise AssertionError("expected OSError")


def check_synth_pose():
    k = {"fx": 1000.0, "fy": 1000.0, "cx": 640.0, "cy": 480.0}
    tilt = math.radians(30.0)
    scene = {
        "grid_n": 5,
        "id": 12345,
        "pose": {"rotation_quat": [math.cos(tilt / 2), math.sin(tilt / 2), 0.0, 0.0], "translation_m": [0.0, 0.0, 0.4]},
        "intrinsics": k,
        "tag_size": 0.05,
        "width": 1280,
        "height": 960,
        "blur_sigma": 0.7,
        "noise_sigma": 0.01,
        "seed": 3,
    }
    w, h, pixels, gt = pytopotag.synth(json.dumps(scene))
    gt = json.loads(gt)
    dets = pytopotag.detect(pixels, w, h, grids=[5], intrinsics=[k["fx"], k["fy"], k["cx"], k["cy"]], tag_size=0.05)
    assert [d.id for d in dets] == [12345]
    t = dets[0].translation_m
    err = math.dist(t, gt["pose"]["translation_m"])
    assert err < 0.002, err
    for (x, y), (gx, gy) in zip(dets[0].vertices, gt["vertex_pixels"]):
        assert math.hypot(x - gx, y - gy) < 0.5


def check_svg_and_file():
    assert pytopotag.render_svg(3, 42).startswith("<svg")
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "blank.pgm")
        with open(path, "wb") as f:
            f.write(b"P5\n64 64\n255\n" + bytes([200]) * 64 * 64)
        assert pytopotag.detect_file(path) == []


def main():
    for check in (check_render_and_detect, check_blank_and_errors, check_synth_pose, check_svg_and_file):
        check()
        print(f"ok {check.__name__}")
    print("pytopotag smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
