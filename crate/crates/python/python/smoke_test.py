"""Exercises the extension module end to end; exits non-zero on any mismatch."""

import math
import tempfile
from pathlib import Path

import pydeltavox as dv

SCENE = """
seed = 5
n_frames = 4
extent = [40.0, 40.0, 6.0]

[background]
ground_points = 200
buildings = 2
building_points = 50

[[movers]]
category = "CAR"
size = [4.0, 2.0, 1.5]
points = 40
velocity = [6.0, 0.0, 0.0]
position = [4.0, 3.0, 0.0]
yaw = 0.0

[ego]
velocity = [5.0, 0.0, 0.0]
yaw_rate = 0.1
"""


def check_delta():
    grid = dv.VoxelGrid([0.0, 0.0, 0.0], [0.5, 0.5, 0.5], [4, 4, 2], 2)
    cur = dv.SparseTensor(grid, [[0, 0, 0], [1, 2, 1]], [[1.0, 2.0], [3.0, 4.0]])
    past = dv.SparseTensor(grid, [[1, 2, 1], [3, 3, 0]], [[1.0, 1.0], [2.0, 2.0]])
    out = dv.delta(cur, [past], decay=0.5)
    assert out.width == 2 and len(out) == 3
    assert out.to_dense() == dv.dense_delta(cur, [past], decay=0.5)
    rows = dict(zip(map(tuple, out.coords()), out.features()))
    assert rows[(1, 2, 1)] == [2.0, 3.0]
    assert rows[(3, 3, 0)] == [-2.0, -2.0]
    assert dv.VoxelGrid([0.0] * 3, [0.2] * 3, [512, 512, 32], 1).storage_report(29475)[1] == 8388608


def check_sequence(tmp):
    seq = dv.Sequence.synthesize(SCENE)
    assert len(seq) == 4 and seq.gt_flow(3) is None
    manifest = seq.save(Path(tmp) / "seq")
    again = dv.Sequence.load(manifest)
    assert len(again) == len(seq) and again.labels(0) == seq.labels(0)
    zero = seq.evaluate("zero")
    assert abs(zero["bucket_car"] - 1.0) < 1e-9, zero
    assert zero["epe_bs_cm"] == 0.0
    oracle = seq.evaluate("oracle")
    assert oracle["epe_mean_cm"] == 0.0 and oracle["bucket_car"] == 0.0
    assert seq.loss("oracle")["l_total"] == 0.0
    explicit = [seq.gt_flow(k) for k in range(len(seq) - 1)]
    assert seq.evaluate(explicit)["epe_mean_cm"] == 0.0


def check_loss():
    r = dv.frame_loss([[3.2, 4.0, 0.0]], [[0.2, 0.0, 0.0]], [None])
    assert r["l_deflow"] == 5.0 and r["l_total"] == 5.0
    gx, gy, _ = r["gradient"][0]
    assert math.isclose(gx, 0.6) and math.isclose(gy, 0.8)
    ped = dv.frame_loss([[0.2, 1.0, 0.0]], [[0.2, 0.0, 0.0]], [(0, "PED")])
    assert abs(ped["l_category"] - 1.0) < 1e-12


def check_transform():
    t = dv.RigidTransform.from_yaw(math.pi / 2, [1.0, 0.0, 0.0])
    x, y, _ = t.inverse().transform_point(t.transform_point([0.3, -0.2, 0.5]))
    assert abs(x - 0.3) < 1e-12 and abs(y + 0.2) < 1e-12


def main():
    check_delta()
    check_loss()
    check_transform()
    with tempfile.TemporaryDirectory() as tmp:
        check_sequence(tmp)
    print("pydeltavox", dv.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
