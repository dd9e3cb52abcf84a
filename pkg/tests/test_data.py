import numpy as np
import pytest
from scipy.spatial.distance import pdist

from pcsep import dsp
from pcsep.data import (
    AugmentParams,
    Dataset,
    ManifestRow,
    augment_colors,
    augment_coords,
    check_disjoint,
    make_synthetic,
    preprocess_frame,
    read_manifest,
    sample_training_item,
    split_identities,
    write_manifest,
)
from pcsep.data.augment import (
    GAIN_RANGE,
    ROT_AXIS_RANGE,
    SATURATION_RANGE,
    SCALE_RANGE,
    VALUE_RANGE,
    rotation_matrix,
)
from pcsep.data.dataset import frame_indices
from pcsep.data.manifest import split_counts
from pcsep.errors import DataError, EmptyInputError
from pcsep.sparse import PointCloudFrame, voxelize
from pcsep.vision import SparseResNet18, VisionConfig


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    manifest = make_synthetic(root, seed=3, identities=8, seconds=7.0, n_frames=4, n_points=200)
    return manifest, Dataset.from_manifest(manifest)


def cloud(rng, n=50, colors=True):
    return PointCloudFrame(rng.normal(size=(n, 3)) * [1, 2, 0.5] + 3,
                           rng.uniform(size=(n, 3)) if colors else None)


# ---------------------------------------------------------------- preprocessing


def test_preprocess_example():
    out = preprocess_frame(PointCloudFrame(np.array([[0.0, 0, 0], [2, 0, 0]])))
    np.testing.assert_array_equal(out.coordinates, [[-1, 0, 0], [1, 0, 0]])


def test_preprocess_scale_contract_and_idempotence():
    rng = np.random.default_rng(0)
    out = preprocess_frame(cloud(rng))
    assert np.abs(out.coordinates).max() == 1.0
    np.testing.assert_allclose(out.coordinates.mean(axis=0), 0, atol=1e-12)
    again = preprocess_frame(out)
    np.testing.assert_allclose(again.coordinates, out.coordinates, atol=1e-12)


def test_preprocess_axis_convention():
    pts = np.array([[1.0, 2, 3], [-1, -2, -3]])
    out = preprocess_frame(PointCloudFrame(pts), axes=(2, 0, 1), signs=(1, -1, 1))
    np.testing.assert_allclose(out.coordinates, [[1, -1 / 3, 2 / 3], [-1, 1 / 3, -2 / 3]])
    with pytest.raises(DataError):
        preprocess_frame(PointCloudFrame(pts), axes=(0, 0, 1))


def test_preprocess_degenerate():
    with pytest.raises(DataError, match="coincide"):
        preprocess_frame(PointCloudFrame(np.ones((5, 3))))
    with pytest.raises(EmptyInputError):
        preprocess_frame(PointCloudFrame(np.zeros((0, 3))))


# ---------------------------------------------------------------- augmentation


def test_identity_params_leave_frame_unchanged():
    rng = np.random.default_rng(1)
    f = preprocess_frame(cloud(rng))
    p = AugmentParams.identity()
    out = augment_colors(augment_coords(f, p), p)
    np.testing.assert_allclose(out.coordinates, f.coordinates, atol=1e-15)
    np.testing.assert_allclose(out.colors, f.colors, atol=1e-12)


@pytest.mark.parametrize("angle", [0.3, -2.5, np.pi])
def test_y_rotation_is_isometry(angle):
    f = preprocess_frame(cloud(np.random.default_rng(2)))
    out = augment_coords(f, AugmentParams(rotation_y=angle))
    np.testing.assert_allclose(pdist(out.coordinates), pdist(f.coordinates), atol=1e-9)
    np.testing.assert_allclose(out.coordinates[:, 1], f.coordinates[:, 1], atol=1e-15)


@pytest.mark.parametrize("scale", [0.5, 1.2, 1.5])
def test_scale_multiplies_distances(scale):
    f = preprocess_frame(cloud(np.random.default_rng(3)))
    out = augment_coords(f, AugmentParams(scale=scale))
    np.testing.assert_allclose(pdist(out.coordinates), scale * pdist(f.coordinates), rtol=1e-12)


def test_axis_rotation_orthonormal():
    r = rotation_matrix(np.array([1.0, 2.0, -0.5]), 0.4)
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-15)
    assert np.linalg.det(r) == pytest.approx(1.0)


def test_translation_and_shear_order():
    f = PointCloudFrame(np.array([[1.0, 0, 0], [0, 1, 0]]))
    p = AugmentParams(shear=np.array([0, 0, 0.5, 0, 0, 0]), translation=np.array([0, 0, 2.0]))
    # shear adds 0.5*x to y, then translation shifts z
    np.testing.assert_allclose(augment_coords(f, p).coordinates, [[1, 0.5, 2], [0, 1, 2]])


def test_saturation_floor_gives_gray():
    f = cloud(np.random.default_rng(4))
    out = augment_colors(f, AugmentParams(saturation_shift=-1.0))
    np.testing.assert_allclose(out.colors[:, 0], out.colors[:, 1], atol=1e-12)
    np.testing.assert_allclose(out.colors[:, 1], out.colors[:, 2], atol=1e-12)


def test_color_noise_clamped():
    f = cloud(np.random.default_rng(5))
    out = augment_colors(f, AugmentParams(rgb_noise_std=0.5, value_shift=0.2, noise_seed=9))
    assert out.colors.min() >= 0 and out.colors.max() <= 1
    with pytest.raises(EmptyInputError):
        augment_colors(cloud(np.random.default_rng(5), colors=False), AugmentParams())


def test_parameter_supports_statistical():
    rng = np.random.default_rng(6)
    draws = [AugmentParams.sample(rng) for _ in range(10_000)]

    def arr(name):
        return np.array([getattr(d, name) for d in draws])

    for name, lo, hi in [("rotation_y", -np.pi, np.pi), ("axis_angle", -ROT_AXIS_RANGE, ROT_AXIS_RANGE),
                         ("scale", *SCALE_RANGE), ("value_shift", -VALUE_RANGE, VALUE_RANGE),
                         ("saturation_shift", -SATURATION_RANGE, SATURATION_RANGE), ("gain", *GAIN_RANGE)]:
        a = arr(name)
        assert a.min() >= lo and a.max() <= hi, name
        # uniform: mean and spread close to the support's
        assert abs(a.mean() - (lo + hi) / 2) < 0.05 * (hi - lo), name
        assert abs(a.std() - (hi - lo) / np.sqrt(12)) < 0.02 * (hi - lo), name
    axes = np.stack(arr("axis"))
    np.testing.assert_allclose(np.linalg.norm(axes, axis=1), 1.0, atol=1e-12)
    assert np.abs(axes.mean(axis=0)).max() < 0.03
    t = np.stack(arr("translation"))
    assert np.abs(t.std(axis=0) - 0.4).max() < 0.02
    sh = np.stack(arr("shear"))
    assert sh.shape == (10_000, 6)
    assert np.abs(sh.std(axis=0) - 0.1).max() < 0.005
    assert np.all(arr("rgb_noise_std") == 0.05)


# ---------------------------------------------------------------- manifest and splits


def test_split_counts():
    assert split_counts(20) == (15, 3, 2)
    assert split_counts(100) == (75, 15, 10)
    assert sum(split_counts(7)) == 7


def test_split_identities_disjoint(tmp_path):
    rng = np.random.default_rng(7)
    ids = [f"p{i}" for i in range(40)]
    assign = split_identities(ids, rng)
    counts = {s: sum(v == s for v in assign.values()) for s in ("train", "val", "test")}
    assert counts == {"train": 30, "val": 6, "test": 4}
    rows = [ManifestRow("cello", assign[i], k, f"{i}.{k}", i, 1.0) for i in ids for k in ("audio", "video")]
    check_disjoint(rows)
    bad = rows + [ManifestRow("cello", "test" if assign["p0"] != "test" else "train", "audio", "x", "p0")]
    with pytest.raises(DataError, match="p0"):
        check_disjoint(bad)
    write_manifest(tmp_path / "m.csv", rows)
    back = read_manifest(tmp_path / "m.csv")
    assert [(r.instrument, r.split, r.kind, r.performer) for r in back] == \
        [(r.instrument, r.split, r.kind, r.performer) for r in rows]


def test_manifest_errors(tmp_path):
    with pytest.raises(DataError, match="not found"):
        read_manifest(tmp_path / "missing.csv")
    p = tmp_path / "bad.csv"
    p.write_text("instrument,split\ncello,train\n")
    with pytest.raises(DataError, match="missing columns"):
        read_manifest(p)
    p.write_text("instrument,split,kind,path,performer,fps\ncello,dev,audio,a.wav,x,0\n")
    with pytest.raises(DataError, match="split"):
        read_manifest(p)


def test_synthetic_split_disjoint(synth):
    manifest, ds = synth
    rows = read_manifest(manifest)
    check_disjoint(rows)
    for split in ("train", "val", "test"):
        assert ds.instruments(split) == ["cello", "violin"]


def test_frame_indices():
    rng = np.random.default_rng(8)
    assert frame_indices(10, 3, 2.0, rng) in ([0, 2, 4], [1, 3, 5], [2, 4, 6], [3, 5, 7], [4, 6, 8], [5, 7, 9])
    idx = frame_indices(4, 3, 30.0, rng)
    assert idx == [0, 1, 2] or idx == [1, 2, 3]
    with pytest.raises(DataError):
        frame_indices(2, 3, 1.0, rng)


# ---------------------------------------------------------------- item sampling


def test_item_determinism_and_additivity(synth):
    _, ds = synth
    a = sample_training_item(ds, np.random.default_rng([5, 1]), 2, 2)
    b = sample_training_item(ds, np.random.default_rng([5, 1]), 2, 2)
    np.testing.assert_array_equal(a.mixture, b.mixture)
    np.testing.assert_array_equal(a.ibm, b.ibm)
    for fa, fb in zip(a.frames, b.frames):
        for x, y in zip(fa, fb):
            np.testing.assert_array_equal(x.coordinates, y.coordinates)
            np.testing.assert_array_equal(x.colors, y.colors)
    assert len(set(a.instruments)) == 2
    assert all(len(f) == 2 for f in a.frames)
    replay = np.zeros(dsp.SNIPPET_LENGTH)
    for s in a.snippets:
        replay = replay + s
    assert np.abs(replay - a.mixture).max() <= 1e-12
    assert a.ibm.shape == (2, 256, 256)
    assert np.all(a.ibm.sum(axis=0) >= 1)


def test_single_source_item(synth):
    _, ds = synth
    it = sample_training_item(ds, np.random.default_rng(9), 1, 1)
    np.testing.assert_array_equal(it.mixture, it.snippets[0])
    np.testing.assert_array_equal(it.ibm, 1.0)


def test_insufficient_instruments(synth):
    _, ds = synth
    with pytest.raises(DataError, match="need N=3"):
        sample_training_item(ds, np.random.default_rng(0), 3, 1)


def test_rotation_smoothness_of_visual_feature():
    rng = np.random.default_rng(10)
    # points at voxel centres, so tiny rotations move no point across a voxel boundary
    vs = 0.02
    cells = np.unique(rng.integers(-20, 20, size=(150, 3)), axis=0)
    frame = PointCloudFrame((cells + 0.5) * vs)
    net = SparseResNet18(VisionConfig(base_channels=2, K=4), rng)

    def v(angle):
        f = augment_coords(frame, AugmentParams(rotation_y=angle))
        return net.encode_video([voxelize(f, vs)]).v.data

    base = v(0.0)
    d3 = np.abs(v(1e-3) - base).max()
    d4 = np.abs(v(1e-4) - base).max()
    assert d4 < d3 < 1e-2
    assert d4 < 1e-3
