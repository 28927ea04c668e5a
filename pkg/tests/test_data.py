"""Dataset generation, lifting, normalization, and file-format contracts."""

import numpy as np
import pytest

from neuralbayes import data as D
from neuralbayes.errors import DatasetError, FormatError, ShapeError


class TestGenerators:
    def test_moons_deterministic_and_labeled(self):
        a = D.make_two_moons(50, seed=3)
        b = D.make_two_moons(50, seed=3)
        assert np.array_equal(a.points, b.points)
        assert sorted(np.unique(a.components)) == [0, 1]
        assert a.size == 100 and a.dim == 2

    def test_different_seeds_differ(self):
        a = D.make_two_moons(30, seed=1)
        b = D.make_two_moons(30, seed=2)
        assert not np.array_equal(a.points, b.points)

    def test_disjointness_postcheck_fires(self):
        with pytest.raises(DatasetError, match="not well separated"):
            D.make_two_moons(200, gap=0.0, noise=0.4, seed=0)

    def test_empty_component_rejected(self):
        with pytest.raises(DatasetError):
            D.make_two_moons(0, seed=0)
        with pytest.raises(DatasetError):
            D.make_blobs(3, 0, seed=0)

    def test_blob_separation_example(self):
        ds = D.make_blobs(2, 100, centers=[[-5.0, 0.0], [5.0, 0.0]], noise=0.1, seed=4)
        assert D.min_inter_component_distance(ds.points, ds.components) > 4.0

    def test_circles_components(self):
        ds = D.make_circles(80, radii=(1.0, 2.0), noise=0.05, seed=5)
        assert ds.num_components == 2
        radius = np.linalg.norm(ds.points, axis=1)
        assert radius[ds.components == 0].mean() < radius[ds.components == 1].mean()

    def test_metadata_records_parameters(self):
        ds = D.make_two_moons(40, gap=0.3, noise=0.05, seed=6)
        assert ds.meta["gap"] == 0.3 and ds.meta["noise"] == 0.05
        assert ds.meta["min_inter_component_distance"] > 0.2


class TestLift:
    def test_requires_growth(self):
        ds = D.make_two_moons(20, seed=0)
        with pytest.raises(ShapeError):
            D.lift_and_rotate(ds, 1, seed=0)

    def test_isometry(self):
        ds = D.make_two_moons(60, seed=7)
        lifted = D.lift_and_rotate(ds, 512, seed=8)
        d0 = np.linalg.norm(ds.points[:, None] - ds.points[None, :], axis=2)
        d1 = np.linalg.norm(lifted.points[:, None] - lifted.points[None, :], axis=2)
        np.testing.assert_allclose(d0, d1, atol=1e-9)
        assert np.array_equal(lifted.components, ds.components)

    def test_rotation_is_orthogonal(self):
        from neuralbayes.nn import orthogonal_init
        r = orthogonal_init(64, 64, 9).data
        np.testing.assert_allclose(r.T @ r, np.eye(64), atol=1e-9)

    def test_round_trip_through_lift(self):
        ds = D.make_two_moons(30, seed=10)
        lifted = D.lift_and_rotate(ds, 16, seed=11)
        back = D.unlift_points(lifted.points, lifted.meta["lift"])
        np.testing.assert_allclose(back, ds.points, atol=1e-9)
        again = D.lift_points(ds.points, lifted.meta["lift"])
        np.testing.assert_allclose(again, lifted.points, atol=1e-9)


class TestStandardize:
    def test_moments(self):
        ds = D.standardize(D.make_two_moons(100, seed=12))
        np.testing.assert_allclose(ds.points.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(ds.points.std(axis=0), 1.0, atol=1e-9)

    def test_idempotent(self):
        once = D.standardize(D.make_two_moons(100, seed=13))
        twice = D.standardize(once)
        np.testing.assert_allclose(once.points, twice.points, atol=1e-9)

    def test_constant_dimension_maps_to_zero(self):
        points = np.column_stack([np.random.default_rng(14).standard_normal(50),
                                  np.full(50, 3.5)])  # dyadic value: the mean is bit-exact
        ds = D.ManifoldDataset(points, np.zeros(50, dtype=int))
        out = D.standardize(ds)
        np.testing.assert_array_equal(out.points[:, 1], 0.0)
        # non-dyadic constants leave at most ulp/floor residue
        points[:, 1] = 3.7
        out = D.standardize(D.ManifoldDataset(points, np.zeros(50, dtype=int)))
        assert np.abs(out.points[:, 1]).max() <= 1e-6

    def test_stats_reusable_on_other_split(self):
        ds = D.make_two_moons(100, seed=15)
        train, test = D.split(ds, [0.8, 0.2], seed=0)
        strain = D.standardize(train)
        stest = D.standardize(test, mean=strain.mean, std=strain.std)
        np.testing.assert_allclose(
            stest.points, (test.points - strain.mean) / strain.std, atol=1e-12)


class TestSplit:
    def test_sizes(self):
        ds = D.make_two_moons(50, seed=16)  # 100 points
        parts = D.split(ds, [0.9, 0.1], seed=1)
        assert [p.size for p in parts] == [90, 10]

    def test_union_covers_everything(self):
        ds = D.make_two_moons(33, seed=17)
        parts = D.split(ds, [0.5, 0.3, 0.2], seed=2)
        assert sum(p.size for p in parts) == ds.size
        stacked = np.vstack([p.points for p in parts])
        assert np.unique(stacked, axis=0).shape[0] == ds.size

    def test_deterministic(self):
        ds = D.make_two_moons(40, seed=18)
        a = D.split(ds, [0.7, 0.3], seed=3)
        b = D.split(ds, [0.7, 0.3], seed=3)
        for x, y in zip(a, b):
            assert np.array_equal(x.points, y.points)

    def test_bad_fractions(self):
        ds = D.make_two_moons(10, seed=19)
        with pytest.raises(DatasetError):
            D.split(ds, [0.5, 0.4], seed=0)
        with pytest.raises(DatasetError):
            D.split(ds, [1.2, -0.2], seed=0)


class TestIdx:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(20)
        images = rng.integers(0, 256, (5, 7, 7), dtype=np.uint8)
        labels = np.array([0, 1, 2, 1, 0], dtype=np.uint8)
        ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
        D.write_idx(images, labels, ip, lp)
        ds = D.load_idx(ip, lp)
        np.testing.assert_allclose(ds.points, images.reshape(5, 49) / 255.0, atol=0)
        assert np.array_equal(ds.components, labels)
        D.write_idx((ds.points.reshape(5, 7, 7) * 255).astype(np.uint8), labels,
                    tmp_path / "img2.idx", tmp_path / "lbl2.idx")
        assert (tmp_path / "img2.idx").read_bytes() == ip.read_bytes()
        assert (tmp_path / "lbl2.idx").read_bytes() == lp.read_bytes()

    def test_all_zero_fixture(self, tmp_path):
        D.write_idx(np.zeros((1, 28, 28), dtype=np.uint8), np.array([7], dtype=np.uint8),
                    tmp_path / "i.idx", tmp_path / "l.idx")
        ds = D.load_idx(tmp_path / "i.idx", tmp_path / "l.idx")
        assert np.all(ds.points == 0.0) and ds.components[0] == 7

    def test_truncated_images(self, tmp_path):
        D.write_idx(np.zeros((2, 4, 4), dtype=np.uint8), np.zeros(2, dtype=np.uint8),
                    tmp_path / "i.idx", tmp_path / "l.idx")
        raw = (tmp_path / "i.idx").read_bytes()
        (tmp_path / "i.idx").write_bytes(raw[:-5])
        with pytest.raises(FormatError, match="expected 48 bytes, found 43"):
            D.load_idx(tmp_path / "i.idx", tmp_path / "l.idx")

    def test_bad_magic(self, tmp_path):
        D.write_idx(np.zeros((1, 2, 2), dtype=np.uint8), np.zeros(1, dtype=np.uint8),
                    tmp_path / "i.idx", tmp_path / "l.idx")
        raw = bytearray((tmp_path / "i.idx").read_bytes())
        raw[3] = 0x99
        (tmp_path / "i.idx").write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="bad magic"):
            D.load_idx(tmp_path / "i.idx", tmp_path / "l.idx")

    def test_count_mismatch(self, tmp_path):
        D.write_idx(np.zeros((2, 2, 2), dtype=np.uint8), np.zeros(2, dtype=np.uint8),
                    tmp_path / "i.idx", tmp_path / "l.idx")
        D.write_idx(np.zeros((3, 2, 2), dtype=np.uint8), np.zeros(3, dtype=np.uint8),
                    tmp_path / "i3.idx", tmp_path / "l3.idx")
        with pytest.raises(FormatError, match="label count 3 != image count 2"):
            D.load_idx(tmp_path / "i.idx", tmp_path / "l3.idx")


class TestCsv:
    def test_round_trip(self, tmp_path):
        ds = D.make_two_moons(25, seed=21)
        path = tmp_path / "d.csv"
        D.save_csv(ds, path)
        loaded = D.load_csv(path)
        np.testing.assert_array_equal(loaded.points, ds.points)
        assert np.array_equal(loaded.components, ds.components)
        header = path.read_text().splitlines()[0]
        assert header == "x0,x1,component"

    def test_bad_header(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(FormatError):
            D.load_csv(p)
