import numpy as np
import pytest

from clickseg.metrics import (
    SegMetrics,
    SweepCaseError,
    SweepReport,
    case_seed,
    connected_components,
    dice,
    evaluate,
    false_negative_volume,
    false_positive_volume,
    interactive_sweep,
)
from clickseg.volumes import ImageGrid, LabelVolume
from oracles import dice_oracle, flood_fill_components, fnv_oracle, fpv_oracle

GRID = ImageGrid((8, 8, 8), (3.0, 3.0, 3.0))


def random_mask(rng, shape=(8, 8, 8), p=0.2):
    return rng.random(shape) < p


class TestDice:
    def test_identical_nonempty(self):
        m = np.zeros((4, 4, 4), bool)
        m[1:3, 1:3, 1:3] = True
        assert dice(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4, 4), bool)
        b = np.zeros((4, 4, 4), bool)
        a[0, 0, 0] = True
        b[3, 3, 3] = True
        assert dice(a, b) == 0.0

    def test_half_overlap(self):
        a = np.zeros((4, 4, 4), bool)
        b = np.zeros((4, 4, 4), bool)
        a[0, 0, :4] = True
        b[0, 0, 2:4] = True
        b[0, 1, :2] = True
        assert dice(a, b) == 0.5

    def test_both_empty_scores_one(self):
        empty = np.zeros((4, 4, 4), bool)
        assert dice(empty, empty) == 1.0

    def test_symmetry_and_permutation_invariance(self):
        rng = np.random.default_rng(0)
        a, b = random_mask(rng), random_mask(rng)
        assert dice(a, b) == dice(b, a)
        perm = (2, 0, 1)
        assert dice(a.transpose(perm), b.transpose(perm)) == dice(a, b)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            dice(np.zeros((4, 4, 4), bool), np.zeros((4, 4, 5), bool))


class TestConnectedComponents:
    def test_empty_mask(self):
        out = connected_components(np.zeros((4, 4, 4), bool))
        assert out.max() == 0

    def test_corner_touching_voxels(self):
        mask = np.zeros((4, 4, 4), bool)
        mask[0, 0, 0] = True
        mask[1, 1, 1] = True
        assert connected_components(mask, 26).max() == 1
        assert connected_components(mask, 6).max() == 2

    def test_deterministic_label_order(self):
        mask = np.zeros((4, 4, 4), bool)
        mask[3, 3, 3] = True  # later in C order
        mask[0, 0, 0] = True
        lab = connected_components(mask)
        assert lab[0, 0, 0] == 1
        assert lab[3, 3, 3] == 2

    def test_label_volume_round_trip(self):
        mask = np.zeros((4, 4, 4), np.int32)
        mask[0, 0, 0] = 1
        vol = LabelVolume(ImageGrid((4, 4, 4), (1, 1, 1)), mask,
                          {0: "background", 1: "x"})
        out = connected_components(vol)
        assert isinstance(out, LabelVolume)
        assert out.schema[1] == "component_1"

    @pytest.mark.parametrize("connectivity", [6, 18, 26])
    def test_matches_flood_fill_oracle(self, connectivity):
        rng = np.random.default_rng(1)
        for _ in range(30):
            mask = random_mask(rng, (6, 6, 6), p=0.3)
            ours = connected_components(mask, connectivity)
            oracle, n = flood_fill_components(mask, connectivity)
            assert ours.max() == n
            np.testing.assert_array_equal(ours, oracle)

    def test_bad_connectivity(self):
        with pytest.raises(ValueError):
            connected_components(np.zeros((2, 2, 2), bool), 8)


class TestVolumesMlMetrics:
    def test_pred_subset_of_gt_fpv_zero(self):
        gt = np.zeros((8, 8, 8), bool)
        gt[2:6, 2:6, 2:6] = True
        pred = np.zeros_like(gt)
        pred[3:5, 3:5, 3:5] = True
        assert false_positive_volume(pred, gt, GRID) == 0.0

    def test_disjoint_blob_volume(self):
        grid = ImageGrid((8, 8, 8), (3.0, 3.0, 3.0))
        assert grid.voxel_volume_ml == pytest.approx(0.027)
        pred = np.zeros((8, 8, 8), bool)
        pred[0, 0, :5] = True  # 10-voxel blob, disjoint from GT
        pred[0, 1, :5] = True
        gt = np.zeros_like(pred)
        gt[6, 6, 6] = True
        assert false_positive_volume(pred, gt, grid) == pytest.approx(0.27)

    def test_single_voxel_touch_contributes_zero(self):
        pred = np.zeros((8, 8, 8), bool)
        pred[2:5, 2:5, 2:5] = True
        gt = np.zeros_like(pred)
        gt[4, 4, 4] = True  # touches the predicted component
        assert false_positive_volume(pred, gt, GRID) == 0.0

    def test_empty_pred_fnv_totals_gt(self):
        gt = np.zeros((8, 8, 8), bool)
        gt[1:3, 1:3, 1:3] = True
        pred = np.zeros_like(gt)
        expected = 8 * GRID.voxel_volume_ml
        assert false_negative_volume(pred, gt, GRID) == pytest.approx(expected)

    def test_gt_subset_of_pred_fnv_zero(self):
        pred = np.zeros((8, 8, 8), bool)
        pred[2:6, 2:6, 2:6] = True
        gt = np.zeros_like(pred)
        gt[3:5, 3:5, 3:5] = True
        assert false_negative_volume(pred, gt, GRID) == 0.0

    def test_swap_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, b = random_mask(rng), random_mask(rng)
            assert false_positive_volume(a, b, GRID) == \
                false_negative_volume(b, a, GRID)

    def test_partition_check(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            pred, gt = random_mask(rng), random_mask(rng)
            fpv = false_positive_volume(pred, gt, GRID)
            lab = connected_components(pred)
            overlapping = 0
            for comp in range(1, lab.max() + 1):
                voxels = lab == comp
                if (voxels & gt).any():
                    overlapping += int(voxels.sum())
            total = int(pred.sum()) * GRID.voxel_volume_ml
            assert fpv + overlapping * GRID.voxel_volume_ml == \
                pytest.approx(total)

    def test_matches_oracles(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            shape = tuple(rng.integers(4, 9, size=3))
            pred = random_mask(rng, shape, p=float(rng.uniform(0.05, 0.5)))
            gt = random_mask(rng, shape, p=float(rng.uniform(0.05, 0.5)))
            grid = ImageGrid(shape, (3.0, 3.0, 3.0))
            vml = grid.voxel_volume_ml
            assert dice(pred, gt) == pytest.approx(dice_oracle(pred, gt),
                                                   abs=1e-12)
            assert false_positive_volume(pred, gt, grid) == pytest.approx(
                fpv_oracle(pred, gt, vml), abs=1e-12)
            assert false_negative_volume(pred, gt, grid) == pytest.approx(
                fnv_oracle(pred, gt, vml), abs=1e-12)


class _OracleCase:
    """Sweep case whose 'model' is the GT itself."""

    def __init__(self, case_id, gt):
        self.case_id = case_id
        self.lesion_gt = gt


def _sphere_case(case_id, seed):
    rng = np.random.default_rng(seed)
    grid = ImageGrid((16, 16, 16), (2, 2, 2))
    labels = np.zeros((16, 16, 16), np.int32)
    c = rng.integers(5, 11, size=3)
    zz, yy, xx = np.meshgrid(*[np.arange(16)] * 3, indexing="ij")
    labels[((zz - c[0])**2 + (yy - c[1])**2 + (xx - c[2])**2) <= 9] = 1
    return _OracleCase(case_id,
                       LabelVolume(grid, labels, {0: "background", 1: "l"}))


class TestInteractiveSweep:
    def test_perfect_oracle_rows(self):
        cases = [_sphere_case(f"case_{i}", i) for i in range(3)]
        report = interactive_sweep(
            lambda case, clicks, k: case.lesion_gt.foreground(),
            cases, model_id="oracle")
        assert [k for k, _ in report.rows] == list(range(11))
        for _, m in report.rows:
            assert m.dice == 1.0 and m.fpv_ml == 0.0 and m.fnv_ml == 0.0
        assert report.n_cases == 3

    def test_csv_columns(self, tmp_path):
        cases = [_sphere_case("c", 0)]
        report = interactive_sweep(
            lambda case, clicks, k: case.lesion_gt.foreground(), cases,
            model_id="oracle")
        out = tmp_path / "sweep.csv"
        report.to_csv(out)
        header = out.read_text().splitlines()[0]
        assert header == "k,dice,fpv_ml,fnv_ml,n_cases,model_id"
        assert len(out.read_text().splitlines()) == 12

    def test_failure_carries_case_id(self):
        def boom(case, clicks, k):
            raise RuntimeError("nope")

        with pytest.raises(SweepCaseError, match="case_0"):
            interactive_sweep(boom, [_sphere_case("case_0", 0)])

    def test_clicks_grow_with_k(self):
        seen = {}

        def spy(case, clicks, k):
            seen[k] = len(clicks.clicks)
            return case.lesion_gt.foreground()

        interactive_sweep(spy, [_sphere_case("c", 1)])
        assert seen[0] == 0
        assert all(seen[k] <= seen[k + 1] for k in range(10))

    def test_case_seed_stable(self):
        assert case_seed("case_0001") == case_seed("case_0001")
        assert case_seed("case_0001") != case_seed("case_0002")

    def test_rows_must_increase(self):
        with pytest.raises(ValueError):
            SweepReport(rows=[(1, SegMetrics(1, 0, 0)),
                              (0, SegMetrics(1, 0, 0))],
                        model_id="x", n_cases=1)
