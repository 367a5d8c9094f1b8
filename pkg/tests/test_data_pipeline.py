"""Data pipeline tests: patch geometry, normalization, panels, pairs, augmentation, IO."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchspot.data import (
    GenePanel,
    PatchSpotPair,
    SliceDataset,
    SpotRecord,
    augment_pair,
    build_pairs,
    dihedral_transform,
    extract_patch,
    load_manifest,
    load_pairs,
    load_panel,
    normalize_expression,
    save_pairs,
    save_panel,
    select_heg,
    select_hvg,
    standardize_per_slice,
)
from patchspot.errors import EmptyInput, NegativeCount, OutOfBounds, ParseError


def coordinate_image(h=1024, w=1024):
    """Pixel (y, x) stores x/w in red and y/h in green: position is decodable."""
    img = np.zeros((h, w, 3), dtype=np.float32)
    img[..., 0] = np.arange(w, dtype=np.float32)[None, :] / w
    img[..., 1] = np.arange(h, dtype=np.float32)[:, None] / h
    return img


class TestExtractPatch:
    def test_full_slide_crop(self):
        img = np.random.default_rng(0).random((256, 256, 3)).astype(np.float32)
        np.testing.assert_array_equal(extract_patch(img, 128, 128), img)

    def test_corner_arithmetic(self):
        # spot (200, 300) must produce the crop with corners (72,172)-(328,428)
        img = coordinate_image()
        patch = extract_patch(img, 200, 300)
        assert patch.shape == (256, 256, 3)
        np.testing.assert_array_equal(patch[..., 0] * 1024, np.tile(np.arange(72, 328), (256, 1)))
        np.testing.assert_array_equal(
            patch[..., 1] * 1024, np.tile(np.arange(172, 428)[:, None], (1, 256))
        )

    def test_out_of_bounds(self):
        img = coordinate_image()
        with pytest.raises(OutOfBounds):
            extract_patch(img, 100, 100)
        with pytest.raises(OutOfBounds):
            extract_patch(img, 1000, 512)

    def test_random_in_bounds_positions(self):
        img = coordinate_image()
        rng = np.random.default_rng(42)
        for _ in range(100):
            x = int(rng.integers(128, 1024 - 128 + 1))
            y = int(rng.integers(128, 1024 - 128 + 1))
            patch = extract_patch(img, x, y)
            assert patch[0, 0, 0] * 1024 == x - 128
            assert patch[0, 0, 1] * 1024 == y - 128
            assert patch[-1, -1, 0] * 1024 == x + 127
            assert patch[-1, -1, 1] * 1024 == y + 127


class TestNormalize:
    def test_zero_spot_stays_zero(self):
        out = normalize_expression(np.array([[0.0, 0.0, 0.0]]))
        np.testing.assert_array_equal(out, np.zeros((1, 3)))

    def test_small_target_example(self):
        out = normalize_expression(np.array([[10.0, 90.0]]), target_total=100.0)
        np.testing.assert_allclose(out[0], [math.log(11.0), math.log(91.0)], atol=1e-12)

    def test_single_gene_spot(self):
        out = normalize_expression(np.array([[5.0]]))
        np.testing.assert_allclose(out[0, 0], math.log(1.0 + 10_000.0), atol=1e-12)

    def test_negative_count_rejected(self):
        with pytest.raises(NegativeCount):
            normalize_expression(np.array([[1.0, -2.0]]))

    @given(
        st.lists(
            st.lists(st.floats(0.0, 1e4), min_size=4, max_size=4),
            min_size=1,
            max_size=8,
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_reconstructed_totals(self, rows):
        counts = np.array(rows)
        out = normalize_expression(counts)
        totals = np.expm1(out).sum(axis=1)
        for raw_total, total in zip(counts.sum(axis=1), totals):
            if raw_total > 0:
                assert abs(total - 10_000.0) <= 1e-6 * 10_000.0
            else:
                assert total == 0.0

    def test_zscore_hook(self):
        m = np.array([[1.0, 5.0], [3.0, 5.0]])
        z = standardize_per_slice(m)
        np.testing.assert_allclose(z[:, 0], [-1.0, 1.0])
        np.testing.assert_array_equal(z[:, 1], [0.0, 0.0])  # zero-variance gene


class TestPanels:
    def test_heg_strict_ordering(self):
        mats = [np.array([[5.0, 1.0], [5.0, 1.0]])]
        panel = select_heg(mats, ("a", "b"), panel_size=1)
        assert panel.genes == ("a",)

    def test_heg_tie_break_low_index(self):
        mats = [np.array([[2.0, 2.0, 1.0]])]
        panel = select_heg(mats, ("g0", "g1", "g2"), panel_size=2)
        assert panel.genes == ("g0", "g1")

    def test_heg_rank_by_mean_desc_then_index(self):
        # means [0.1, 3.0, 2.0, 3.0] -> g1, g3, g2 for panel size 3
        mats = [np.array([[0.1, 3.0, 2.0, 3.0]])]
        panel = select_heg(mats, ("g0", "g1", "g2", "g3"), panel_size=3)
        assert panel.genes == ("g1", "g3", "g2")
        np.testing.assert_allclose(panel.scores, [3.0, 3.0, 2.0])

    def test_heg_empty_input(self):
        with pytest.raises(EmptyInput):
            select_heg([], ("a",))

    def test_hvg_prefers_varying_gene(self):
        mats = [np.array([[1.0, 0.0], [1.0, 2.0]])]  # gene0 constant, gene1 varies
        panel = select_hvg(mats, ("const", "varying"), panel_size=1)
        assert panel.genes == ("varying",)

    def test_hvg_union_keeps_disjoint_tops(self):
        a = np.array([[0.0, 0.0], [4.0, 0.0]])  # top gene 0
        b = np.array([[0.0, 0.0], [0.0, 4.0]])  # top gene 1
        panel = select_hvg([a, b], ("g0", "g1"), panel_size=1)
        # union before truncation holds both; summed variances tie -> lower index
        assert panel.genes == ("g0",)
        full = select_hvg([a, b], ("g0", "g1"), panel_size=2)
        assert set(full.genes) == {"g0", "g1"}

    def test_hvg_summed_variance_ranking(self):
        # per-slice variances [[1, 4, 0], [2, 1, 0]] -> sums [3, 5, 0] -> g1, g0
        def with_variance(vs):
            return np.stack([np.sqrt(np.array(vs)), -np.sqrt(np.array(vs))])  # var = vs

        panel = select_hvg(
            [with_variance([1.0, 4.0, 0.0]), with_variance([2.0, 1.0, 0.0])],
            ("g0", "g1", "g2"),
            panel_size=2,
        )
        assert panel.genes == ("g1", "g0")
        np.testing.assert_allclose(panel.scores, [5.0, 3.0])

    def test_panel_determinism(self):
        rng = np.random.default_rng(3)
        mats = [rng.random((10, 30)), rng.random((7, 30))]
        names = tuple(f"g{i}" for i in range(30))
        first = select_hvg(mats, names, panel_size=10)
        second = select_hvg([m.copy() for m in mats], names, panel_size=10)
        assert first.genes == second.genes


def make_slice(n_spots=3, slice_id="s0", offset=0):
    img = coordinate_image(512, 1024)
    genes = ("g0", "g1", "g2", "g3")
    spots = [
        SpotRecord(
            slice_id=slice_id,
            spot_id=f"spot{i}",
            x=128 + 256 * i + offset,
            y=256,
            counts=np.arange(4, dtype=np.float64) + i,
            gene_names=genes,
        )
        for i in range(n_spots)
    ]
    return SliceDataset(slice_id=slice_id, image=img, spots=spots, gene_names=genes)


class TestBuildPairs:
    def test_out_of_bounds_spot_skipped_and_counted(self):
        ds = make_slice(n_spots=3, offset=300)  # third spot's patch exceeds width
        normalized = normalize_expression(ds.counts_matrix())
        panel = GenePanel(mode="heg", genes=("g1", "g0"), scores=np.array([1.0, 0.5]))
        pairs, report = build_pairs(ds, normalized, panel)
        assert len(pairs) == 2
        assert report.n_skipped == 1
        assert report.skipped_spot_ids == ["spot2"]

    def test_expression_follows_panel_order(self):
        ds = make_slice(n_spots=1)
        normalized = normalize_expression(ds.counts_matrix())
        panel = GenePanel(mode="heg", genes=("g3", "g1"), scores=np.array([1.0, 0.5]))
        pairs, _ = build_pairs(ds, normalized, panel)
        np.testing.assert_allclose(
            pairs[0].expression, normalized[0, [3, 1]].astype(np.float32)
        )

    def test_empty_spot_list(self):
        ds = make_slice(n_spots=0)
        panel = GenePanel(mode="heg", genes=("g0",), scores=np.array([1.0]))
        pairs, report = build_pairs(ds, np.zeros((0, 4)), panel)
        assert pairs == [] and report.n_built == 0


class TestAugment:
    def pair(self, seed=0):
        rng = np.random.default_rng(seed)
        return PatchSpotPair(
            patch=rng.random((256, 256, 3)).astype(np.float32),
            expression=rng.random(5).astype(np.float32),
            slice_id="s",
            spot_id="p",
        )

    def test_identity_transform(self):
        p = self.pair()
        np.testing.assert_array_equal(dihedral_transform(p.patch, 0), p.patch)

    def test_flip_is_involution(self):
        p = self.pair()
        flipped_twice = dihedral_transform(dihedral_transform(p.patch, 4), 4)
        np.testing.assert_array_equal(flipped_twice, p.patch)

    def test_group_elements_distinct(self):
        p = self.pair()
        outs = [dihedral_transform(p.patch, op).tobytes() for op in range(8)]
        assert len(set(outs)) == 8

    def test_expression_bit_identical(self):
        p = self.pair()
        a, b = augment_pair(p, np.random.default_rng(11))
        assert a.expression.tobytes() == p.expression.tobytes()
        assert b.expression.tobytes() == p.expression.tobytes()
        assert a.patch.shape == (256, 256, 3) and b.patch.shape == (256, 256, 3)

    def test_seeded_reproducibility(self):
        p = self.pair()
        a1, b1 = augment_pair(p, np.random.default_rng(7))
        a2, b2 = augment_pair(p, np.random.default_rng(7))
        np.testing.assert_array_equal(a1.patch, a2.patch)
        np.testing.assert_array_equal(b1.patch, b2.patch)


class TestArchiveIO:
    def test_pairs_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        genes = ("g0", "g1", "g2")
        pairs = [
            PatchSpotPair(
                patch=(rng.integers(0, 256, (256, 256, 3)) / 255.0).astype(np.float32),
                expression=rng.random(3).astype(np.float32),
                slice_id="sl",
                spot_id=f"p{i}",
            )
            for i in range(10)
        ]
        save_pairs(pairs, tmp_path / "arch", genes)
        loaded, loaded_genes = load_pairs(tmp_path / "arch", expected_genes=genes)
        assert loaded_genes == genes
        assert len(loaded) == 10
        for orig, back in zip(pairs, loaded):
            assert back.key == orig.key
            np.testing.assert_array_equal(back.patch, orig.patch)  # uint8-grid patches
            np.testing.assert_allclose(back.expression, orig.expression, atol=1e-9)

    def test_missing_expression_column(self, tmp_path):
        genes = ("g0", "g1")
        pairs, _ = build_pairs(
            make_slice(1), normalize_expression(make_slice(1).counts_matrix()),
            GenePanel(mode="heg", genes=genes, scores=np.ones(2)),
        )
        save_pairs(pairs, tmp_path / "arch", genes)
        with pytest.raises(ParseError, match="g9"):
            load_pairs(tmp_path / "arch", expected_genes=("g0", "g9"))

    def test_manifest_missing_image(self, tmp_path):
        (tmp_path / "m.json").write_text(
            '{"slices": [{"slice_id": "a", "image": "nope.png", "spots": "a.csv"}]}'
        )
        with pytest.raises(ParseError, match="nope.png"):
            load_manifest(tmp_path / "m.json")

    def test_panel_round_trip(self, tmp_path):
        panel = GenePanel(mode="hvg", genes=("b", "a"), scores=np.array([2.5, 1.25]))
        save_panel(panel, tmp_path / "panel.csv")
        back = load_panel(tmp_path / "panel.csv", mode="hvg")
        assert back.genes == panel.genes
        np.testing.assert_array_equal(back.scores, panel.scores)
