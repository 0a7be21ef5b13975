import numpy as np
import pytest

from rieif import dataio, maskproto


def pearson_oracle(a, b):
    """Direct textbook formula, independent of the implementation."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    am, bm = a - a.mean(), b - b.mean()
    return float((am * bm).sum() / np.sqrt((am * am).sum() * (bm * bm).sum()))


def std_panel(values, raw_missing=None):
    values = np.asarray(values, float)
    return dataio.StandardizedPanel(
        [f"n{i}" for i in range(values.shape[0])],
        values,
        np.zeros(values.shape[0]),
        np.ones(values.shape[0]),
        raw_missing=raw_missing,
    )


def test_pearson_examples():
    assert maskproto.pearson_corr([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert maskproto.pearson_corr([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    got = maskproto.pearson_corr([1, 2, 3, 4], [1, 3, 2, 4])
    assert got == pytest.approx(pearson_oracle([1, 2, 3, 4], [1, 3, 2, 4]), abs=1e-12)
    assert got == pytest.approx(0.8, abs=1e-12)


def test_pearson_guards():
    assert maskproto.pearson_corr([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]) == 0.0
    with pytest.raises(ValueError):
        maskproto.pearson_corr([1.0], [2.0])
    # pairwise deletion of missing entries
    miss = np.array([False, True, False, False])
    got = maskproto.pearson_corr([0, 99, 2, 3], [0, -5, 2, 3], missing_a=miss)
    assert got == pytest.approx(1.0)
    with pytest.raises(ValueError):
        maskproto.pearson_corr([1, 2, 3], [1, 2, 3], missing_a=[False, True, True])


def test_pearson_random_points_match_oracle():
    rng = np.random.default_rng(4)
    for _ in range(25):
        a = rng.normal(size=30)
        b = rng.normal(size=30) + rng.uniform(-1, 1) * a
        assert maskproto.pearson_corr(a, b) == pytest.approx(pearson_oracle(a, b), abs=1e-12)


def test_select_proxies_copy_and_noise():
    rng = np.random.default_rng(5)
    base = rng.normal(size=200)
    values = np.stack([base, base.copy(), rng.normal(size=200)])
    panel = std_panel(values)
    assert maskproto.select_proxies(panel, (0, 200), 0, 0.9) == (1,)
    assert maskproto.select_proxies(panel, (0, 200), 0, 1.0) == (1,)

    # no perfect correlate at rho = 1.0
    values2 = np.stack([base, base + 0.2 * rng.normal(size=200), rng.normal(size=200)])
    assert maskproto.select_proxies(std_panel(values2), (0, 200), 0, 1.0) == ()
    with pytest.raises(ValueError):
        maskproto.select_proxies(panel, (0, 200), 0, 1.5)


def test_select_proxies_threshold_is_inclusive_two_levels():
    rng = np.random.default_rng(6)
    z = rng.normal(size=400)
    strong = 0.95 * z + np.sqrt(1 - 0.95**2) * rng.normal(size=400)
    weak = 0.41 * z + np.sqrt(1 - 0.41**2) * rng.normal(size=400)
    panel = std_panel(np.stack([z, strong, weak]))
    r_strong = abs(pearson_oracle(z, strong))
    r_weak = abs(pearson_oracle(z, weak))
    assert r_strong > 0.9 and 0.4 < r_weak < 0.9
    assert maskproto.select_proxies(panel, (0, 400), 0, 0.4) == (1, 2)
    assert maskproto.select_proxies(panel, (0, 400), 0, 0.9) == (1,)


def test_mask_definition_conformance():
    rng = np.random.default_rng(7)
    panel = std_panel(rng.normal(size=(6, 120)))
    for trial in range(50):
        mask = maskproto.sample_blind_spot_mask(
            panel, i_star=2, rho=0.3, block_len=16, seed=trial,
            corr_range=(0, 96), place_range=(0, 96),
        )
        lo, hi = mask.block
        assert hi - lo == 16 and 0 <= lo and hi <= 96
        expect = np.zeros((6, 120), dtype=bool)
        for j in mask.masked_nodes:
            expect[j, lo:hi] = True
        assert np.array_equal(mask.blind, expect)


def test_mask_block_spans_range_and_degenerate_cases():
    rng = np.random.default_rng(8)
    panel = std_panel(rng.normal(size=(4, 40)))
    mask = maskproto.sample_blind_spot_mask(
        panel, 0, 0.99, block_len=40, seed=0, corr_range=(0, 40), place_range=(0, 40)
    )
    assert mask.block == (0, 40)
    assert mask.blind[0].all()

    single = maskproto.sample_blind_spot_mask(
        panel, 0, 0.99, block_len=1, seed=1, corr_range=(0, 40), place_range=(0, 40),
        proxies=(),
    )
    assert single.blind.sum() == 1

    with pytest.raises(ValueError):
        maskproto.sample_blind_spot_mask(
            panel, 0, 0.5, block_len=41, seed=0, corr_range=(0, 40), place_range=(0, 40)
        )


def test_mask_seed_determinism():
    rng = np.random.default_rng(9)
    panel = std_panel(rng.normal(size=(5, 200)))
    kw = dict(corr_range=(0, 150), place_range=(30, 150))
    m1 = maskproto.sample_blind_spot_mask(panel, 1, 0.4, 16, seed=42, **kw)
    m2 = maskproto.sample_blind_spot_mask(panel, 1, 0.4, 16, seed=42, **kw)
    assert m1.block == m2.block and np.array_equal(m1.blind, m2.blind)


def test_leakage_freedom():
    rng = np.random.default_rng(10)
    values = rng.normal(size=(5, 100))
    panel = std_panel(values)
    p_before = maskproto.select_proxies(panel, (0, 80), 0, 0.2)
    tampered = values.copy()
    tampered[:, 80:] = rng.normal(size=(5, 20)) * 50
    p_after = maskproto.select_proxies(std_panel(tampered), (0, 80), 0, 0.2)
    assert p_before == p_after


def test_apply_mask_zero_fill_keeps_ground_truth():
    rng = np.random.default_rng(11)
    panel = std_panel(rng.normal(size=(3, 30)))
    panel.Y[1, 10] = 1.7
    mask = maskproto.sample_blind_spot_mask(
        panel, 1, 0.99, 5, seed=0, corr_range=(0, 30), place_range=(8, 15), proxies=()
    )
    assert mask.block[0] >= 8 and mask.block[1] <= 15
    filled = maskproto.apply_mask(panel.Y, mask)
    lo, hi = mask.block
    assert np.all(filled[1, lo:hi] == 0.0)
    unmasked = ~mask.M
    assert np.array_equal(filled[unmasked], panel.Y[unmasked])
    assert panel.Y[1, 10] == 1.7  # ground truth untouched


def test_target_index_set_counts():
    blind = np.zeros((6, 10), dtype=bool)
    raw = np.zeros_like(blind)
    empty = maskproto.MaskSet(blind, raw, 0, (), (0, 0), 0.5)
    assert maskproto.target_index_set(empty) == []

    blind2 = np.zeros((6, 10), dtype=bool)
    blind2[0, 2:5] = True
    blind2[3, 2:5] = True
    two = maskproto.MaskSet(blind2, raw, 0, (3,), (2, 5), 0.5)
    assert len(maskproto.target_index_set(two)) == 6

    blind3 = np.zeros((6, 10), dtype=bool)
    for j in (1, 2, 5):
        blind3[j, 4:8] = True
    three = maskproto.MaskSet(blind3, raw, 1, (2, 5), (4, 8), 0.5)
    assert len(maskproto.target_index_set(three)) == 12


def test_raw_missing_merged_but_not_supervised():
    blind = np.zeros((3, 8), dtype=bool)
    blind[0, 2:4] = True
    raw = np.zeros_like(blind)
    raw[2, 5] = True
    mask = maskproto.MaskSet(blind, raw, 0, (), (2, 4), 0.5)
    assert mask.M[2, 5] and mask.M[0, 2]
    assert (2, 5) not in maskproto.target_index_set(mask)
    assert (2, 5) in maskproto.target_index_set(mask, include_raw_missing=True)


def test_mask_export_import_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    panel = std_panel(rng.normal(size=(4, 50)))
    mask = maskproto.sample_blind_spot_mask(
        panel, 2, 0.3, 10, seed=99, corr_range=(0, 40), place_range=(0, 40)
    )
    csv_path, json_path = tmp_path / "mask.csv", tmp_path / "mask.json"
    maskproto.save_mask(mask, panel.node_names, csv_path, json_path)
    loaded = maskproto.load_mask(csv_path, json_path, panel.node_names, 50)
    assert np.array_equal(loaded.blind, mask.blind)
    assert loaded.i_star == mask.i_star
    assert loaded.proxies == mask.proxies
    assert loaded.block == mask.block
    assert loaded.seed == mask.seed
