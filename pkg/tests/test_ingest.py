"""Data ingestion: caption votes, screen Z-scores, mixture fitting."""
import math
from pathlib import Path

import numpy as np
import pytest

from bracketbandits.ingest import (
    MixingDistribution,
    _entropic_weights,
    fit_mixing_distribution,
    load_caption_contest,
    load_mixture,
    load_screen_zscores,
    mixture_grid,
    save_mixture,
    synth_from_mixture,
)
from bracketbandits.instance import BERNOULLI

DATA = Path(__file__).parent / "data"


# ---------------------------------------------------------------------------
# loaders


def test_load_caption_contest_fixture():
    inst = load_caption_contest(DATA / "captions_small.csv")
    assert inst.n == 5
    assert all(a.kind == BERNOULLI for a in inst.arms)
    assert inst.arms[0].mean == 0.3
    assert inst.arms[1].mean == 0.0
    assert inst.arms[2].mean == 1.0
    assert inst.label == "captions_small"


def test_load_caption_contest_errors(tmp_path):
    def write(body):
        p = tmp_path / "c.csv"
        p.write_text(body)
        return p

    with pytest.raises(ValueError, match="header"):
        load_caption_contest(write("caption,up,down\nc1,1,2\n"))
    with pytest.raises(ValueError, match="3 fields"):
        load_caption_contest(write("id,positive,total\nc1,1\n"))
    with pytest.raises(ValueError, match="non-integer"):
        load_caption_contest(write("id,positive,total\nc1,one,2\n"))
    with pytest.raises(ValueError, match="total must be >= 1"):
        load_caption_contest(write("id,positive,total\nc1,0,0\n"))
    with pytest.raises(ValueError, match="outside"):
        load_caption_contest(write("id,positive,total\nc1,5,2\n"))
    with pytest.raises(ValueError, match="no data rows"):
        load_caption_contest(write("id,positive,total\n"))
    # error messages carry the line number
    with pytest.raises(ValueError, match=":3:"):
        load_caption_contest(write("id,positive,total\nc1,1,2\nc2,9,2\n"))


def test_load_screen_zscores_fixture():
    z = load_screen_zscores(DATA / "screens_small.csv")
    assert np.array_equal(z, [1.5, 0.0, 0.0, 2.5])


def test_load_screen_zscores_errors(tmp_path):
    def write(body):
        p = tmp_path / "s.csv"
        p.write_text(body)
        return p

    with pytest.raises(ValueError, match="header"):
        load_screen_zscores(write("gene,za,zb\ng,0,0\n"))
    with pytest.raises(ValueError, match="non-numeric"):
        load_screen_zscores(write("gene_id,z1,z2\ng,x,0\n"))
    with pytest.raises(ValueError, match="non-finite"):
        load_screen_zscores(write("gene_id,z1,z2\ng,inf,0\n"))
    with pytest.raises(ValueError, match="no data rows"):
        load_screen_zscores(write("gene_id,z1,z2\n"))


# ---------------------------------------------------------------------------
# grid and type validation


def test_mixture_grid():
    g = mixture_grid(0.01)
    assert g.size == 801
    assert g[0] == -4.0 and g[-1] == 4.0
    assert mixture_grid(0.1).size == 81
    with pytest.raises(ValueError, match="divide"):
        mixture_grid(0.3)
    with pytest.raises(ValueError, match="positive"):
        mixture_grid(0.0)


def test_mixing_distribution_validation():
    g = np.array([-1.0, 0.0, 1.0])
    MixingDistribution(g, np.array([0.2, 0.5, 0.3]), 0.0, 1.0)
    with pytest.raises(ValueError, match="nonnegative"):
        MixingDistribution(g, np.array([-0.1, 0.6, 0.5]), 0.0, 1.0)
    with pytest.raises(ValueError, match="sum"):
        MixingDistribution(g, np.array([0.2, 0.2, 0.2]), 0.0, 1.0)
    with pytest.raises(ValueError, match="increasing"):
        MixingDistribution(g[::-1].copy(), np.array([0.2, 0.5, 0.3]), 0.0, 1.0)
    with pytest.raises(ValueError, match="equal-length"):
        MixingDistribution(g, np.array([0.5, 0.5]), 0.0, 1.0)


# ---------------------------------------------------------------------------
# fitting


def test_fit_validation():
    with pytest.raises(ValueError, match="nonempty"):
        fit_mixing_distribution([], 0.1, 0.0, 10)
    with pytest.raises(ValueError, match="finite"):
        fit_mixing_distribution([0.0, np.inf], 0.1, 0.0, 10)
    with pytest.raises(ValueError, match="nonnegative"):
        fit_mixing_distribution([0.0], 0.1, -1.0, 10)
    with pytest.raises(ValueError, match="iterations"):
        fit_mixing_distribution([0.0], 0.1, 0.0, 0)


def test_all_zero_scores_concentrate_at_origin():
    mix = fit_mixing_distribution(np.zeros(5), grid_step=0.1, lam=0.0,
                                  iterations=2000)
    nearest = mix.grid[np.argmin(np.abs(mix.grid))]
    assert nearest == 0.0
    within = np.abs(mix.grid - nearest) <= 0.1 + 1e-12
    assert mix.weights[within].sum() >= 0.99


def test_huge_lambda_approaches_uniform():
    z = np.random.default_rng(0).standard_normal(200)
    mix = fit_mixing_distribution(z, grid_step=0.1, lam=1e3, iterations=50)
    u = 1.0 / mix.grid.size
    kl = float((mix.weights * np.log(mix.weights / u)).sum())
    assert 0.0 <= kl <= 1e-3


def test_em_objective_monotone_at_lambda_zero():
    z = np.random.default_rng(1).standard_normal(60)
    mix = fit_mixing_distribution(z, grid_step=0.1, lam=0.0, iterations=80,
                                  track_history=True)
    assert mix.history.size == 81
    assert np.all(np.diff(mix.history) >= -1e-12)


def test_entropy_likelihood_tradeoff_monotone_in_lambda():
    z = np.random.default_rng(2).standard_normal(150)
    lams = [0.0, 1e-4, 1e-2, 1.0, 100.0]
    fits = [fit_mixing_distribution(z, 0.1, lam, 400) for lam in lams]
    ents = [f.entropy() for f in fits]
    nlls = [f.nll for f in fits]
    for a, b in zip(ents, ents[1:]):
        assert b >= a - 1e-6
    for a, b in zip(nlls, nlls[1:]):
        assert b >= a - 1e-6


def test_entropic_step_is_exact_stationary_point():
    rng = np.random.default_rng(3)
    m = rng.random(101)
    m /= m.sum()
    for lam in (1e-6, 1e-4, 1e-2, 1.0, 1e3):
        w = _entropic_weights(m, lam)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(w > 0)
        # KKT: m_g/w_g - lam*(ln w_g + 1) equal across the support
        resid = m / w - lam * (np.log(w) + 1.0)
        scale = max(1.0, np.abs(resid).max())
        assert (resid.max() - resid.min()) / scale < 1e-9


def test_fit_depends_only_on_empirical_distribution():
    z = np.random.default_rng(4).standard_normal(40)
    base = fit_mixing_distribution(z, 0.1, 1e-4, 100)
    perm = fit_mixing_distribution(z[::-1].copy(), 0.1, 1e-4, 100)
    tiled = fit_mixing_distribution(np.tile(z, 3), 0.1, 1e-4, 100)
    assert np.allclose(base.weights, perm.weights, atol=1e-12)
    assert np.allclose(base.weights, tiled.weights, atol=1e-10)


def test_nll_matches_straight_line_recomputation():
    z = np.random.default_rng(5).standard_normal(30)
    mix = fit_mixing_distribution(z, 0.2, 1e-3, 50)
    dens = np.exp(-np.square(z[:, None] - mix.grid[None, :])) / math.sqrt(math.pi)
    want = -float(np.log(dens @ mix.weights).mean())
    assert mix.nll == pytest.approx(want, rel=1e-12)
    assert mix.objective() == pytest.approx(-want + 1e-3 * mix.entropy())


# ---------------------------------------------------------------------------
# sampling


def test_synth_point_mass_all_zero():
    mix = MixingDistribution(np.array([-1.0, 0.0, 1.0]),
                             np.array([0.0, 1.0, 0.0]), 0.0, 0.0)
    inst = synth_from_mixture(mix, 10, 0)
    assert all(a.mean == 0.0 for a in inst.arms)
    assert all(a.variance == 1.0 for a in inst.arms)


def test_synth_spike_and_slab_counts():
    mix = MixingDistribution(np.array([0.0, 1.0]), np.array([0.97, 0.03]),
                             0.0, 0.0)
    inst = synth_from_mixture(mix, 10_000, 7)
    nonzero = sum(1 for a in inst.arms if a.mean != 0.0)
    assert 230 <= nonzero <= 370  # 300 +/- 4 sd


def test_synth_deterministic():
    mix = MixingDistribution(np.array([0.0, 1.0]), np.array([0.5, 0.5]), 0.0, 0.0)
    a = synth_from_mixture(mix, 50, 11)
    b = synth_from_mixture(mix, 50, 11)
    c = synth_from_mixture(mix, 50, 12)
    assert [x.mean for x in a.arms] == [x.mean for x in b.arms]
    assert [x.mean for x in a.arms] != [x.mean for x in c.arms]
    with pytest.raises(ValueError):
        synth_from_mixture(mix, 0, 0)


def test_mixture_roundtrip(tmp_path):
    z = np.random.default_rng(6).standard_normal(20)
    mix = fit_mixing_distribution(z, 0.5, 1e-4, 30)
    p = tmp_path / "mix.json"
    save_mixture(mix, p)
    back = load_mixture(p)
    assert np.array_equal(back.grid, mix.grid)
    assert np.array_equal(back.weights, mix.weights)
    assert back.lam == mix.lam and back.nll == mix.nll
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(ValueError, match="format"):
        load_mixture(tmp_path / "bad.json")
