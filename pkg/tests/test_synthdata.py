import numpy as np
import pytest

from uotalign import synthdata as sd


def test_expert_examples():
    assert np.all(sd.expert_action([0.3, -0.2], [0.3, -0.2]) == 0)
    a = sd.expert_action([0.0, 0.0], [0.03, -0.04])
    assert np.allclose(a, [0.03, -0.04], atol=0, rtol=0)
    a = sd.expert_action([0.0, 0.0], [6.0, 8.0], gain=1.0, a_max=0.1)
    assert np.linalg.norm(a) == pytest.approx(0.1)
    assert np.allclose(a / np.linalg.norm(a), [0.6, 0.8])
    with pytest.raises(ValueError):
        sd.expert_action([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])


def test_emission_examples():
    cfg = sd.BenchConfig(noise_std=0.0)
    s, g = np.array([0.2, -0.3]), np.array([0.5, 0.1])
    assert np.array_equal(sd.emit_obs("src", s, g, cfg), sd.emit_obs("src", s, g, cfg))
    assert np.linalg.norm(sd.emit_obs("src", s, g, cfg) - sd.emit_obs("tgt", s, g, cfg)) > 1e-6
    M = np.zeros((6, 4))
    M[:4, :4] = np.eye(4)
    em = {"src": sd.Emission(M, np.zeros(6)), "tgt": sd.Emission(M, np.zeros(6))}
    o = sd.emit_obs("src", np.array([1.0, 0.0]), np.array([0.0, 1.0]), cfg, emissions=em)
    assert o.tolist() == [1, 0, 0, 1, 0, 0]
    with pytest.raises(ValueError):
        sd.emit_obs("sim", s, g, cfg)


def test_emission_columns_unit_norm():
    em = sd.make_emissions(sd.BenchConfig(seed=3))
    for e in em.values():
        assert np.allclose(np.linalg.norm(e.M, axis=0), 1.0)
    assert not np.array_equal(em["src"].M, em["tgt"].M)


def test_noise_applied():
    cfg = sd.BenchConfig(noise_std=0.1)
    s = np.zeros((500, 2))
    o = sd.emit_obs("tgt", s, np.zeros(2), cfg, np.random.default_rng(0))
    clean = sd.emit_obs("tgt", s, np.zeros(2), cfg)
    assert np.std(o - clean) == pytest.approx(0.1, rel=0.05)


def test_generate_counts_and_regions(small_bench):
    cfg, D_src, D_tgt, probes = small_bench
    assert len(D_src) == 12 and len(D_tgt) == 4
    assert all(t.goal[0] < 0 and t.region == "target" and t.domain == "tgt" for t in D_tgt)
    assert all(t.region == "source" and t.domain == "src" for t in D_src)
    ood = probes.select("target_ood")
    assert len(ood) == 10 and np.all(ood.goal[:, 0] > 0)
    assert np.all(probes.select("target").goal[:, 0] < 0)
    for t in D_src + D_tgt:
        assert len(t) == cfg.horizon
        assert np.linalg.norm(t.proprio[-1] + t.actions[-1] - t.goal) < sd.REACH_TOL
        assert np.all(np.isfinite(t.obs))
    assert all(t.shadow_obs is not None for t in D_src)


def test_default_imbalance():
    cfg = sd.BenchConfig()
    assert cfg.n_src / cfg.n_tgt == 20


def test_probes_are_paired_noise_free(small_bench):
    cfg, _, _, probes = small_bench
    em = sd.make_emissions(cfg)
    assert np.array_equal(probes.o_src, em["src"](probes.state, probes.goal))
    assert np.array_equal(probes.o_tgt, em["tgt"](probes.state, probes.goal))
    assert np.all(np.linalg.norm(probes.o_src - probes.o_tgt, axis=1) > 1e-6)


def test_shadow_is_target_rendering(small_bench):
    cfg, D_src, _, _ = small_bench
    em = sd.make_emissions(cfg)
    t = D_src[0]
    # both renderings carry independent noise of scale noise_std
    assert np.abs(t.shadow_obs - em["tgt"](t.proprio, t.goal)).max() < 10 * cfg.noise_std


def test_generate_deterministic(tmp_path):
    cfg = sd.BenchConfig(n_src=5, n_tgt=2, n_probes=4, seed=42)
    out = []
    for run in range(2):
        D_src, D_tgt, probes = sd.generate(cfg)
        sd.write_jsonl(tmp_path / f"s{run}.jsonl", D_src)
        sd.write_jsonl(tmp_path / f"t{run}.jsonl", D_tgt)
        (tmp_path / f"p{run}.jsonl").write_text(probes.to_jsonl())
        out.append([(tmp_path / f"{k}{run}.jsonl").read_bytes() for k in "stp"])
    assert out[0] == out[1]
    other = sd.generate(sd.BenchConfig(n_src=5, n_tgt=2, n_probes=4, seed=43))[0]
    assert not np.array_equal(other[0].obs, sd.generate(cfg)[0][0].obs)


def test_jsonl_roundtrip(tmp_path, small_bench):
    _, D_src, _, probes = small_bench
    sd.write_jsonl(tmp_path / "d.jsonl", D_src)
    back = sd.read_jsonl(tmp_path / "d.jsonl")
    for a, b in zip(D_src, back):
        for f in ("goal", "obs", "proprio", "actions", "shadow_obs"):
            assert np.array_equal(getattr(a, f), getattr(b, f))
    p2 = sd.ProbeSet.from_jsonl(probes.to_jsonl())
    assert np.array_equal(p2.o_tgt, probes.o_tgt) and list(p2.region) == list(probes.region)


@pytest.mark.parametrize("kw", [{"n_src": 3, "n_tgt": 4}, {"n_tgt": 0}, {"noise_std": -1.0},
                                {"start_radius": 1.0}, {"horizon": 0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        sd.BenchConfig(**kw)


def test_incompetent_expert_fails_loudly():
    with pytest.raises(RuntimeError):
        sd.generate(sd.BenchConfig(n_src=3, n_tgt=1, horizon=3))


def test_trajectory_length_check():
    with pytest.raises(ValueError):
        sd.Trajectory("src", "source", np.zeros(2), np.zeros((3, 4)), np.zeros((2, 2)), np.zeros((3, 2)))
