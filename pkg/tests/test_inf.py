import math

import numpy as np
import pytest

from thzdt.chanest import AbgModel
from thzdt.constants import C0
from thzdt.inf import (
    InfModel,
    NormStats,
    Sample,
    TrainConfig,
    TrainingDivergedError,
    batch_loss,
    denormalize_outputs,
    encode_position,
    fallback_features,
    feature_count,
    feature_matrix,
    feature_vector,
    forward,
    forward_features,
    grad_check,
    init_params,
    load_dataset_csv,
    load_model,
    loss_and_grads,
    normalize,
    save_dataset_csv,
    save_model,
    target_matrix,
    train,
)
from thzdt.raytrace import RtFeatures
from thzdt.scene import probe_node


def mk_sample(x, p, tau, az=30.0, el=5.0, n_paths=1, los=True):
    d = float(np.linalg.norm(x))
    rt = RtFeatures(d_m=max(d, 0.5), p_los_db=p + 1.0, tau_los_ns=tau,
                    az_los_deg=az, el_los_deg=el, n_paths=n_paths,
                    los_valid=los)
    return Sample(x=tuple(x), rt=rt, target_p_db=p, target_tau_ns=tau,
                  target_az_deg=az, target_el_deg=el)


def toy_samples(n=8, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        x = rng.uniform(0.5, 9.5, 3)
        p = rng.uniform(-110.0, -80.0)
        tau = rng.uniform(5.0, 40.0)
        az = rng.uniform(0.0, 360.0)
        el = rng.uniform(-30.0, 30.0)
        out.append(mk_sample(x, p, tau, az, el))
    return out


SMALL = TrainConfig(epochs=5, hidden_width=8, hidden_layers=2,
                    encoding_octaves=1)


def test_normalize_round_trip():
    samples = toy_samples()
    normed, stats = normalize(samples)
    for s, sn in zip(samples, normed):
        y = np.array([sn.target_p_db, sn.target_tau_ns,
                      sn.target_az_deg, sn.target_el_deg])
        p, tau, az, el = denormalize_outputs(stats, y)
        assert p == pytest.approx(s.target_p_db, abs=1e-9)
        assert tau == pytest.approx(s.target_tau_ns, abs=1e-9)
        assert az == pytest.approx(s.target_az_deg % 360.0, abs=1e-9)
        assert el == pytest.approx(s.target_el_deg, abs=1e-9)
    # angles are plain /360 scalings
    s180 = mk_sample((1.0, 2.0, 1.0), -90.0, 10.0, az=180.0)
    normed, _ = normalize([s180, mk_sample((2.0, 1.0, 1.0), -95.0, 12.0)])
    assert normed[0].target_az_deg == pytest.approx(0.5, abs=1e-12)


def test_normalize_population_moments():
    samples = toy_samples()
    _, stats = normalize(samples)
    p = np.array([s.target_p_db for s in samples])
    assert stats.p_mean == pytest.approx(float(p.mean()), abs=1e-12)
    assert stats.p_std == pytest.approx(float(p.std(ddof=0)), abs=1e-12)


def test_normalize_validation():
    with pytest.raises(ValueError):
        normalize([mk_sample((1.0, 1.0, 1.0), -90.0, 10.0)])
    same_p = [mk_sample((1.0, 1.0, 1.0), -90.0, 10.0),
              mk_sample((2.0, 2.0, 1.0), -90.0, 20.0)]
    with pytest.raises(ValueError):
        normalize(same_p)
    with pytest.raises(ValueError):
        NormStats(0.0, 1.0, 0.0, 0.0)


def test_denormalize_wraps_and_clips():
    stats = NormStats(0.0, 1.0, 0.0, 1.0)
    y = np.array([0.0, 0.0, 400.0 / 360.0, 100.0 / 360.0])
    _, _, az, el = denormalize_outputs(stats, y)
    assert az == pytest.approx(40.0, abs=1e-9)
    assert el == 90.0


def test_encode_position_shape_and_values():
    x = np.array([1.0, 2.0, 3.0])
    enc = encode_position(x, 2)
    assert enc.shape == (3 + 6 * 2,)
    assert np.allclose(enc[:3], x * 0.1)
    f0 = math.pi / 8.0
    assert enc[3] == pytest.approx(math.sin(f0 * 1.0), abs=1e-12)
    assert enc[6] == pytest.approx(math.cos(f0 * 1.0), abs=1e-12)
    assert enc[9] == pytest.approx(math.sin(2.0 * f0 * 1.0), abs=1e-12)
    batch = encode_position(np.ones((5, 3)), 3)
    assert batch.shape == (5, 3 + 18)


def test_feature_vector_ablation_zeroes_conditioning():
    samples = toy_samples(4)
    _, stats = normalize(samples)
    s = samples[0]
    full = feature_vector(s.x, s.rt, stats, 2)
    ablated = feature_vector(s.x, s.rt, stats, 2, ablate_rt=True)
    assert full.shape == (feature_count(2),)
    assert np.array_equal(full[:-7], ablated[:-7])
    assert np.all(ablated[-7:] == 0.0)
    assert not np.all(full[-7:] == 0.0)


def test_zero_network_predicts_the_mean():
    samples = toy_samples()
    _, stats = normalize(samples)
    sizes = [feature_count(1), 8, 4]
    weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    model = InfModel(encoding_octaves=1, layer_sizes=sizes, weights=weights,
                     biases=biases, norm=stats)
    pred = forward(model, samples[0].x, samples[0].rt)
    assert pred.p_db == pytest.approx(stats.p_mean, abs=1e-12)
    assert pred.tau_ns == pytest.approx(stats.tau_mean, abs=1e-12)
    assert pred.az_deg == 0.0
    assert pred.el_deg == 0.0
    assert pred.los is samples[0].rt.los_valid


def test_fallback_features_oracle():
    tx = probe_node((0.0, 0.0, 0.0), name="tx")
    law = AbgModel(alpha=30.0, beta=70.0, condition="nlos", n_samples=10)
    f = fallback_features((10.0, 0.0, 0.0), tx, law)
    assert f.p_los_db == pytest.approx(-100.0, abs=1e-12)
    assert f.tau_los_ns == pytest.approx(10.0 / C0 * 1e9, abs=1e-12)
    assert f.az_los_deg == pytest.approx(180.0, abs=1e-9)
    assert f.el_los_deg == pytest.approx(0.0, abs=1e-9)
    assert f.n_paths == 0 and not f.los_valid
    f3 = fallback_features((3.0, 0.0, 0.0), tx, law)
    assert f3.tau_los_ns == pytest.approx(10.0, abs=1e-12)
    with pytest.raises(ValueError):
        fallback_features((1.0, 0.0, 0.0), tx, None)
    with pytest.raises(ValueError):
        fallback_features((0.0, 0.0, 0.0), tx, law)


def test_grad_check_analytic_gradients():
    samples = toy_samples(6)
    model, _ = train(samples, SMALL)
    assert grad_check(model, samples) < 1e-4


def test_grad_check_flags_corrupted_gradients():
    samples = toy_samples(6)
    model, _ = train(samples, SMALL)
    X = feature_matrix(samples, model.norm, model.encoding_octaves)
    Y = target_matrix(samples, model.norm)
    _, g_w, g_b = loss_and_grads(model.weights, model.biases, X, Y)
    g_w = [g * 1.5 for g in g_w]
    assert grad_check(model, samples, grads=(g_w, g_b)) > 1e-2


def test_training_reduces_loss():
    samples = toy_samples(12)
    cfg = TrainConfig(epochs=300, hidden_width=16, hidden_layers=2,
                      encoding_octaves=2)
    model, history = train(samples, cfg)
    assert len(history) == cfg.epochs + 1
    assert history[-1] < 0.1 * history[0]
    X = feature_matrix(samples, model.norm, cfg.encoding_octaves)
    Y = target_matrix(samples, model.norm)
    assert batch_loss(model.weights, model.biases, X, Y) == pytest.approx(
        history[-1], rel=1e-9
    )


def test_sgd_full_batch_last_layer_descends_monotonically():
    # hidden layers frozen: optimizing the last linear layer with small
    # steps is a quadratic problem, so every epoch must improve
    samples = toy_samples(10)
    cfg = TrainConfig(epochs=60, optimizer="sgd", learning_rate=1e-2,
                      freeze_hidden=True, hidden_width=8, hidden_layers=2,
                      encoding_octaves=1)
    _, history = train(samples, cfg)
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))


def test_training_diverges_with_huge_sgd_steps():
    samples = toy_samples(8)
    cfg = TrainConfig(epochs=200, optimizer="sgd", learning_rate=1e12,
                      hidden_width=8, hidden_layers=2, encoding_octaves=1)
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError):
        train(samples, cfg)


def test_minibatch_training_runs():
    samples = toy_samples(9)
    cfg = TrainConfig(epochs=20, batch_size=3, hidden_width=8,
                      hidden_layers=2, encoding_octaves=1)
    _, history = train(samples, cfg)
    assert len(history) == 21
    assert history[-1] < history[0]


def test_train_seed_changes_init():
    samples = toy_samples(6)
    m1, _ = train(samples, SMALL)
    m2, _ = train(samples, TrainConfig(epochs=5, hidden_width=8,
                                       hidden_layers=2, encoding_octaves=1,
                                       seed=1))
    assert not np.array_equal(m1.weights[0], m2.weights[0])
    m3, _ = train(samples, SMALL)
    assert np.array_equal(m1.weights[0], m3.weights[0])


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="lbfgs")
    with pytest.raises(ValueError):
        TrainConfig(encoding_octaves=-1)
    with pytest.raises(ValueError):
        train(toy_samples(1), SMALL)


def test_init_params_shapes_and_bound():
    sizes = [10, 8, 4]
    weights, biases = init_params(sizes, seed=3)
    assert [w.shape for w in weights] == [(10, 8), (8, 4)]
    assert all(np.all(b == 0.0) for b in biases)
    bound = math.sqrt(6.0 / 18.0)
    assert np.all(np.abs(weights[0]) <= bound)


def test_batch_loss_zero_when_targets_match():
    sizes = [feature_count(1), 8, 4]
    weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    X = np.ones((5, sizes[0]))
    Y = np.zeros((5, 4))
    assert batch_loss(weights, biases, X, Y) == 0.0


def test_model_round_trip(tmp_path):
    samples = toy_samples(6)
    law = AbgModel(alpha=27.5, beta=74.25, condition="nlos", n_samples=31)
    model, _ = train(samples, SMALL, nlos_fallback=law,
                     order_offsets=(-2.5, -1.25, -3.0))
    path = str(tmp_path / "model.json")
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.encoding_octaves == model.encoding_octaves
    assert loaded.layer_sizes == model.layer_sizes
    assert loaded.norm == model.norm
    assert loaded.nlos_fallback == law
    assert loaded.order_offsets == (-2.5, -1.25, -3.0)
    assert loaded.seed == model.seed
    for a, b in zip(model.weights, loaded.weights):
        assert np.array_equal(a, b)
    for a, b in zip(model.biases, loaded.biases):
        assert np.array_equal(a, b)
    pred0 = forward(model, samples[0].x, samples[0].rt)
    pred1 = forward(loaded, samples[0].x, samples[0].rt)
    assert pred0 == pred1


def test_load_model_validation(tmp_path):
    samples = toy_samples(6)
    model, _ = train(samples, SMALL)
    path = str(tmp_path / "model.json")
    save_model(model, path)
    import json

    header = json.loads(open(path).read())
    header["layer_sizes"][-1] = 3
    bad = str(tmp_path / "bad.json")
    open(bad, "w").write(json.dumps(header))
    with pytest.raises(ValueError):
        load_model(bad)
    header = json.loads(open(path).read())
    header["encoding_octaves"] = 4
    bad2 = str(tmp_path / "bad2.json")
    open(bad2, "w").write(json.dumps(header))
    with pytest.raises(ValueError):
        load_model(bad2)


def test_dataset_csv_round_trip(tmp_path):
    samples = toy_samples(5)
    path = str(tmp_path / "dataset.csv")
    save_dataset_csv(path, samples)
    loaded = load_dataset_csv(path)
    assert len(loaded) == 5
    for a, b in zip(samples, loaded):
        assert np.allclose(a.x, b.x, rtol=1e-8)
        assert b.target_p_db == pytest.approx(a.target_p_db, rel=1e-8)
        assert b.rt.n_paths == a.rt.n_paths
        assert b.rt.los_valid == a.rt.los_valid
