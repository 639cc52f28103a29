import json
import re
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from nprl.charts import bar_chart_svg, write_report_charts
from nprl.errors import ConfigError, DataError, ShapeError, UndefinedCorrelationError
from nprl.model import Head, TrunkConfig, build_model
from nprl.predictivity import (EXPECTED_NEURONS, NeuralAssembly, StimulusSet, convert_assembly,
                               cross_validated_score, extract_activations, fit_linear_map, fold_indices,
                               generate_synthetic_assembly, load_assembly, make_stimuli, pearson_r,
                               read_report_csv, save_assembly, score_model, standard_error, synthetic_ceiling,
                               write_report, write_synthetic_assembly)
from nprl.verify import pearson_fraction

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_pearson_fixed_case_exact():
    assert pearson_fraction([1, 2, 3, 4], [2, 1, 4, 3]) == Fraction(3, 5)
    assert pearson_r([1, 2, 3, 4], [2, 1, 4, 3]) == pytest.approx(0.6, abs=1e-15)


def test_pearson_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(3, 40))
        a, b = rng.normal(size=n), rng.normal(size=n)
        ma, mb = sum(a) / n, sum(b) / n
        ref = sum((x - ma) * (y - mb) for x, y in zip(a, b)) / (
            sum((x - ma) ** 2 for x in a) * sum((y - mb) ** 2 for y in b)) ** 0.5
        assert abs(pearson_r(a, b) - ref) < 1e-12


@given(st.lists(finite, min_size=3, max_size=30), st.data())
def test_pearson_affine_invariance_symmetry_bounds(y, data):
    y = np.array(y)
    p = np.array(data.draw(st.lists(finite, min_size=len(y), max_size=len(y))))
    assume(y.std() > 1e-3 * max(1.0, np.abs(y).max()) and p.std() > 1e-3 * max(1.0, np.abs(p).max()))
    r = pearson_r(y, p)
    assert -1.0 <= r <= 1.0
    assert pearson_r(p, y) == pytest.approx(r, abs=1e-12)
    a = data.draw(st.floats(0.01, 100))
    b = data.draw(st.floats(-100, 100))
    assert pearson_r(y, a * p + b) == pytest.approx(r, abs=1e-9)
    assert pearson_r(y, -a * p + b) == pytest.approx(-r, abs=1e-9)


def test_pearson_errors():
    with pytest.raises(UndefinedCorrelationError):
        pearson_r([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(UndefinedCorrelationError):
        pearson_r([1.0, 2.0, 3.0], [5.0, 5.0, 5.0 + 1e-12])
    with pytest.raises(ShapeError):
        pearson_r([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ShapeError):
        pearson_r([1.0, 2.0, 3.0], [1.0, 2.0])


def test_standard_error():
    assert standard_error([1.0, 3.0]) == pytest.approx(1.0)
    with pytest.raises(ShapeError):
        standard_error([1.0])


def ridge_pca_oracle(X, Y, k, lam):
    """PCA through the SVD, then the ridge normal equations on standardized scores."""
    mu = X.mean(axis=0)
    _, _, vt = np.linalg.svd(X - mu, full_matrices=False)
    Z = (X - mu) @ vt[:k].T
    sd = Z.std(axis=0)
    Z = Z / sd
    W = np.linalg.inv(Z.T @ Z + lam * np.eye(k)) @ Z.T @ (Y - Y.mean(axis=0))
    return lambda Xn: ((Xn - mu) @ vt[:k].T / sd) @ W + Y.mean(axis=0)


@pytest.mark.parametrize("n,f", [(40, 100), (60, 12)])
def test_linear_map_matches_svd_ridge_oracle(n, f):
    rng = np.random.default_rng(n)
    X, Y, Xn = rng.normal(size=(n, f)), rng.normal(size=(n, 3)), rng.normal(size=(7, f))
    lm = fit_linear_map(X, Y, k=8, lam=0.5)
    np.testing.assert_allclose(lm.predict(Xn), ridge_pca_oracle(X, Y, 8, 0.5)(Xn), atol=1e-9)


def test_linear_map_recovers_exact_linear_target():
    rng = np.random.default_rng(0)
    latent = rng.normal(size=(80, 4))
    X = latent @ rng.normal(size=(4, 30))
    Y = latent @ rng.normal(size=(4, 2)) + 3.0
    lm = fit_linear_map(X, Y, k=4, lam=0.0)
    np.testing.assert_allclose(lm.predict(X), Y, atol=1e-8)


def test_linear_map_errors():
    X = np.random.default_rng(0).normal(size=(10, 5))
    with pytest.raises(ConfigError):
        fit_linear_map(X, X[:, :1], k=2, lam=-1)
    with pytest.raises(ConfigError):
        fit_linear_map(X, X[:, :1], k=9)
    with pytest.raises(ConfigError):
        fit_linear_map(X, X[:, :1], k=6)
    rank2 = X[:, :2] @ np.ones((2, 5))
    with pytest.raises(ConfigError, match="rank"):
        fit_linear_map(rank2 + np.arange(5), X[:, :1], k=4)
    assert fit_linear_map(rank2, X[:, :1], k=4, clamp_k=True).k <= 2
    with pytest.raises(ShapeError):
        fit_linear_map(X, X[:5, :1], k=2)


@given(n=st.integers(4, 200), splits=st.integers(2, 10), seed=st.integers(0, 1000))
def test_folds_partition_rows(n, splits, seed):
    assume(n >= splits)
    folds = fold_indices(n, splits, seed)
    allidx = np.concatenate(folds)
    assert sorted(allidx.tolist()) == list(range(n))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1


def test_cross_validation_on_known_signal():
    rng = np.random.default_rng(0)
    latent = rng.normal(size=(200, 3))
    X = latent @ rng.normal(size=(3, 40)) + 0.01 * rng.normal(size=(200, 40))
    Y = latent @ rng.normal(size=(3, 5))
    cv = cross_validated_score(X, Y, splits=5, k=3, lam=0.01)
    assert cv.score > 0.99 and len(cv.fold_scores) == 5 and cv.n_valid_neurons == 5
    noise = cross_validated_score(X, rng.normal(size=(200, 5)), splits=5, k=3)
    assert abs(noise.score) < 0.2


def test_cross_validation_row_order_invariance_with_ids():
    rng = np.random.default_rng(1)
    X, Y = rng.normal(size=(50, 10)), rng.normal(size=(50, 2)) + rng.normal(size=(50, 1))
    ids = np.array([f"s{i:03d}" for i in range(50)])
    perm = rng.permutation(50)
    a = cross_validated_score(X, Y, 5, 4, stimulus_ids=ids)
    b = cross_validated_score(X[perm], Y[perm], 5, 4, stimulus_ids=ids[perm])
    assert a.fold_scores == b.fold_scores


def test_constant_neuron_in_fold_is_invalid_cell():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 6))
    Y = np.column_stack([X[:, 0], X[:, 1]]) + 0.1 * rng.normal(size=(40, 2))
    Y[fold_indices(40, 4, 0)[2], 1] = 0.7  # flat only where fold 2 is held out
    cv = cross_validated_score(X, Y, splits=4, k=3)
    assert cv.n_invalid == 1 and np.isnan(cv.per_neuron[2, 1])
    assert cv.n_valid_neurons == 2 and len(cv.fold_scores) == 4


def test_huge_ridge_penalty_gives_constant_predictions_and_raises():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 6))
    with pytest.raises(UndefinedCorrelationError):
        cross_validated_score(X, X[:, :2] + 5.0, splits=4, k=3, lam=1e12)


def _stimuli(n=60, res=32):
    return make_stimuli(n, res, seed=0)


def test_synthetic_assembly_noise_ceiling_in_sample():
    model = build_model(TrunkConfig(resolution=32), Head.classifier(4), seed=0)
    stim = _stimuli(200)
    asm, truth, readout = generate_synthetic_assembly(model, "conv2", 30, 0.5, stim, seed=0)
    X = extract_activations(model, stim, ("conv2",))["conv2"].astype(np.float64)
    signal = X @ readout["weights"] + readout["offset"]
    np.testing.assert_allclose(signal.mean(axis=0), 0, atol=1e-8)
    np.testing.assert_allclose(signal.std(axis=0), 1, atol=1e-8)
    rs = [pearson_r(asm.responses[:, j], signal[:, j]) for j in range(30)]
    assert abs(np.mean(rs) - synthetic_ceiling(0.5)) < 0.03
    assert truth["ceiling"] == synthetic_ceiling(0.5) and asm.area == "V1"
    assert synthetic_ceiling(0.0) == 1.0
    with pytest.raises(ConfigError):
        generate_synthetic_assembly(model, "conv7", 3, 0.5, stim)


def test_assembly_schema_roundtrip_and_determinism(tmp_path):
    model = build_model(TrunkConfig(resolution=32), Head.classifier(4), seed=0)
    stim = _stimuli(30)
    for name in ("a", "b"):
        asm, truth, readout = generate_synthetic_assembly(model, "conv1", EXPECTED_NEURONS["V1"], 0.3, stim, seed=4)
        write_synthetic_assembly(tmp_path / name, asm, stim, truth, readout)
    for f in sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file()):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    back, stim_back = load_assembly(tmp_path / "a")
    np.testing.assert_array_equal(back.responses, asm.responses)
    assert back.neuron_ids == asm.neuron_ids and len(back.neuron_ids) == 102
    assert all(np.array_equal(a, b) for a, b in zip(stim_back.images, stim.images))
    meta = json.loads((tmp_path / "a" / "meta.json").read_text())
    assert meta["area"] == "V1" and "provenance" in meta


def test_assembly_validation_errors(tmp_path):
    with pytest.raises(DataError):
        NeuralAssembly("V1", ("a", "b", "c"), ("n",), np.array([[1.0], [1.0], [1.0]]))
    with pytest.raises(DataError):
        NeuralAssembly("V1", ("a", "b"), ("n",), np.array([[1.0], [np.nan]]))
    with pytest.raises(DataError):
        load_assembly(tmp_path)
    stim = StimulusSet(("x", "y", "z"), [np.zeros((4, 4, 3), np.uint8)] * 3)
    asm = NeuralAssembly("IT", ("x", "y", "z"), ("n1",), np.array([[0.0], [1.0], [2.0]]))
    save_assembly(asm, stim, tmp_path / "ok")
    text = (tmp_path / "ok" / "responses.csv").read_text().replace("n1", "n2")
    (tmp_path / "ok" / "responses.csv").write_text(text)
    with pytest.raises(DataError, match="neuron_ids"):
        load_assembly(tmp_path / "ok")
    other = StimulusSet(("x", "y", "w"), [np.zeros((4, 4, 3), np.uint8)] * 3)
    with pytest.raises(DataError):
        asm.aligned(other)


def test_convert_assembly(tmp_path):
    stim = StimulusSet(("s1", "s2", "s3"), [np.full((6, 6, 3), v, np.uint8) for v in (0, 100, 200)])
    src = tmp_path / "src"
    (src / "stimuli").mkdir(parents=True)
    for sid, img in zip(stim.ids, stim.images):
        from PIL import Image
        Image.fromarray(img).save(src / "stimuli" / f"{sid}.png")
    (src / "manifest.csv").write_text("stimulus_id,relative_path\n" + "".join(f"{s},stimuli/{s}.png\n" for s in stim.ids))
    (tmp_path / "r.csv").write_text("stimulus_id,u1,u2\ns2,1.5,0\ns1,0.5,1\ns3,2.5,3\n")
    convert_assembly(tmp_path / "r.csv", src, "V4", tmp_path / "out", provenance="lab export")
    asm, st_ = load_assembly(tmp_path / "out")
    assert asm.area == "V4" and asm.meta["provenance"] == "lab export"
    np.testing.assert_array_equal(asm.aligned(st_)[:, 0], [0.5, 1.5, 2.5])
    (tmp_path / "bad.csv").write_text("id,u1\ns1,1\n")
    with pytest.raises(DataError):
        convert_assembly(tmp_path / "bad.csv", src, "V4", tmp_path / "out2")


def test_score_model_report_grid_workers_and_charts(tmp_path, monkeypatch):
    ref = build_model(TrunkConfig(resolution=32), Head.classifier(4), seed=1)
    stim = _stimuli(60)
    pairs = []
    for area, layer in (("V1", "conv1"), ("IT", "fc")):
        asm, _, _ = generate_synthetic_assembly(ref, layer, 8, 0.5, stim, seed=2, area=area)
        pairs.append((stim, asm))
    one = score_model(ref, pairs, k=10, splits=5, workers=1)
    two = score_model(ref, pairs, k=10, splits=5, workers=2)
    assert one.rows == two.rows
    assert one.grid().shape == (5, 2)
    assert [(r["layer"], r["area"]) for r in one.rows][:2] == [("conv1", "V1"), ("conv1", "IT")]
    assert set(one.best()) == {"V1", "IT"}
    monkeypatch.setenv("NPRL_WORKERS", "0")
    with pytest.raises(ConfigError):
        score_model(ref, pairs, k=10, splits=5)
    write_report(one, tmp_path)
    write_report_charts(one, tmp_path)
    rows = read_report_csv(tmp_path / "report.csv")
    for area in ("V1", "IT"):
        svg = (tmp_path / f"chart_{area}.svg").read_text()
        bars = [float(v) for v in re.findall(r'class="bar"[^>]*data-value="([^"]+)"', svg)]
        errs = [float(v) for v in re.findall(r'class="err"[^>]*data-se="([^"]+)"', svg)]
        assert bars == [r["score"] for r in rows if r["area"] == area]
        assert errs == [r["se"] for r in rows if r["area"] == area]
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["params"]["k"] == 10 and len(doc["rows"]) == 10


def test_bar_chart_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        bar_chart_svg(["a"], [1.0, 2.0], [0.1])
