import logging
import math

import numpy as np
import pandas as pd
import pytest
from scipy.optimize import minimize_scalar

from conftest import START_MS
from trendforge.models import gbdt
from trendforge.models.gbdt import BoostedModel, HyperParams, TreeNode
from trendforge.transform.pipeline import FeatureFrame, SplitIndices
from trendforge.utils.errors import ParameterError, SchemaVersionError, SingleClassError

logger = logging.getLogger(__name__)

N_PAIRS = 1000

# Sin regularizacion: las formulas se reducen a las del gradient boosting clasico
PLAIN = HyperParams(n_estimators=1, eta=1.0, max_depth=1, min_child_weight=0.0, subsample=1.0,
                    colsample=1.0, gamma=0.0, alpha=0.0, reg_lambda=1.0)


@pytest.fixture(scope="module")
def dataset():
    """Fixture: 240 filas, 5 columnas, etiqueta ruidosa dependiente de 2 columnas"""
    rng = np.random.default_rng(17)
    X = rng.normal(size=(240, 5))
    y = ((X[:, 0] - 0.7 * X[:, 2] + rng.normal(scale=0.4, size=240)) > 0).astype(np.int8)
    return X, y


@pytest.fixture(scope="module")
def small_params():
    """Fixture: ensamble chico con submuestreo activo"""
    return HyperParams(n_estimators=25, eta=0.3, max_depth=3, min_child_weight=1.0, subsample=0.8,
                       colsample=0.8, gamma=0.1, alpha=0.5, reg_lambda=1.0, seed=42)


@pytest.fixture(scope="module")
def fitted(dataset, small_params):
    """Fixture: modelo entrenado sobre el dataset sintetico"""
    X, y = dataset
    return gbdt.fit_boosted(X, y, small_params, feature_names=[f"x{j}" for j in range(5)], quiet=True)


def leaf_objective(G, H, w, params):
    return G * w + 0.5 * (H + params.reg_lambda) * w ** 2 + params.alpha * abs(w)


# ============================================================================
# TEST 1-3: GRADIENTES Y FORMULAS DE HOJA
# ============================================================================

def test_01_grad_hess_examples_and_finite_differences():
    g, h = gbdt.logistic_grad_hess(np.array([1, 0]), np.array([0.0, 0.0]))
    assert list(g) == [-0.5, 0.5]
    assert list(h) == [0.25, 0.25]

    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, N_PAIRS).astype(float)
    margin = rng.uniform(-5, 5, N_PAIRS)

    def loss(m):
        return np.logaddexp(0.0, m) - y * m

    eps1, eps2 = 1e-5, 1e-4
    g, h = gbdt.logistic_grad_hess(y, margin)
    fd_grad = (loss(margin + eps1) - loss(margin - eps1)) / (2 * eps1)
    fd_hess = (loss(margin + eps2) - 2 * loss(margin) + loss(margin - eps2)) / eps2 ** 2
    assert np.max(np.abs(g - fd_grad)) < 1e-6
    assert np.max(np.abs(h - fd_hess)) < 1e-4
    logger.info(f"Test 1 PASS: g, h vs diferencias finitas en {N_PAIRS:,} pares")


def test_02_leaf_weight():
    assert gbdt.leaf_weight(2.0, 3.0, PLAIN) == pytest.approx(-0.5)

    l1 = HyperParams(alpha=0.5, reg_lambda=1.0)
    assert gbdt.leaf_weight(0.4, 2.0, l1) == 0.0
    assert gbdt.leaf_weight(-0.5, 2.0, l1) == 0.0
    assert gbdt.leaf_weight(1.0, 0.0, HyperParams(reg_lambda=0.0)) == 0.0

    rng = np.random.default_rng(1)
    for G, H in zip(rng.normal(0, 3, 50), rng.uniform(0, 5, 50)):
        oracle = minimize_scalar(lambda w: leaf_objective(G, H, w, l1), bounds=(-20, 20),
                                 method='bounded', options={'xatol': 1e-12})
        assert gbdt.leaf_weight(G, H, l1) == pytest.approx(oracle.x, abs=1e-7)
    logger.info("Test 2 PASS: peso de hoja = minimizador del objetivo por hoja")


def test_03_split_gain():
    no_gamma = HyperParams(gamma=0.0, alpha=0.0, reg_lambda=1.0)
    assert gbdt.split_gain(1.0, 1.0, 1.0, 1.0, no_gamma) == pytest.approx(-1 / 6)

    separating = HyperParams(gamma=0.0, alpha=0.0, reg_lambda=0.0)
    assert gbdt.split_gain(-2.0, 1.0, 2.0, 1.0, separating) == pytest.approx(4.0)

    params = HyperParams(gamma=0.1, alpha=0.5, reg_lambda=1.0)
    rng = np.random.default_rng(2)
    for _ in range(200):
        G_L, G_R = rng.normal(0, 3, 2)
        H_L, H_R = rng.uniform(0, 4, 2)

        def best(G, H):
            return leaf_objective(G, H, gbdt.leaf_weight(G, H, params), params)

        reduction = best(G_L + G_R, H_L + H_R) - best(G_L, H_L) - best(G_R, H_R) - params.gamma
        assert gbdt.split_gain(G_L, H_L, G_R, H_R, params) == pytest.approx(reduction, abs=1e-10)
    logger.info("Test 3 PASS: ganancia = reduccion del objetivo cuadratico")


# ============================================================================
# TEST 4-7: CONSTRUCCION DE ARBOLES
# ============================================================================

def test_04_constant_columns_single_leaf():
    X = np.ones((20, 3))
    rng = np.random.default_rng(3)
    g, h = rng.normal(size=20), rng.uniform(0.1, 0.25, 20)

    tree = gbdt.build_tree(X, g, h, np.arange(20), [0, 1, 2], HyperParams(min_child_weight=0.0, gamma=0.0))
    assert tree.is_leaf
    assert tree.weight == pytest.approx(gbdt.leaf_weight(g.sum(), h.sum(), HyperParams()))
    logger.info("Test 4 PASS: columnas constantes -> una sola hoja")


def test_05_stump_threshold_at_midpoint():
    X = np.array([[0.0], [1.0]])
    tree = gbdt.build_tree(X, np.array([-1.0, 1.0]), np.array([1.0, 1.0]), np.arange(2), [0], PLAIN)

    assert not tree.is_leaf
    assert (tree.feature, tree.threshold) == (0, 0.5)
    assert tree.left.weight == pytest.approx(0.5)
    assert tree.right.weight == pytest.approx(-0.5)
    assert list(tree.predict(np.array([[0.5], [0.4999]]))) == [-0.5, 0.5]
    logger.info("Test 5 PASS: threshold en el punto medio, empate va a la derecha")


def brute_best_gain(X, g, h, rows, params):
    best = None
    for col in range(X.shape[1]):
        values = np.unique(X[rows, col])
        for a, b in zip(values[:-1], values[1:]):
            threshold = 0.5 * (a + b)
            left = rows[X[rows, col] < threshold]
            right = rows[X[rows, col] >= threshold]
            if h[left].sum() < params.min_child_weight or h[right].sum() < params.min_child_weight:
                continue
            gain = gbdt.split_gain(g[left].sum(), h[left].sum(), g[right].sum(), h[right].sum(), params)
            best = gain if best is None else max(best, gain)
    return best


def test_06_greedy_nodes_match_exhaustive_scan():
    params = HyperParams(max_depth=2, min_child_weight=0.3, gamma=0.05, alpha=0.1, reg_lambda=1.0)
    rng = np.random.default_rng(6)

    for _ in range(20):
        X = rng.normal(size=(8, 2))
        g = rng.normal(size=8)
        h = rng.uniform(0.05, 0.25, 8)
        tree = gbdt.build_tree(X, g, h, np.arange(8), [0, 1], params)

        def check(node, rows, depth):
            best = brute_best_gain(X, g, h, rows, params)
            if node.is_leaf:
                assert depth >= params.max_depth or best is None or best <= 1e-12
                return
            assert node.gain == pytest.approx(best, rel=1e-9, abs=1e-12)
            goes_left = X[rows, node.feature] < node.threshold
            check(node.left, rows[goes_left], depth + 1)
            check(node.right, rows[~goes_left], depth + 1)

        check(tree, np.arange(8), 0)
    logger.info("Test 6 PASS: cada nodo elige el split de mayor ganancia")


def test_07_stump_is_globally_optimal():
    params = HyperParams(max_depth=1, min_child_weight=0.0, gamma=0.02, alpha=0.2, reg_lambda=1.0)
    rng = np.random.default_rng(7)

    def objective_of(groups):
        total = 0.0
        for rows in groups:
            G, H = g[rows].sum(), h[rows].sum()
            total += leaf_objective(G, H, gbdt.leaf_weight(G, H, params), params) + params.gamma
        return total

    for _ in range(20):
        X = rng.normal(size=(8, 2))
        g = rng.normal(size=8)
        h = rng.uniform(0.05, 0.25, 8)
        rows = np.arange(8)
        tree = gbdt.build_tree(X, g, h, rows, [0, 1], params)

        candidates = [objective_of([rows])]
        for col in range(2):
            for value in np.unique(X[:, col])[1:]:
                mask = X[:, col] < value
                candidates.append(objective_of([rows[mask], rows[~mask]]))

        if tree.is_leaf:
            achieved = objective_of([rows])
        else:
            mask = X[:, tree.feature] < tree.threshold
            achieved = objective_of([rows[mask], rows[~mask]])
        assert achieved == pytest.approx(min(candidates), abs=1e-10)
    logger.info("Test 7 PASS: stump == minimo global por enumeracion")


# ============================================================================
# TEST 8-12: ENTRENAMIENTO Y PREDICCION
# ============================================================================

def test_08_single_tree_fits_separable_points():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    params = HyperParams(n_estimators=1, eta=1.0, max_depth=3, min_child_weight=0.0, subsample=1.0,
                         colsample=1.0, gamma=0.0, alpha=0.0, reg_lambda=1.0)

    model = gbdt.fit_boosted(X, y, params, quiet=True)

    assert len(model.trees) == 1
    assert (gbdt.predict_label(model, X) == y).all()
    assert model.history[-1]['error'] == 0.0

    # 200 puntos separables por x0 con margen; sin regularizacion salvo lambda
    rng = np.random.default_rng(8)
    x0 = rng.uniform(0.2, 2.0, 200) * rng.choice([-1.0, 1.0], 200)
    X = np.column_stack([x0, rng.normal(size=200), rng.normal(size=200)])
    y = (x0 > 0).astype(np.int8)
    params = HyperParams(n_estimators=50, eta=0.3, max_depth=3, min_child_weight=0.0, subsample=1.0,
                         colsample=1.0, gamma=0.0, alpha=0.0, reg_lambda=1.0)

    model = gbdt.fit_boosted(X, y, params, quiet=True)

    assert len(model.trees) == 50
    assert (gbdt.predict_label(model, X) == y).mean() == 1.0
    logger.info("Test 8 PASS: exactitud de entrenamiento 1.0 (4 y 200 puntos)")


def test_09_training_is_deterministic(dataset, small_params):
    X, y = dataset
    frame = FeatureFrame(
        timestamps=START_MS + 900_000 * np.arange(len(y), dtype=np.int64),
        features=pd.DataFrame(X, columns=[f"x{j}" for j in range(5)]),
        labels=y,
    )
    split = SplitIndices(train_end=200, test_start=200, p=1 / 6, m=240)

    first = gbdt.serialize(gbdt.train(frame, split, small_params))
    second = gbdt.serialize(gbdt.train(frame, split, small_params))
    assert first == second
    assert len(first['trees']) == small_params.n_estimators

    other_seed = HyperParams(**{**small_params.to_dict(), 'seed': 7})
    assert gbdt.serialize(gbdt.train(frame, split, other_seed)) != first
    logger.info("Test 9 PASS: misma semilla -> modelo identico")


def test_10_staged_margins_equal_truncated_models(fitted, dataset):
    X, _ = dataset
    stages = gbdt.staged_margins(fitted, X)
    assert stages.shape == (len(fitted.trees), len(X))

    for k in (1, 7, 13, len(fitted.trees)):
        np.testing.assert_array_equal(stages[k - 1], gbdt.predict_margin(fitted.truncated(k), X))

    empty = fitted.truncated(0)
    assert (gbdt.predict_margin(empty, X) == empty.base_margin).all()

    leaf_only = BoostedModel([TreeNode(weight=0.8)], 0.5, ('a',), HyperParams())
    assert gbdt.predict_margin(leaf_only, np.array([[3.0]]))[0] == pytest.approx(0.4)

    with pytest.raises(ParameterError):
        gbdt.predict_margin(fitted, X[:, :3])
    logger.info("Test 10 PASS: margenes por etapa == modelos truncados")


def test_11_staged_metrics(fitted, dataset):
    X, y = dataset
    frame = FeatureFrame(
        timestamps=START_MS + 900_000 * np.arange(len(y), dtype=np.int64),
        features=pd.DataFrame(X, columns=list(fitted.feature_names)),
        labels=y,
    )
    curves = gbdt.staged_metrics(fitted, frame)
    assert list(curves.columns) == ['iteration', 'logloss', 'error']
    assert len(curves) == len(fitted.trees)
    assert curves['logloss'].iloc[-1] == pytest.approx(fitted.history[-1]['logloss'], rel=1e-9)

    neutral = BoostedModel([TreeNode(weight=0.0)], 0.1, fitted.feature_names, HyperParams())
    assert gbdt.staged_metrics(neutral, frame)['logloss'].iloc[0] == pytest.approx(math.log(2))
    logger.info("Test 11 PASS: curvas por iteracion")


def test_12_loss_decreases_and_audit_passes(dataset):
    X, y = dataset
    params = HyperParams(n_estimators=10, eta=0.1, subsample=1.0, colsample=1.0)
    model = gbdt.fit_boosted(X, y, params, quiet=True)

    assert model.history[-1]['logloss'] < model.history[0]['logloss'] < math.log(2)
    assert gbdt.audit_tree(model) == []

    importance = gbdt.feature_importance(model, 'gain')
    assert importance.idxmax() in ('f0', 'f2')
    assert gbdt.feature_importance(model, 'weight').sum() == sum(t.n_leaves() - 1 for t in model.trees)
    with pytest.raises(ParameterError):
        gbdt.feature_importance(model, 'shap')
    logger.info("Test 12 PASS: log loss decreciente y auditoria sin violaciones")


# ============================================================================
# TEST 13-15: INVARIANZA, VALIDACION Y SERIALIZACION
# ============================================================================

def test_13_monotone_transform_keeps_labels(dataset, small_params, fitted):
    X, y = dataset
    transformed = X.copy()
    transformed[:, 0] = np.exp(transformed[:, 0])

    model = gbdt.fit_boosted(transformed, y, small_params, feature_names=fitted.feature_names, quiet=True)
    np.testing.assert_array_equal(gbdt.predict_label(model, transformed), gbdt.predict_label(fitted, X))
    logger.info("Test 13 PASS: transformacion monotona no cambia etiquetas")


def test_14_validation_errors(dataset):
    X, y = dataset
    for bad in ({'eta': 0.0}, {'subsample': 1.5}, {'max_depth': 0}, {'gamma': -1.0}, {'n_estimators': 0}):
        with pytest.raises(ParameterError):
            HyperParams(**bad).validate()
    with pytest.raises(SingleClassError):
        gbdt.fit_boosted(X, np.ones(len(y)), HyperParams(n_estimators=2), quiet=True)
    logger.info("Test 14 PASS: hiperparametros invalidos rechazados")


def test_15_serialization(fitted, dataset, tmp_path):
    X, _ = dataset
    path = gbdt.save_model(fitted, tmp_path / 'model.json', {'config_hash': 'abc'})
    restored = gbdt.load_model(path)

    np.testing.assert_array_equal(gbdt.predict_margin(restored, X), gbdt.predict_margin(fitted, X))
    assert restored.feature_names == fitted.feature_names
    assert gbdt.serialize(restored, {'config_hash': 'abc'}) == gbdt.serialize(fitted, {'config_hash': 'abc'})

    document = {'schema': gbdt.SCHEMA_VERSION, 'eta': '0.5', 'feature_names': ['a'], 'params': {},
                'trees': [{'leaf': '0.8'}]}
    assert gbdt.predict_margin(gbdt.deserialize(document), np.array([[1.0]]))[0] == pytest.approx(0.4)

    with pytest.raises(SchemaVersionError):
        gbdt.deserialize({**document, 'schema': 'trendforge_gbdt_v0'})
    logger.info("Test 15 PASS: serializacion exacta y version de esquema")
