import json

import numpy as np
import pytest

from smp_perturb import catalog
from smp_perturb.model import (
    ModelParseError,
    ModelValidationError,
    eval_kernel,
    holding_distributions,
    load_model,
    make_model,
    model_from_dict,
    model_to_dict,
    transition_probs,
    validate_conditions,
)
from smp_perturb.oracle import dp_g_all

MODELS = __import__("pathlib").Path(__file__).resolve().parents[1] / "models"


def test_load_m1_row_sums(tmp_path):
    m = load_model(MODELS / "M1.model")
    for e in np.linspace(0, m.eps_max, 7):
        np.testing.assert_allclose(eval_kernel(m, e).sum(axis=(1, 2)), 1.0, atol=1e-12)


def test_load_m2_valid():
    m = load_model(MODELS / "M2.model")
    assert m.n_states == 2 and m.k_max == 1


def test_broken_model_reports_worst_point():
    with pytest.raises(ModelValidationError) as info:
        load_model(MODELS / "broken.model")
    err = info.value
    assert "row-sum" in str(err)
    assert err.location["eps"] == pytest.approx(0.4)
    assert err.location["i"] == 1


def test_eval_kernel_examples(M1, M2):
    q = eval_kernel(M1, 0.0)
    assert q[0, 1, 0] == 0.5 and q[0, 0, 0] == 0.5
    assert eval_kernel(M1, 0.1)[0, 1, 0] == pytest.approx(0.4)
    q = eval_kernel(M2, 0.2)
    assert q[1, 1, 0] == pytest.approx(0.8) and q[1, 0, 0] == pytest.approx(0.2)


def test_eval_kernel_at_zero_is_constant_term(small_randoms):
    for m in small_randoms:
        assert np.array_equal(eval_kernel(m, 0.0), m.kernel.coeffs[0])


def test_eval_kernel_range(M1):
    with pytest.raises(ValueError):
        eval_kernel(M1, 0.5)
    with pytest.raises(ValueError):
        eval_kernel(M1, -0.1)


def test_transition_and_holding(two_step):
    p = transition_probs(two_step, 0.25)
    assert p[0, 1] == pytest.approx(1.0)
    f = holding_distributions(two_step, 0.25)
    np.testing.assert_allclose(f[0, 1], [0.75, 0.25])


def test_validate_conditions_examples(M1, M2):
    for m in (M1, M2):
        rep = validate_conditions(m)
        assert rep.a_holds and rep.b_holds and rep.c_holds
        assert rep.witnesses["C"]["phi"] > 1.0
    rep = validate_conditions(catalog.disconnected())
    assert not rep.b_holds
    assert not rep.witnesses["B"]["reachable"][0, 1]


def test_reachability_agrees_with_oracle(small_randoms):
    for m in small_randoms + [catalog.disconnected(), catalog.m2()]:
        rep = validate_conditions(m)
        n_max = m.n_states * m.k_max * 4
        g = dp_g_all(m, 0.0, n_max).sum(axis=2)  # [j, i]
        np.testing.assert_array_equal(g.T > 0, rep.witnesses["B"]["reachable"])


def test_roundtrip_json_and_yaml(tmp_path, M2):
    doc = model_to_dict(M2)
    p = tmp_path / "m.model"
    p.write_text(json.dumps(doc))
    m = load_model(p)
    assert np.array_equal(m.kernel.coeffs, M2.kernel.coeffs)
    y = tmp_path / "m.yaml"
    y.write_text("n_states: 1\nk_max: 1\neps_max: 0.1\nentries:\n  - {i: 1, j: 0, k: 1, coeffs: [1]}\n")
    assert load_model(y).n_states == 1


@pytest.mark.parametrize(
    "doc",
    [
        {"k_max": 1, "eps_max": 0.1, "entries": []},
        {"n_states": 1, "k_max": 1, "eps_max": -1, "entries": []},
        {"n_states": 1, "k_max": 1, "eps_max": 0.1, "entries": [{"i": 2, "j": 0, "k": 1, "coeffs": [1]}]},
        {"n_states": 1, "k_max": 1, "eps_max": 0.1, "entries": [{"i": 1, "j": 0, "k": 1, "coeffs": "x"}]},
    ],
)
def test_parse_errors(doc):
    with pytest.raises(ModelParseError):
        model_from_dict(doc)


def test_malformed_file(tmp_path):
    p = tmp_path / "bad.model"
    p.write_text("{not: [valid")
    with pytest.raises(ModelParseError):
        load_model(p)


def test_negative_entry_rejected():
    with pytest.raises(ModelValidationError) as info:
        make_model(1, 1, {(1, 1, 1): [0.1, -1.0], (1, 0, 1): [0.9, 1.0]}, 0.4)
    assert "non-negative" in str(info.value)
