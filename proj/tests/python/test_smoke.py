import pytest

import rulmdp


def test_toy_values():
    sol = rulmdp.solve(rulmdp.toy_mdp(), tol=1e-12)
    assert sol["values"] == pytest.approx([10.0, 8.0], abs=1e-8)
    assert sol["policy_names"] == ["keep", "repair"]
    assert rulmdp.bellman_residual(rulmdp.toy_mdp(), sol["values"]) < 1e-8


def test_bad_spec_raises_value_error():
    spec = rulmdp.toy_mdp()
    spec["discount"] = 1.5
    with pytest.raises(ValueError):
        rulmdp.solve(spec)


def test_labels_and_rule():
    assert rulmdp.piecewise_rul(200, 10, 125.0) == 125.0
    assert rulmdp.piecewise_rul(200, 150, 125.0) == 50.0
    assert rulmdp.rule_recommend(9.0) == "ImmediateMaintenance"
    assert rulmdp.rule_recommend(10.0) == "PeriodicInspection"
    assert rulmdp.ACTION_NAMES == ["NoAction", "PartialMaintenance", "CompleteOverhaul"]


def test_agent_is_seeded():
    spec = rulmdp.toy_mdp()
    spec["episode_len"] = 20
    a = rulmdp.train_agent(spec, "ppo", steps=200, seed=3)
    b = rulmdp.train_agent(spec, "ppo", steps=200, seed=3)
    assert a == b
    assert len(a["returns"]) == 10


def test_defaults_and_config_errors():
    defaults = rulmdp.run_config_defaults()
    assert defaults["mdp"]["interval"] == 5
    with pytest.raises(ValueError):
        rulmdp.run_pipeline({"agent": {"kind": "a2c"}})


def test_missing_spec_file():
    with pytest.raises(OSError):
        rulmdp.load_mdp("/nonexistent/spec.json")
