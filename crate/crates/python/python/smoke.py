"""Smoke test for the switchscope_py extension.

Run from anywhere after `pip install crates/python`:

    python crates/python/python/smoke.py
"""

import json
import math
import os
import sys
import tempfile

import switchscope_py as ss

HERE = os.path.dirname(os.path.abspath(__file__))
FIXTURES = os.path.join(HERE, "..", "..", "core", "fixtures")


def fixture(name):
    return ss.System.load(os.path.join(FIXTURES, name))


def main():
    worked = fixture("worked_example.json")
    assert len(worked) == 6, worked
    assert worked.labels == ["1", "2", "3", "4", "5", "6"]
    for k in range(4):
        assert worked.markov_parameter("2", k) == [[2.0**k]]
        assert worked.markov_parameter("6", k) == [[5.0**k]]

    report = ss.analyze(worked, find_input=True)
    assert report["detectability"]["status"] == "Detectable"
    assert report["observability"] is False
    assert report["qhat"] == ["1", "2", "3", "5", "6"]
    assert len(report["decomposition"]["edges"]) == 8
    assert json.loads(json.dumps(report)) == report
    assert ss.detectability(worked) == "Detectable"
    assert not worked.is_observable()

    assert ss.detectability(fixture("autociclo.json")) == "NotDetectable"

    try:
        ss.System.from_json('{"modes": {}}')
    except ss.SwitchscopeError:
        pass
    else:
        raise AssertionError("empty system accepted")

    pair = fixture("observable_pair.json")
    policy = json.dumps(
        {
            "kind": "schedule",
            "jumps": [
                {"time": 0.7, "from": "a", "to": "b"},
                {"time": 1.4, "from": "b", "to": "a"},
            ],
        }
    )
    u = json.dumps({"kind": "exponential", "z": [1.0], "lambda": 0.5})
    run = ss.simulate(pair, "a", [1.0, -1.0], horizon=2.0, dt=1e-3, input=u, policy=policy)
    assert run.modes == ["a", "b", "a"]
    assert len(run) == 2001

    with tempfile.TemporaryDirectory() as d:
        prefix = os.path.join(d, "trace")
        run.save(prefix)
        again = ss.Execution.load(prefix)
        assert again.final_state() == run.final_state()

    conv = ss.observe(pair, run, epsilon=1e-3)
    assert conv["mode_accuracy"] == 1.0
    assert conv["t_hat"] is not None and conv["t_hat"] < 0.1
    assert all(i["max_error"] <= 1e-3 for i in conv["intervals"])

    # free response of x' = 3x
    scalar = ss.System.from_json('{"modes": {"q": {"A": 3, "B": 0, "C": 1}}}')
    x = ss.simulate(scalar, "q", [1.0], horizon=1.0).final_state()[0]
    assert abs(x - math.e**3) <= 1e-9 * math.e**3, x

    print("switchscope_py smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
