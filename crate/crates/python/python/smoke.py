"""Smoke test for the nnpnn extension module."""

import json

import nnpnn


def main():
    rng = nnpnn.Rng(0)

    g = nnpnn.TargetNetwork.generate(rng)
    assert 27 <= g.param_count <= 147
    assert len(g([0.5, -1.0])) == 2

    net = nnpnn.TargetNetwork.from_params(1, 1, 1, 1, [2.0, 0.0, 1.0, 0.0])
    assert abs(net([1.0])[0] - 0.96402758) < 1e-8

    xs = nnpnn.random_input(rng, 10_000)
    mean = sum(xs) / len(xs)
    var = sum((x - mean) ** 2 for x in xs) / (len(xs) - 1)
    assert abs(mean) < 0.5 and 90 < var < 110, (mean, var)

    host = nnpnn.Host(rng, input_dim=2, width1=8, width2=8)
    out, queries, reads = host.forward(g, [0.3, 0.4])
    assert len(out) == 2 and len(queries) == 8 and len(reads) == 8
    assert reads[0] == g(queries[0])

    assert nnpnn.manhattan_ratio([1, 1], [2, 2]) == 0.5
    try:
        nnpnn.manhattan_ratio([1, 1], [0, 0])
    except nnpnn.ResampleRequired:
        pass
    else:
        raise AssertionError("zero-norm target accepted")

    s = nnpnn.summarize([0.05, 0.20, 0.30])
    assert s["median"] == 0.20 and abs(s["frac_within_25"] - 2 / 3) < 1e-12

    try:
        nnpnn.Trainer("compress", json.dumps({"meta": {"meta_dim": 27}}))
    except nnpnn.ConfigError:
        pass
    else:
        raise AssertionError("meta_dim 27 accepted")

    cfg = json.dumps({"iterations": 200, "eval_every": 100, "eval_trials": 20,
                      "host": {"width1": 8, "width2": 8}})
    trainer = nnpnn.Trainer("inverse", cfg)
    trainer.run(100)
    ck = trainer.checkpoint()
    trainer.run(200)
    resumed = nnpnn.Trainer.from_checkpoint(ck)
    resumed.run(200)
    assert resumed.checkpoint() == trainer.checkpoint()
    rows = trainer.history()
    assert [r["iteration"] for r in rows] == [100, 200]
    stats = trainer.evaluate(50)
    assert stats["trials"] == 50

    reports = nnpnn.gradcheck(seed=0)
    assert sum(r["configs"] for r in reports) >= 100
    assert all(r["passed"] for r in reports)

    print("nnpnn", nnpnn.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
