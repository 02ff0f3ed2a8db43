"""Quick end-to-end check of the bhplab Python module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml --release`.
"""

import json
import math

import bhplab


def main():
    assert bhplab.SCHEMA == "bhplab/1"

    ball = bhplab.Domain.ball([0.0], 1.0)
    assert ball.dim == 1
    assert ball.contains([0.5]) and not ball.contains([1.5])
    assert json.loads(ball.to_json())["kind"] == "ball"

    kernel = bhplab.stable_kernel(1, 1.0)
    mass = bhplab.tail_mass(kernel, [0.0], 2.0)
    assert math.isclose(mass, 1.0, rel_tol=1e-8), mass

    cauchy = bhplab.ProcessModel.isotropic(1.0, 1)
    ys = cauchy.exit_samples(ball, [0.0], 1000, seed=7)
    assert len(ys) == 1000 and all(abs(y[0]) >= 1.0 for y in ys)
    assert ys == cauchy.exit_samples(ball, [0.0], 1000, seed=7)

    far = json.dumps({"kind": "outside-ball", "center": [0.0], "radius": 2.0})
    p, se = cauchy.harmonic_measure(ball, [0.0], far, 200_000, seed=1)
    assert abs(p - 1.0 / 3.0) < 5 * se, (p, se)

    mean, se = cauchy.mean_exit_time(ball, [0.0], 200_000, seed=2)
    assert abs(mean - 1.0) < 5 * se + 0.01, (mean, se)

    config = {
        "kind": "check-kernel",
        "model": {"kind": "isotropic-stable", "alpha": 1.5, "dim": 1},
        "domain": {"kind": "ball", "center": [0.0], "radius": 1.0},
    }
    report = json.loads(bhplab.run_experiment(json.dumps(config)))
    assert report["schema"] == bhplab.SCHEMA
    assert report["kind"] == "check-kernel"

    print("python smoke test ok")


if __name__ == "__main__":
    main()
