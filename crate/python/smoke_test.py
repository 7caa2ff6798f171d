"""Smoke test for the hsavsr Python extension.

Build and install first, e.g.

    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/hsavsr-*.whl
"""

import math
import tempfile
from pathlib import Path

import numpy as np

import hsavsr


def tensor(a):
    a = np.asarray(a, dtype=np.float32)
    return hsavsr.Tensor(list(a.shape), a.ravel().tolist())


def array(t):
    return np.asarray(t.data, dtype=np.float32).reshape(t.shape)


def main():
    rng = np.random.default_rng(0)

    x = rng.uniform(-1, 1, (2, 5, 5))
    k = rng.uniform(-1, 1, (3, 2, 3, 3))
    y = array(hsavsr.conv2d(tensor(x), tensor(k)))
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros((3, 5, 5))
    for o in range(3):
        for i in range(5):
            for j in range(5):
                ref[o, i, j] = np.sum(k[o] * padded[:, i:i + 3, j:j + 3])
    assert np.abs(y - ref).max() < 1e-5

    s = array(hsavsr.softmax(tensor(rng.normal(size=(5, 4, 4))), 0))
    assert np.allclose(s.sum(axis=0), 1.0, atol=1e-6)

    names = [n for n, _, _ in hsavsr.filter_kernels()]
    assert names[0] == "blur-mean-3x3" and len(names) == 5

    h = tensor(np.full((4, 6, 6), 0.25))
    for entry in hsavsr.hidden_state_pool(h):
        assert entry.max_abs_diff(h) < 1e-6

    q = tensor(rng.normal(size=(4, 3, 3)))
    keys = [tensor(rng.normal(size=(4, 3, 3))) for _ in range(3)]
    values = [tensor(rng.normal(size=(4, 3, 3))) for _ in range(3)]
    _, weights = hsavsr.sca_aggregate(q, keys, values)
    assert np.allclose(array(weights).sum(axis=0), 1.0, atol=1e-6)

    hr = tensor(rng.uniform(0, 1, (3, 32, 32)))
    lr = hsavsr.degrade_frame(hr, 1.0, 2.0, r=4, crf=24, seed=5)
    assert lr.shape == [3, 8, 8]
    assert lr == hsavsr.degrade_frame(hr, 1.0, 2.0, r=4, crf=24, seed=5)

    model = hsavsr.Model.init(channels=8, rb1_blocks=1, rb2_blocks=1, seed=1)
    frames = [tensor(rng.uniform(0, 1, (3, 8, 8))) for _ in range(3)]
    out = model.run(frames)
    assert [o.shape for o in out] == [[3, 32, 32]] * 3
    ablated = model.run_zero_hidden(frames)
    assert out[0] == ablated[0]

    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "model.hsb"
        model.save(path)
        again = hsavsr.Model.load(path)
        assert again.hash == model.hash
        hsavsr.write_frame(out[0], Path(d) / "frame.ppm")
        back = hsavsr.read_frame(Path(d) / "frame.ppm")
        assert back.max_abs_diff(out[0]) <= 0.5 / 255 + 1e-6
        assert math.isinf(hsavsr.psnr(back, back))

    worst = max(err for _, _, err in hsavsr.gradient_suite(seed=0, per_primitive=1))
    assert worst < 1e-3, worst

    print("python smoke test passed")


if __name__ == "__main__":
    main()
