"""Smoke test for the kneeseg Python module.

    pip install maturin
    maturin develop -m crates/py/Cargo.toml --release
    python python/smoke_test.py
"""

import math
import tempfile

import kneeseg


def main():
    dims = (4, 5, 3)
    data = [math.sin(i) for i in range(60)]
    vol = kneeseg.Volume(dims, data)
    tucker = kneeseg.hosvd(vol, dims)
    assert vol.relative_error(tucker.reconstruct()) < 1e-10
    _, fits = kneeseg.hooi(vol, (2, 2, 2))
    assert all(b >= a - 1e-10 for a, b in zip(fits, fits[1:]))

    volume, truth = kneeseg.make_phantom({"dims": [24, 24, 20], "rng_seed": 3})
    low = kneeseg.blockwise_lowrank(volume, block_depth=10, slice_rank=3)
    source = kneeseg.stub_segment(volume, {"erosion_depth": 1})
    lowrank = kneeseg.stub_segment(low)
    labels = kneeseg.matte(volume, source, lowrank)
    fused = kneeseg.evaluate(labels, truth)["mean"]["dice"]
    base = kneeseg.evaluate(source.argmax(), truth)["mean"]["dice"]
    print(f"dice source-only {base:.4f}, fused {fused:.4f}")
    assert fused >= base

    assert kneeseg.trimap(2, 1, [True, False], [True, True]) == [2, 1]
    probs = kneeseg.ProbMap((2, 1, 1), 2, [0.5, 0.5, 0.5, 0.5])
    loss = kneeseg.wce_loss(probs, kneeseg.Labels((2, 1, 1), 2, [0, 1]))
    assert abs(loss - math.log(2)) < 1e-9

    with tempfile.TemporaryDirectory() as d:
        labels.write(f"{d}/labels")
        assert kneeseg.Labels.read(f"{d}/labels", 3).labels() == labels.labels()
        cfg = kneeseg.default_config()
        cfg["input"]["phantom"]["dims"] = [24, 24, 20]
        cfg["output_dir"] = f"{d}/run"
        summary = kneeseg.run_pipeline(cfg)
        print("pipeline mean dice", summary["metrics"]["mean"]["dice"])
        try:
            kneeseg.Volume.read(f"{d}/missing")
        except kneeseg.FormatError:
            pass
        else:
            raise AssertionError("missing file should raise FormatError")

    print("ok")


if __name__ == "__main__":
    main()
