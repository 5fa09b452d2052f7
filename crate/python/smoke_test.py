"""Quick end-to-end check of the Python bindings.

Run after `pip install --no-build-isolation ./crates/python`.
"""

import math
import pathlib
import tempfile

import onsensor_cs as cs

ROOT = pathlib.Path(__file__).resolve().parent.parent
CORPUS = ROOT / "crates" / "core" / "tests" / "data" / "corpus"


def main():
    assert abs(cs.junction_capacitance() - 32.8) / 32.8 < 0.02
    weight, _ = cs.fit_weight()
    assert abs(weight - 1.2229) < 1e-3
    assert cs.onchip_compression(9) == 43.75
    power = cs.estimate_power(0.25, design="design2")
    assert abs(power["savings_pct"] - 23.48) < 0.1

    moon = cs.Image.load(str(CORPUS / "moon.pgm"))
    y = cs.sample(moon, "binary", truncated_bits=1)
    assert y.bit_depth == 8

    blob = cs.encode(y.image)
    assert cs.decode(blob) == y.image
    lossy = cs.decode(cs.encode(y.image, quality=75))
    assert len(cs.encode(y.image, quality=75)) < len(blob)

    recon, iterations, _ = cs.reconstruct(y.with_image(lossy), max_iters=30)
    db = cs.psnr(moon, recon)
    assert 25.0 < db < math.inf, db

    with tempfile.TemporaryDirectory() as out:
        cfg = cs.PipelineConfig(
            inputs=[str(CORPUS / "camera.pgm")], kind="binary", codec="lossless", max_iters=20, output_dir=out
        )
        rows = cs.run_pipeline(cfg)
        assert rows[0]["image"] == "camera" and rows[0]["onchip_compression_pct"] == 43.75
        assert (pathlib.Path(out) / "report.csv").exists()

    try:
        cs.sample(moon, "ternary")
    except ValueError:
        pass
    else:
        raise AssertionError("bad kind accepted")

    print(f"ok: moon q75 binary 8-bit {db:.2f} dB after {iterations} iterations")


if __name__ == "__main__":
    main()
