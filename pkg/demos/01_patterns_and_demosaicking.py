"""Baseline color-filter-array patterns and classical demosaicking.

Builds the Bayer and sparse-color (CFZ-style) patterns, prints their channel
censuses, round-trips them through the text file format, renders raster
previews, and reconstructs a synthetic image with the bilinear interpolation
reference.  Outputs land in demos/out/.
"""

from pathlib import Path

import numpy as np

from cfalearn import data as dp
from cfalearn import evaluate as ev
from cfalearn import patterns as pat

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

bayer = pat.bayer_pattern(8)
cfz = pat.cfz_pattern(8, rate=4)

for name, p in (("bayer", bayer), ("cfz", cfz)):
    r, g, b, w = p.census()
    print(f"{name}: period {p.period}, census R={r} G={g} B={b} W={w}")
    pat.write_pattern(p, out_dir / f"{name}.cfa")
    ev.export_pattern_image(p, out_dir / f"{name}.ppm", upscale=16)
    assert pat.read_pattern(out_dir / f"{name}.cfa") == p

# CFZ with rate 2 degenerates to the Bayer tiling
assert pat.cfz_pattern(8, rate=2) == bayer
print("cfz(rate=2) == bayer: ok")

# measure a synthetic image with the Bayer mosaic and demosaick it back
img = dp.make_synthetic_images(1, 64, seed=7)[0]
x = dp.build_channels(img)
selection = np.eye(4)[bayer.tiled(64, 64)]
s = (selection * x).sum(axis=-1)

recon = pat.bilinear_demosaick(s, bayer)
print(f"bilinear reconstruction PSNR on smooth synthetic data: "
      f"{ev.psnr(img, recon):.2f} dB")
dp.write_ppm(out_dir / "bilinear_recon.ppm", np.clip(recon, 0, 1))
print(f"wrote pattern files and {out_dir / 'bilinear_recon.ppm'}")
