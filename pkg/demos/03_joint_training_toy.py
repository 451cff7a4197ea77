"""Jointly learning a sensor pattern and reconstruction network (toy scale).

Runs a short annealed joint optimization on synthetic low-light images and
prints the validation trace: hardened-pattern MSE, mean selection entropy,
and the channel census of the hardened pattern as it evolves.  A few minutes
on a laptop CPU.
"""

from pathlib import Path

import numpy as np

from cfalearn import data as dp
from cfalearn import evaluate as ev
from cfalearn import patterns as pat
from cfalearn import sensor
from cfalearn import train as tr

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

images = dp.make_lowlight_images(38, 64, seed=100)
config = tr.TrainConfig(batch_size=16, lr=3e-3, iters=4000, noise_std=0.01,
                        seed=0, validate_every=500, P=8, K=4, F=16)
print(f"annealing factor at the end of the run: "
      f"{sensor.AnnealSchedule(config.effective_gamma()).alpha_at(config.iters):.2f}")

pattern, params, log = tr.train_joint(config, images[:32], images[32:])

print(f"{'iter':>6} {'val mse':>10} {'entropy':>8}  census R/G/B/W")
for rec in log.records:
    r, g, b, w = np.bincount(rec.hard_pattern.reshape(-1), minlength=4)
    print(f"{rec.iteration:>6} {rec.val_loss:>10.5f} {rec.mean_entropy:>8.4f}  "
          f"{r}/{g}/{b}/{w}")

hard = pat.HardPattern(config.P, sensor.harden(pattern))
pat.write_pattern(hard, out_dir / "learned.cfa")
ev.export_pattern_image(hard, out_dir / "learned.ppm", upscale=16)
print(f"wrote {out_dir / 'learned.cfa'} and a raster preview")
