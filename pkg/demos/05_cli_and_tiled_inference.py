"""End-to-end through the command line: synth -> train -> infer -> eval.

Drives the same four subcommands a shell user would, on a small synthetic
dataset, then restores an image larger than the tile size to exercise
overlap-blended tiled inference.
"""

import json
from pathlib import Path

import numpy as np

from descratch import cli, data

out = Path(__file__).parent / "out" / "05"
clean_dir = out / "clean"
clean_dir.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(11)
yy, xx = np.mgrid[0:96, 0:96] / 96.0
for k in range(6):
    img = np.zeros((3, 96, 96))
    for c in range(3):
        for _ in range(5):
            fx, fy = rng.uniform(0.5, 3.0, 2)
            img[c] += rng.uniform(0.1, 0.3) * np.sin(
                2 * np.pi * (fx * xx + fy * yy) + rng.uniform(0, 6.28))
    data.save_image(clean_dir / f"photo{k}.png", np.clip(0.5 + img, 0.02, 0.98))

def run(*argv):
    argv = [str(a) for a in argv]
    print(f"$ descratch {' '.join(argv)}")
    code = cli.main(argv)
    assert code == 0, f"exit {code}"

run("synth", "--clean-dir", clean_dir, "--out-dir", out / "ds",
    "--severity", "heavy", "--seed", "1")

cfg = {"epochs": 10, "batch_size": 4, "patch": 64, "n_patches_per_pair": 1,
       "augment": False}
(out / "config.json").write_text(json.dumps(cfg))
run("train", "--data", out / "ds", "--config", out / "config.json",
    "--out", out / "run")

# tile 64 with overlap 16 on 96px images forces multi-tile blending
run("infer", "--checkpoint", out / "run" / "final.frck",
    "--in", out / "ds" / "corrupted", "--out", out / "restored",
    "--tile", "64", "--overlap", "16")

run("eval", "--restored", out / "restored", "--reference", out / "ds" / "clean",
    "--out", out / "report.tsv")
print(f"\nreport written to {out / 'report.tsv'}")
