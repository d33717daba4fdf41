# The whole pipeline through the command line, on a throwaway directory.
#
# Equivalent shell session:
#   edmseg synth   --out work/corpus --tracks 200 --seed 1
#   edmseg curate  --manifest work/corpus/manifest.csv --out work/picked.csv --n 160 --seed 2
#   edmseg split   --manifest work/picked.csv --out work/split.json --test 10 --folds 3
#   edmseg train   --manifest work/picked.csv --split work/split.json --out work/model.ckpt --epochs 25
#   edmseg infer   --manifest work/picked.csv --split work/split.json --checkpoint work/model.ckpt --out work/pred
#   edmseg eval    --pred work/pred --ref work/corpus/ann --report work/report.json --hr-mode f1
#   edmseg plot    --ref work/corpus/ann/<id>.json --pred work/pred/<id>.json --out work/track.svg

import sys
import tempfile
from pathlib import Path

from edmseg.cli import main

work = Path(tempfile.mkdtemp(prefix="edmseg-"))
print("working in", work)

steps = [
    ["synth", "--out", f"{work}/corpus", "--tracks", "200", "--seed", "1"],
    ["curate", "--manifest", f"{work}/corpus/manifest.csv", "--out", f"{work}/picked.csv",
     "--n", "160", "--seed", "2"],
    ["split", "--manifest", f"{work}/picked.csv", "--out", f"{work}/split.json",
     "--test", "10", "--folds", "3"],
    ["train", "--manifest", f"{work}/picked.csv", "--split", f"{work}/split.json",
     "--out", f"{work}/model.ckpt", "--epochs", "25"],
    ["infer", "--manifest", f"{work}/picked.csv", "--split", f"{work}/split.json",
     "--checkpoint", f"{work}/model.ckpt", "--out", f"{work}/pred"],
    ["eval", "--pred", f"{work}/pred", "--ref", f"{work}/corpus/ann",
     "--report", f"{work}/report.json", "--hr-mode", "f1"],
]
for argv in steps:
    print("\n$ edmseg", " ".join(argv))
    code = main(argv)
    if code:
        sys.exit(code)

first = sorted((work / "pred").glob("*.json"))[0]
main(["plot", "--ref", f"{work}/corpus/ann/{first.name}", "--pred", str(first),
      "--out", f"{work}/track.svg"])
main(["inspect", f"{work}/model.ckpt", str(first)])
print("\ntimeline:", work / "track.svg")
