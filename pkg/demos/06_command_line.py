"""
The command line, end to end
============================

Runs every subcommand in-process on a tiny model so it finishes in seconds.
The same steps work from a shell as ``python3 -m eventfoley <subcommand>``.
"""

from pathlib import Path

from eventfoley.cli import main

work = Path("demo_cli")
tiny = ["--channels", "4,8", "--strides", "8,10", "--bottleneck-hidden", "4", "--n-blocks", "4",
        "--temporal-hidden", "4", "--embed-dim", "8", "--class-embed-dim", "4", "--sigma-embed-dim", "4"]


def run(*args):
    print("$ eventfoley", " ".join(args))
    code = main(list(args))
    print(f"  -> exit {code}\n")
    return code


run("describe", *tiny)
run("synth-corpus", "--clips-per-class", "6", "--out", str(work / "corpus"))
run("extract", str(work / "corpus" / "Footstep" / "00006.wav"), "--format", "evf", "--out", str(work / "features"))
run("train", "--corpus", str(work / "corpus"), "--epochs", "2", "--batch", "4", "--out", str(work / "run"), *tiny)
run("generate", "--checkpoint", str(work / "run" / "model.ckpt"), "--class", "Footstep",
    "--condition", str(work / "features" / "00006.evf"), "--n", "3", "--steps", "20", "--out", str(work / "gen"))
run("eval", str(work / "gen"), "--out", str(work / "gen"))

# mistakes come back as exit codes: 2 for bad input, 4 for missing files
run("generate", "--checkpoint", str(work / "run" / "model.ckpt"), "--class", "Harp")
run("extract", str(work / "nowhere.wav"))

# the block sweep writes one row per N to sweep.csv
run("sweep-blocks", "--synth", "--clips-per-class", "6", "--epochs", "1", "--batch", "4", "--blocks", "1,2,4",
    "--n-eval", "3", "--steps", "10", "--timing-repeats", "1", "--out", str(work / "sweep"), *tiny)
