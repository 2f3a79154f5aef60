"""
Temporal event features
=======================

Make a few synthetic Foley-like clips, pull out their RMS envelopes and look
at how the envelope tracks the events we placed in them.
"""

import numpy as np

from eventfoley.corpus import SynthSpec, event_frame, synth_clip
from eventfoley.features import block_pool, extract_rms, frame_count, scale_gain

# a gunshot-like clip: one sharp attack at 0.3 s, decaying over roughly 0.15 s
shot = synth_clip(SynthSpec("impulsive", events=(0.3,), gains=(0.8,), decay=0.15, seed=1), 8000, 1.0)
feature = extract_rms(shot.waveform)  # W=512, h=128 by default
print("frames:", feature.frame_count, "== formula:", frame_count(8000, 512, 128))
print("peak frame:", int(np.argmax(feature.values)), "event frame:", event_frame(0.3, 8000))

# footsteps: four short transients; every one shows up as a local maximum
steps = synth_clip(SynthSpec("repeated", events=(0.1, 0.35, 0.6, 0.85), gains=(0.5, 0.7, 0.4, 0.6), decay=0.04, seed=2),
                   8000, 1.0)
env = extract_rms(steps.waveform).values
peaks = [i for i in range(1, len(env) - 1) if env[i] >= env[i - 1] and env[i] >= env[i + 1] and env[i] > 0.2 * env.max()]
print("footstep peaks at frames", peaks)

# a crude text plot of the envelope
for i in range(0, len(env), 3):
    print(f"{i:3d} {'#' * int(60 * env[i] / env.max())}")

# Block pooling is what the block-wise conditioning layers see: the envelope
# cut into N contiguous blocks, each reduced to its maximum.
for n in (4, 8, 16):
    print(f"N={n:2d}:", np.round(block_pool(env, n), 3))

# Gain control is a plain rescale of the envelope.
quiet = scale_gain(extract_rms(steps.waveform), 0.1)
print("gain 0.1 max:", quiet.values.max(), "vs", env.max())
