"""
Peak-margin augmentation
========================

Mix one synthetic drone recording into one background so the drone's peak
sits 5% above the background's, then look at the labelled result.
"""

import numpy as np

from droneguard.audio_io import AudioClip
from droneguard.augment import margin_gain, synthesize
from droneguard.synth import drone_sound, noise_background

rng = np.random.default_rng(0)
rate = 24000

# a 5 s pink-noise background and a 1.5 s drone with a 180 Hz fundamental
background = AudioClip(noise_background(5.0, rng, "pink", rate), rate, "bg")
drone = AudioClip(drone_sound(1.5, rng, rate, f0=180.0), rate, "drone")
print(f"background peak {np.max(np.abs(background.samples)):.3f}, drone peak {np.max(np.abs(drone.samples)):.3f}")
print(f"gain applied to the drone: {margin_gain(drone, background):.4f}")

# the output is the background followed by background + tiled drone
labelled = synthesize(background, drone)
print(f"augmented clip lasts {labelled.clip.duration_seconds:.1f} s")
for start, end, label in labelled.spans:
    print(f"  {start:4.1f} - {end:4.1f} s  {label}")
print(f"peak normalisation factor: {labelled.normalization:.4f}")
