"""
MFCC and log-mel features
=========================

Both feature kinds come from one 40 ms / 20 ms Hann power spectrogram and a
40-band mel filterbank over 0-1500 Hz. The neural models see stacks of 12
consecutive log-mel frames.
"""

import numpy as np

from droneguard.audio_io import AudioClip
from droneguard.features import FeatureConfig, compute_log_mel, compute_mfcc, compute_power, nn_windows
from droneguard.synth import drone_sound

rng = np.random.default_rng(1)
cfg = FeatureConfig()
clip = AudioClip(drone_sound(2.0, rng, cfg.sample_rate, f0=120.0), cfg.sample_rate)

power = compute_power(clip, cfg)
mfcc = compute_mfcc(clip, cfg, power)
mel = compute_log_mel(clip, cfg, power)
print("power spectrogram", power.shape)
print("mfcc", mfcc.frames.shape, "log-mel", mel.frames.shape)

# the loudest mel band should sit near the low harmonics of the drone
band = int(np.argmax(mel.frames.mean(axis=0)))
print(f"loudest mel band: {band} of {mel.frames.shape[1]}")

windows, centers = nn_windows(mel)
print(f"{len(windows)} windows of shape {windows.shape[1:]}, first centred at {centers[0]:.2f} s")
