"""
Simulating wayside passages
===========================

A passage is a train type, a speed, a load scheme and a set of wheel
defects. The surrogate turns it into a strain trace (one bell per wheel)
and an accelerometer trace that carries the wheel/rail dynamics.
"""

import numpy as np

from wayside import datagen, synth

# geometry of the two defect families
print("flat depth, 50 mm chord on a 460 mm wheel:", synth.flat_depth(50.0, 460.0), "mm")
print("wavelength of harmonic 7:", round(synth.poly_wavelength(7, 460.0), 1), "mm")
print("amplitude at 30 dB re 1 um:", round(synth.poly_amplitude(30.0), 2), "um")

rng = np.random.default_rng(0)
flat = synth.sample_defect(synth.DefectKind.FLAT, synth.FLAT_L2, rng)
spec = synth.PassageSpec(train=synth.train_type("Laagrss"), speed_kmh=80.0,
                         load=synth.LoadScheme("Full"), defects=(flat,),
                         irregularity_seed=1, snr_db=20.0)
rec = synth.synthesize_passage(spec)
print("samples:", rec.strain.size, "at", rec.sample_rate, "Hz")
print("wheels passing:", len(rec.wheel_pass_times), "expected", spec.train.expected_wheel_count)

healthy = synth.synthesize_passage(synth.PassageSpec(
    train=spec.train, speed_kmh=80.0, load=spec.load, irregularity_seed=1, snr_db=20.0))
print("accel RMS healthy vs flat: %.2f vs %.2f"
      % (np.sqrt(np.mean(healthy.accel ** 2)), np.sqrt(np.mean(rec.accel ** 2))))

# a balanced batch, as used for the anomaly-detection grid
specs = datagen.sample_specs(datagen.SamplingSpec(), 20, seed=0)
print("anomaly types:", [s.anomaly_type for s in specs])
