"""Why store the phase in a nuclear memory?

Correlation spectroscopy measures p(t) for growing waits t between two XY8
blocks. Without a memory the electron carries the first phase through the wait
and p(t) decays on the electron T1 (0.5 ms here), so the line can be no
narrower than 1/(pi T1) ~ 640 Hz. Parking the phase in the 15N nucleus lets the
wait run to 45 ms, and the line shrinks to the ~20 Hz limit of the record.

The signal sits at 6.626 MHz but is sampled at a few kHz, so both spectra show
an alias; a rough prior brings back the absolute frequency.

    python3 demos/memory_linewidth.py
"""

from memspec.config import preset
from memspec.runner import analyse_trace, run_ac

for name in ("fig3_no_memory", "fig3_memory"):
    cfg = preset(name)
    trace = run_ac(cfg, workers=1)
    _, summary = analyse_trace(cfg, trace)
    pk = summary["peaks"][0]
    mode = "with memory" if cfg.protocol.memory_enabled else "electron only"
    print(f"{mode:14s} record {1e3 * summary['record_length_s']:5.1f} ms  "
          f"alias {pk['center_Hz']:8.1f} Hz -> {pk['absolute_Hz'] / 1e6:.6f} MHz  "
          f"FWHH {pk['fwhh_Hz']:6.1f} Hz ({pk['fwhh_ppm']:.1f} ppm, {pk['model']})")
