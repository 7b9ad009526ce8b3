"""Dual-ring signal plans: validation, compilation, and TLS emission.

Shows the ring-and-barrier structure: ring 1 runs phases 1-4, ring 2
phases 5-8, the barrier splits each ring in half, and only phases from
different rings on the same barrier side may be green together.
"""

from pathlib import Path

from trafficlens import signal, synth
from trafficlens.signal import (RingBarrierPlan, compile_plan, emit_tls_program,
                                state_at, uniform_phase_specs, validate_plan)

OUT = Path("demo_out/04_signal")
OUT.mkdir(parents=True, exist_ok=True)

plan = RingBarrierPlan(phases=uniform_phase_specs(),
                       splits=(14.0, 40.0, 14.0, 28.0, 14.0, 40.0, 14.0, 28.0),
                       cycle_length=120.0)
print("plan valid:", validate_plan(plan) == [])

broken = RingBarrierPlan(phases=uniform_phase_specs(),
                         splits=(16.0, 40.0, 12.0, 28.0, 14.0, 40.0, 14.0, 28.0),
                         cycle_length=120.0)
print("\na desynchronized plan is rejected with every violation listed:")
for v in validate_plan(broken):
    print("  -", v)

timeline = compile_plan(plan)
print(f"\ncompiled timeline: {len(timeline.intervals)} intervals over "
      f"{timeline.cycle_length:.0f} s")
print("state strip (G=green, y=yellow, .=red), one column per 2 s:")
for phase in range(1, 9):
    strip = ""
    for t in range(0, int(timeline.cycle_length), 2):
        s = state_at(timeline, float(t))[phase]
        strip += {"G": "G", "Y": "y", "R": "."}[s]
    print(f"  phase {phase}: {strip}")

net = synth.cross_network()
program = emit_tls_program(timeline, synth.default_movement_map(net),
                           tls_id="MAIN_ST")
path = OUT / "main_st.tls.xml"
path.write_text(program)
print(f"\nwrote the static traffic-light program to {path}")
print(program.splitlines()[1])
print("  ...")
