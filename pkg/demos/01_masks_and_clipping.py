"""Build analysis masks from road geometry and clip a trajectory to them.

The mask set is the spatial backbone of everything else: a 125 m disc
around each intersection plus 35 m corridor strips along the roads, with
the discs punched out of the strips so every point belongs to at most
one zone.
"""

import json
from pathlib import Path

from trafficlens import geo, ingest, masks
from trafficlens.geo import GeoPoint, PlanarPoint
from trafficlens.ingest import Journey, TrajectorySample

OUT = Path("demo_out/01_masks")
OUT.mkdir(parents=True, exist_ok=True)

# A toy map: two arterials crossing at one signalized intersection.
origin = GeoPoint(-81.2, 29.15)
reach = 2000.0
roads_planar = [[PlanarPoint(-reach, 0), PlanarPoint(reach, 0)],
                [PlanarPoint(0, -reach), PlanarPoint(0, reach)]]
roads = [geo.unproject_from_local(origin, line) for line in roads_planar]

mask_set = masks.build_mask_set(roads, [("MAIN_ST", origin)])
print(f"built {len(mask_set.intersection_masks())} intersection mask(s) and "
      f"{len(mask_set.corridor_masks())} corridor strip(s)")

main_st = mask_set.for_intersection("MAIN_ST")
print("approaches:", ", ".join(
    f"{a.direction} (inbound {a.entry_bearing:.0f} deg)"
    for a in main_st.approaches))

with open(OUT / "masks.geojson", "w") as fh:
    json.dump(masks.mask_set_to_geojson(mask_set), fh, indent=2)
print(f"wrote {OUT / 'masks.geojson'}")

# A vehicle driving west to east straight through the intersection.
speed = 15.0
samples = []
for i, x in enumerate(range(-1500, 1501, 45)):  # one sample every 3 s
    pos = geo.unproject_from_local(origin, [PlanarPoint(float(x), 0.0)])[0]
    samples.append(TrajectorySample(journey_id="demo", t=3.0 * i, pos=pos,
                                    speed=speed, ignition="on"))
journey = Journey(id="demo", samples=tuple(samples))

fragments = ingest.clip_to_masks([journey], mask_set, min_length=150.0)
print(f"\njourney of {journey.duration:.0f} s clipped into "
      f"{len(fragments)} fragments:")
for f in fragments:
    print(f"  mask={f.mask_id:<12} part={f.part} span={f.duration:6.1f} s "
          f"length={f.path_length_m():7.1f} m")
