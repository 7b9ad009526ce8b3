import numpy as np
import pytest

from trafficlens.geo import GeoPoint, PlanarPoint
from trafficlens.ingest import Journey, TrajectorySample


def planar_journey(jid, points, speeds=None, t0=0.0, dt=3.0, ignition="on"):
    """Journey with planar positions already set (pos is a placeholder)."""
    samples = []
    for i, p in enumerate(points):
        xy = PlanarPoint(*p) if not isinstance(p, PlanarPoint) else p
        speed = None if speeds is None else speeds[i]
        t = t0 + (i * dt if np.isscalar(dt) else dt[i])
        samples.append(TrajectorySample(journey_id=jid, t=t, pos=GeoPoint(0, 0),
                                        speed=speed, ignition=ignition, xy=xy))
    return Journey(id=jid, samples=tuple(samples))


def timed_journey(jid, rows, ignition="on"):
    """Journey from (t, x, y, speed) rows with planar positions set."""
    samples = [TrajectorySample(journey_id=jid, t=t, pos=GeoPoint(0, 0),
                                speed=v, ignition=ignition, xy=PlanarPoint(x, y))
               for (t, x, y, v) in rows]
    return Journey(id=jid, samples=tuple(samples))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
