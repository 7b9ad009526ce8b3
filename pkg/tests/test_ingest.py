import json

import pytest

from trafficlens import geo, ingest
from trafficlens.errors import InputError
from trafficlens.geo import GeoPoint, PlanarPoint
from trafficlens.ingest import (AtspmEvent, Journey, JourneyStore,
                                TrajectorySample, filter_journeys, load_atspm,
                                load_trajectories, phase_volumes)
from trafficlens.masks import build_mask_set

ORIGIN = GeoPoint(-81.0, 29.0)


def write_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("journey_id,timestamp,lat,lon,speed_mps,ignition\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")


def sample(jid, t, speed=10.0, ignition="on", lon=-81.0, lat=29.0):
    return TrajectorySample(journey_id=jid, t=t, pos=GeoPoint(lon, lat),
                            speed=speed, ignition=ignition)


class TestLoadTrajectories:
    def test_interleaved_files_merge_sorted(self, tmp_path):
        f1 = tmp_path / "a.csv"
        f2 = tmp_path / "b.csv"
        write_csv(f1, [("j1", 0.0, 29.0, -81.0, 10, "on"),
                       ("j1", 6.0, 29.0002, -81.0, 10, "on")])
        write_csv(f2, [("j1", 3.0, 29.0001, -81.0, 10, "on")])
        res = load_trajectories([f1, f2])
        assert len(res.journeys) == 1
        assert [s.t for s in res.journeys[0].samples] == [0.0, 3.0, 6.0]

    def test_negative_speed_rejected_row(self, tmp_path):
        f = tmp_path / "a.csv"
        write_csv(f, [("j1", 0.0, 29.0, -81.0, -5, "on"),
                      ("j1", 3.0, 29.0, -81.0, 10, "on"),
                      ("j1", 6.0, 29.0, -81.0, 10, "on")])
        res = load_trajectories([f])
        assert len(res.rejects) == 1
        assert "speed" in res.rejects[0]["reason"]
        assert len(res.journeys[0].samples) == 2

    def test_three_journeys_counted(self, tmp_path):
        f = tmp_path / "a.csv"
        rows = []
        counts = {"a": 4, "b": 2, "c": 7}
        for jid, n in counts.items():
            rows += [(jid, 3.0 * i, 29.0, -81.0, 10, "on") for i in range(n)]
        write_csv(f, rows)
        res = load_trajectories([f])
        assert {j.id: len(j.samples) for j in res.journeys} == counts

    def test_duplicate_timestamps_first_wins(self, tmp_path):
        f = tmp_path / "a.ndjson"
        rows = [{"journey_id": "j", "timestamp": 0.0, "lat": 29.0, "lon": -81.0,
                 "speed_mps": 1.0, "ignition": "on"},
                {"journey_id": "j", "timestamp": 0.0, "lat": 29.5, "lon": -81.0,
                 "speed_mps": 2.0, "ignition": "on"},
                {"journey_id": "j", "timestamp": 3.0, "lat": 29.0, "lon": -81.0,
                 "speed_mps": 3.0, "ignition": "on"}]
        f.write_text("\n".join(json.dumps(r) for r in rows))
        res = load_trajectories([f])
        assert res.journeys[0].samples[0].speed == 1.0

    def test_missing_file_fatal(self, tmp_path):
        with pytest.raises(InputError):
            load_trajectories([tmp_path / "nope.csv"])

    def test_missing_speed_recomputed(self, tmp_path):
        f = tmp_path / "a.csv"
        # ~111.19 m between consecutive lat steps of 0.001 deg at 3 s
        write_csv(f, [("j1", 0.0, 29.000, -81.0, "", "on"),
                      ("j1", 3.0, 29.001, -81.0, "", "on")])
        res = load_trajectories([f])
        s0, s1 = res.journeys[0].samples
        assert s1.speed == pytest.approx(111.1949 / 3.0, rel=1e-4)
        assert s0.speed == s1.speed  # first inherits the second's

    def test_single_sample_journey_rejected(self, tmp_path):
        f = tmp_path / "a.csv"
        write_csv(f, [("solo", 0.0, 29.0, -81.0, 10, "on")])
        res = load_trajectories([f])
        assert res.journeys == []
        assert any(r["reason"] == "single-sample journey" for r in res.rejects)


class TestFilterJourneys:
    def mk(self, jid, duration, ignition="on"):
        n = max(int(duration // 3) + 1, 2)
        ts = [3.0 * i for i in range(n - 1)] + [float(duration)]
        return Journey(id=jid, samples=tuple(
            sample(jid, t, ignition=ignition) for t in ts))

    def test_90s_removed(self):
        assert filter_journeys([self.mk("a", 90.0)]) == []

    def test_all_off_removed(self):
        assert filter_journeys([self.mk("a", 180.0, ignition="off")]) == []

    def test_121s_retained(self):
        assert len(filter_journeys([self.mk("a", 121.0)])) == 1

    def test_idempotent(self):
        js = [self.mk("a", 121.0), self.mk("b", 300.0)]
        once = filter_journeys(js)
        assert filter_journeys(once) == once


class TestClipToMasks:
    def scene(self):
        roads = [[geo.unproject_from_local(ORIGIN, [PlanarPoint(x, 0)])[0]
                  for x in (-2000, 2000)]]
        return build_mask_set(roads, [("I1", ORIGIN)])

    def journey_along_x(self, jid, x0, x1, speed=15.0):
        n = int(abs(x1 - x0) / (speed * 3.0)) + 1
        pts = []
        for i in range(n + 1):
            x = x0 + (x1 - x0) * i / n
            pts.append(geo.unproject_from_local(ORIGIN, [PlanarPoint(x, 0)])[0])
        return Journey(id=jid, samples=tuple(
            TrajectorySample(journey_id=jid, t=3.0 * i * abs(x1 - x0) / (n * speed * 3.0) * n / n
                             if False else i * abs(x1 - x0) / (n * speed),
                             pos=p, speed=speed, ignition="on")
            for i, p in enumerate(pts)))

    def test_pass_through_chord_retained(self):
        ms = self.scene()
        j = self.journey_along_x("a", -150.0, 150.0)
        frags = ingest.clip_to_masks([j], ms, min_length=150.0)
        by_mask = {f.mask_id for f in frags}
        assert "I1" in by_mask
        chord = next(f for f in frags if f.mask_id == "I1")
        assert chord.path_length_m() == pytest.approx(250.0, rel=0.005)

    def test_short_fragment_dropped(self):
        ms = self.scene()
        j = self.journey_along_x("a", -175.0, -50.0)  # 50 m inside the disc
        frags = ingest.clip_to_masks([j], ms, min_length=150.0)
        assert all(f.mask_id != "I1" for f in frags)

    def test_journey_outside_contributes_nothing(self):
        ms = self.scene()
        pts = [geo.unproject_from_local(ORIGIN, [PlanarPoint(x, 5000)])[0]
               for x in (-100, 0, 100)]
        j = Journey(id="far", samples=tuple(
            TrajectorySample(journey_id="far", t=3.0 * i, pos=p, speed=15.0,
                             ignition="on") for i, p in enumerate(pts)))
        assert ingest.clip_to_masks([j], ms) == []

    def test_fragments_lie_inside_their_mask(self):
        ms = self.scene()
        j = self.journey_along_x("a", -400.0, 400.0)
        for f in ingest.clip_to_masks([j], ms, min_length=10.0):
            mask = ms.by_id(f.mask_id)
            for s in f.samples:
                assert geo.point_in_polygon(s.xy, mask.geometry)


class TestAtspm:
    def write_events(self, path, rows):
        with open(path, "w") as fh:
            fh.write("intersection_id,timestamp,event_code,parameter\n")
            for r in rows:
                fh.write(",".join(str(v) for v in r) + "\n")

    def test_half_open_interval(self, tmp_path):
        f = tmp_path / "e.csv"
        self.write_events(f, [("I1", 10.0, 82, 1), ("I1", 20.0, 82, 1),
                              ("I1", 30.0, 82, 1)])
        res = load_atspm([f], "I1", (15.0, 30.0))
        assert [e.t for e in res.events] == [20.0]

    def test_wrong_intersection_empty(self, tmp_path):
        f = tmp_path / "e.csv"
        self.write_events(f, [("I1", 10.0, 82, 1)])
        assert load_atspm([f], "I2", (0.0, 100.0)).events == []

    def test_random_order_sorted(self, tmp_path, rng):
        f = tmp_path / "e.csv"
        ts = rng.uniform(0, 1000, size=1000)
        self.write_events(f, [("I1", round(t, 1), 82, 3) for t in ts])
        res = load_atspm([f], "I1", (0.0, 1000.0))
        out = [e.t for e in res.events]
        assert out == sorted(out)

    def test_bad_range(self, tmp_path):
        f = tmp_path / "e.csv"
        self.write_events(f, [("I1", 10.0, 82, 1)])
        with pytest.raises(InputError):
            load_atspm([f], "I1", (30.0, 30.0))


class TestPhaseVolumes:
    def ev(self, t, code=82, param=1):
        return AtspmEvent(intersection_id="I1", t=t, event_code=code,
                          parameter=param)

    def test_counts_one_phase(self):
        events = [self.ev(3600.0 + 10 * i) for i in range(10)]
        table = phase_volumes(events, {1: 2})
        assert table.counts == {(2, 3600.0): 10}

    def test_zero_events(self):
        table = phase_volumes([], {1: 2})
        assert table.counts == {} and table.unmapped == {}

    def test_other_codes_ignored(self):
        table = phase_volumes([self.ev(0.0, code=81)], {1: 2})
        assert table.counts == {}

    def test_unmapped_bucket_preserves_total(self, rng):
        events = [self.ev(float(t), param=int(p))
                  for t, p in zip(rng.uniform(0, 7200, 500),
                                  rng.integers(1, 5, 500))]
        table = phase_volumes(events, {1: 2, 2: 2})
        assert table.total() == 500

    def test_empty_map_rejected(self):
        with pytest.raises(InputError):
            phase_volumes([], {})


class TestJourneyStore:
    def mk_journey(self, jid, t0, mask_id=None):
        samples = tuple(
            TrajectorySample(journey_id=jid, t=t0 + 3.0 * i,
                             pos=GeoPoint(-81.0 + 1e-4 * i, 29.0),
                             speed=10.0 + i, ignition="on",
                             xy=PlanarPoint(float(i), 0.125 * i))
            for i in range(4))
        return Journey(id=jid, samples=samples, part=0, mask_id=mask_id)

    def test_round_trip_exact(self, tmp_path):
        store = JourneyStore(tmp_path / "store")
        t0 = 1_700_000_000.0 + 0.125
        js = [self.mk_journey("a", t0, "I1"), self.mk_journey("b", t0 + 7, "I1")]
        store.put(js)
        date, hour = ingest._partition_of(t0)
        back = store.get(date, hour, "I1")
        assert back == sorted(js, key=lambda j: j.id)

    def test_reingest_idempotent(self, tmp_path):
        store = JourneyStore(tmp_path / "store")
        j = self.mk_journey("a", 1_700_000_000.0, "I1")
        store.put([j])
        store.put([j])
        date, hour = ingest._partition_of(1_700_000_000.0)
        assert len(store.get(date, hour, "I1")) == 1

    def test_load_window(self, tmp_path):
        store = JourneyStore(tmp_path / "store")
        base = 1_700_000_000.0
        hour = 3600.0 * (base // 3600.0 + 1)  # align to an hour boundary
        js = [self.mk_journey("a", hour + 10, "I1"),
              self.mk_journey("b", hour + 3700, "I1")]
        store.put(js)
        got = store.load_window(hour, hour + 3600.0, "I1")
        assert [j.id for j in got] == ["a"]

    def test_manifest_written(self, tmp_path):
        store = JourneyStore(tmp_path / "store")
        store.put([self.mk_journey("a", 1_700_000_000.0, "I1")])
        manifest = json.loads((tmp_path / "store" / "manifest.json").read_text())
        assert manifest["total"] == 1
        assert manifest["partitions"][0]["intersection"] == "I1"
