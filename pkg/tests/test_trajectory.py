import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given
from hypothesis import strategies as st

from dpips import _kernels
from dpips.netmodel import CONTROLLER, CONTROLLER_PORT
from dpips.sim.experiment import random_flows
from dpips.sim.simulator import Simulator
from dpips.trajectory import (
    InvalidTrajectory,
    Observation,
    ObservationLog,
    PacketHeader,
    Trajectory,
    TrajectoryStore,
    collision_bound,
    label_batch,
    label_packet,
    reconstruct_actual,
    store_and_dedupe,
)

headers = st.builds(PacketHeader, st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1), st.sampled_from([1, 6, 17]),
                    st.integers(0, 2**16 - 1), st.integers(0, 2**16 - 1), st.integers(0, 2**16 - 1),
                    st.integers(1, 255))


@given(headers)
def test_label_is_deterministic_and_fits_width(pkt):
    lab = label_packet(pkt)
    assert lab == label_packet(PacketHeader(**pkt.__dict__))
    assert 0 <= lab < 1 << 20


@given(headers, st.integers(1, 255))
def test_ttl_does_not_affect_label(pkt, ttl):
    assert label_packet(pkt) == label_packet(replace(pkt, ttl=ttl))


@given(headers, st.integers(0, 2**16 - 1))
def test_non_transport_packets_ignore_ports(pkt, sport):
    icmp = replace(pkt, proto=1)
    assert label_packet(icmp) == label_packet(replace(icmp, src_port=sport, dst_port=sport ^ 0xFFFF))


@pytest.mark.parametrize("width", [1, 8, 20, 32, 63])
def test_scalar_and_batch_labels_agree(width):
    rng = np.random.default_rng(width)
    pkts = [PacketHeader.random(rng) for _ in range(200)]
    fields = np.array([p.label_fields() for p in pkts], dtype=np.uint64)
    assert list(label_batch(fields, width)) == [label_packet(p, width) for p in pkts]
    assert np.array_equal(_kernels.label_hash_numpy(fields, width), _kernels.label_hash(fields, width))


def test_bad_label_width():
    with pytest.raises(ValueError):
        label_packet(PacketHeader(1, 2), 0)


def test_collision_rate_within_twice_birthday_bound():
    # Monte Carlo over 1e5 random flows; frozen result: 4826 colliding pairs vs bound 4768.3
    rng = np.random.default_rng(2024)
    n = 100_000
    cols = [rng.integers(0, 1 << 32, n, dtype=np.uint64), rng.integers(0, 1 << 32, n, dtype=np.uint64),
            np.full(n, 6, dtype=np.uint64), rng.integers(0, 1 << 16, n, dtype=np.uint64),
            rng.integers(1024, 1 << 16, n, dtype=np.uint64), rng.integers(1, 1 << 16, n, dtype=np.uint64)]
    labels = label_batch(np.column_stack(cols), 20)
    _, counts = np.unique(labels, return_counts=True)
    pairs = int((counts * (counts - 1) // 2).sum())
    bound = collision_bound(n, 20)
    assert pairs == 4826
    assert pairs <= 2 * bound
    assert pairs >= 0.5 * bound


def _linear_obs(fig1, devices, label=7):
    out = []
    prev = None
    for t, d in enumerate(devices, start=1):
        in_port = fig1.host_ports(d)[0] if prev is None else fig1.port_towards(d, prev)
        nxt = devices[t] if t < len(devices) else None
        out_port = fig1.port_towards(d, nxt) if nxt else fig1.host_ports(d)[0]
        out.append(Observation(label, d, in_port, out_port, t))
        prev = d
    return out


def test_red_path_reconstruction(fig1):
    obs = _linear_obs(fig1, ["a", "b", "f", "e"])
    assert reconstruct_actual(obs, 7, fig1).devices == ("a", "b", "f", "e")
    assert reconstruct_actual(reversed(obs), 7).devices == ("a", "b", "f", "e")


def test_single_observation_is_one_hop_trajectory(fig1):
    tr = reconstruct_actual([Observation(3, "a", 1, None, 5)], 3, fig1)
    assert tr.devices == ("a",) and not tr.delivered()


def test_no_observations_gives_none():
    assert reconstruct_actual([], 1) is None
    assert reconstruct_actual([Observation(2, "a", 1, None, 1)], 1) is None


def test_collided_flows_are_invalid(fig1):
    # two host-injected walks that happen to share label 7
    obs = _linear_obs(fig1, ["a", "b", "c"]) + [
        Observation(7, "g", fig1.host_ports("g")[0], fig1.port_towards("g", "f"), 2),
        Observation(7, "f", fig1.port_towards("f", "g"), fig1.host_ports("f")[0], 3),
    ]
    with pytest.raises(InvalidTrajectory):
        reconstruct_actual(obs, 7, fig1)


def test_arrival_without_upstream_emission_is_invalid(fig1):
    obs = [Observation(7, "a", fig1.host_ports("a")[0], fig1.port_towards("a", "b"), 1),
           Observation(7, "d", fig1.port_towards("d", "c"), None, 2)]
    with pytest.raises(InvalidTrajectory):
        reconstruct_actual(obs, 7, fig1)


def test_copies_are_matched_one_to_one(fig1):
    # b emits toward c and f; each later arrival takes its own emission as parent
    hp = fig1.host_ports("a")[0]
    obs = [Observation(1, "a", hp, fig1.port_towards("a", "b"), 1),
           Observation(1, "b", fig1.port_towards("b", "a"), fig1.port_towards("b", "c"), 2),
           Observation(1, "b", fig1.port_towards("b", "a"), fig1.port_towards("b", "f"), 2),
           Observation(1, "c", fig1.port_towards("c", "b"), CONTROLLER_PORT, 3),
           Observation(1, "f", fig1.port_towards("f", "b"), None, 3),
           Observation(1, CONTROLLER, 0, None, 5)]
    tr = reconstruct_actual(obs, 1, fig1)
    assert tr.fork_index() == 1
    assert sorted(tr.device_chains()) == [("a", "b", "c", CONTROLLER), ("a", "b", "f")]


def test_store_dedupes_identical_walks():
    store = TrajectoryStore()
    t = Trajectory.from_devices(["a", "b", "c", "d", "e"], label=5)
    assert store_and_dedupe(store, t)
    assert not store_and_dedupe(store, Trajectory.from_devices(["a", "b", "c", "d", "e"], label=5, times=[9] * 5))
    assert len(store) == 1


def test_store_keeps_branches_and_labels_apart():
    store = TrajectoryStore()
    assert store_and_dedupe(store, Trajectory.from_devices(["a", "b", "c", "d", "e"], label=5))
    assert store_and_dedupe(store, Trajectory.from_devices(["a", "b", "c", "i", "e"], label=5))
    assert store_and_dedupe(store, Trajectory.from_devices(["a", "b", "c", "d", "e"], label=6))
    assert len(store) == 3 and len(store.by_label(5)) == 2


@given(st.lists(st.tuples(st.integers(0, 3), st.lists(st.sampled_from("abcde"), min_size=1, max_size=4)), max_size=12))
def test_dedup_is_idempotent(items):
    store = TrajectoryStore()
    trs = [Trajectory.from_devices(devs, label=lab) for lab, devs in items]
    for t in trs:
        store.add(t)
    before = sorted((t.label, t.devices) for t in store)
    for t in trs:
        assert not store.add(t)
    assert sorted((t.label, t.devices) for t in store) == before


def test_observation_log_jsonl_round_trip(tmp_path, fig1):
    log = ObservationLog(_linear_obs(fig1, ["a", "b", "c"]) + [Observation(1, CONTROLLER, 0, None, 9)])
    log.write_jsonl(tmp_path / "obs.jsonl")
    assert list(ObservationLog.read_jsonl(tmp_path / "obs.jsonl")) == list(log)


@given(st.integers(0, 2**32 - 1))
def test_simulated_walks_round_trip(aarnet, seed):
    snap = aarnet.snapshot
    rng = np.random.default_rng(seed)
    sim = Simulator(snap, seed=seed)
    for f in random_flows(snap, 5, rng):
        obs = sim.inject(f.base, f.src, f.port)
        lab = label_packet(f.base)
        assert {o.label for o in obs} == {lab}
        tr = reconstruct_actual(obs, lab, snap)
        assert tr.devices == f.path
        assert list(tr.devices) == [o.device for o in sorted(obs, key=lambda o: o.timestamp)]
        times = [h.timestamp for h in tr.hops]
        assert times == sorted(times) and len(set(times)) == len(times)
