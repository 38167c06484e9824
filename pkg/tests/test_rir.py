import numpy as np
import pytest

from handsfree.errors import ConfigError
from handsfree.rir import (
    RoomSpec,
    SPEED_OF_SOUND,
    generate_rir,
    generate_rir_pair,
    sample_room,
    schroeder_rt60,
)


class TestRoomSpec:
    def test_positions_must_be_inside(self):
        with pytest.raises(ConfigError, match="inside"):
            RoomSpec(dimensions=(4, 3, 2.5), mic_pos=(4.5, 1, 1))

    def test_rt60_positive(self):
        with pytest.raises(ConfigError):
            RoomSpec(rt60=0.0)

    def test_dimensions_positive(self):
        with pytest.raises(ConfigError):
            RoomSpec(dimensions=(4, -3, 2.5))


class TestGenerateRir:
    def test_anechoic_single_impulse_at_propagation_delay(self, small_room):
        room = RoomSpec(
            dimensions=small_room.dimensions,
            rt60=small_room.rt60,
            max_reflection_order=0,
            source_pos=small_room.source_pos,
            mic_pos=small_room.mic_pos,
            nearend_pos=small_room.nearend_pos,
        )
        h = generate_rir(room, room.source_pos, room.mic_pos)
        nz = np.flatnonzero(h.samples)
        dist = np.linalg.norm(np.subtract(room.source_pos, room.mic_pos))
        assert nz.tolist() == [round(dist / SPEED_OF_SOUND * 16000)]
        assert h.samples[nz[0]] == pytest.approx(1.0 / (4 * np.pi * dist), rel=1e-12)

    def test_direct_path_follows_inverse_distance_law(self):
        base = dict(dimensions=(10.0, 5.0, 3.0), rt60=0.3, max_reflection_order=0,
                    nearend_pos=(9.0, 4.0, 2.0))
        src = (1.0, 2.5, 1.5)
        near = RoomSpec(source_pos=src, mic_pos=(3.0, 2.5, 1.5), **base)
        far = RoomSpec(source_pos=src, mic_pos=(5.0, 2.5, 1.5), **base)
        a_near = generate_rir(near, near.source_pos, near.mic_pos).samples.max()
        a_far = generate_rir(far, far.source_pos, far.mic_pos).samples.max()
        assert a_near / a_far == pytest.approx(2.0, rel=1e-9)

    def test_schroeder_t60_within_20_percent(self):
        room = RoomSpec(dimensions=(6.0, 5.0, 3.0), rt60=0.4, max_reflection_order=60)
        h = generate_rir(room, room.source_pos, room.mic_pos)
        measured = schroeder_rt60(h)
        assert abs(measured - room.rt60) / room.rt60 < 0.20

    def test_deterministic(self, small_room):
        h1 = generate_rir(small_room, small_room.source_pos, small_room.mic_pos)
        h2 = generate_rir(small_room, small_room.source_pos, small_room.mic_pos)
        assert np.array_equal(h1.samples, h2.samples)

    def test_source_outside_room_rejected(self, small_room):
        with pytest.raises(ConfigError, match="outside"):
            generate_rir(small_room, (99.0, 1.0, 1.0), small_room.mic_pos)

    def test_source_too_close_to_mic_rejected(self, small_room):
        near_mic = tuple(np.add(small_room.mic_pos, (0.02, 0.0, 0.0)))
        with pytest.raises(ConfigError, match="cm"):
            generate_rir(small_room, near_mic, small_room.mic_pos)


class TestGenerateRirPair:
    def test_identical_source_positions_give_identical_rirs(self, small_room):
        room = RoomSpec(
            dimensions=small_room.dimensions,
            rt60=small_room.rt60,
            max_reflection_order=20,
            source_pos=small_room.source_pos,
            mic_pos=small_room.mic_pos,
            nearend_pos=small_room.source_pos,
        )
        h1, h2 = generate_rir_pair(room)
        assert np.array_equal(h1.samples, h2.samples)

    def test_matched_rooms_share_decay_rate(self, small_room):
        h1, h2 = generate_rir_pair(small_room)
        t1, t2 = schroeder_rt60(h1), schroeder_rt60(h2)
        assert abs(t1 - t2) / t2 < 0.10

    def test_seed_does_not_change_output(self, small_room):
        room_a = RoomSpec(**{**small_room.__dict__, "seed": 1})
        room_b = RoomSpec(**{**small_room.__dict__, "seed": 999})
        h1a, _ = generate_rir_pair(room_a)
        h1b, _ = generate_rir_pair(room_b)
        assert np.array_equal(h1a.samples, h1b.samples)


class TestSampleRoom:
    def test_sampled_rooms_are_valid_and_deterministic(self):
        rooms = [sample_room(np.random.default_rng(7)) for _ in range(2)]
        assert rooms[0] == rooms[1]
        r = rooms[0]
        assert 0.2 <= r.rt60 <= 0.7
        assert np.linalg.norm(np.subtract(r.source_pos, r.mic_pos)) >= 0.05
