import numpy as np

from decaff.rng import (
    STREAM_STRIDE,
    SplitMix64,
    bernoulli,
    bernoulli_threshold,
    make_bit_generator,
    make_generator,
)


def test_splitmix64_reference_values():
    # published reference outputs for seed 1234567
    sm = SplitMix64(1234567)
    assert [sm.next() for _ in range(5)] == [
        6457827717110365317,
        3203168211198807973,
        9817491932198370423,
        4593380528125082431,
        16408922859458223821,
    ]


def test_generator_is_a_pure_function_of_seed_and_stream():
    a = make_generator(42).random(5)
    b = make_generator(42).random(5)
    c = make_generator(42, stream=1).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_streams_are_offset_seeds():
    # stream s of seed n is the same sequence as stream 0 of seed n + s * stride
    a = make_bit_generator(7, stream=2).random_raw(4)
    b = make_bit_generator((7 + 2 * STREAM_STRIDE) % 2**64).random_raw(4)
    np.testing.assert_array_equal(a, b)


def test_bit_generator_state_comes_from_splitmix():
    sm = SplitMix64(99)
    s = [sm.next() for _ in range(4)]
    st = make_bit_generator(99).state["state"]
    assert st["state"] == (s[0] << 64) | s[1]
    assert st["inc"] & 1 == 1


def test_bernoulli_threshold():
    assert bernoulli_threshold(0.0) == 0
    assert bernoulli_threshold(0.5) == 2**63
    assert bernoulli_threshold(0.25) == 2**62
    assert bernoulli_threshold(1.0) == 2**64


def test_bernoulli_frequency():
    bg = make_bit_generator(5)
    hits = sum(bernoulli(bg, 0.3) for _ in range(20000))
    # binomial sd is about 65
    assert abs(hits - 6000) < 400
