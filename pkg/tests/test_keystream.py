import math
from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdrecog.keystream import (Basis, Bernoulli, DetectorBank, DetectorId, DetectorModel, ErrorSchedule,
                               KeyStream, StreamConfig, generate, read_stream, sifted_bit_mean, write_stream)

STATES = {"Z0": ("Z", 0), "Z1": ("Z", 1), "X0": ("X", 0), "X1": ("X", 1)}


def enumerate_sifted_mean(eff, alice_probs=None, key_bases=("Z", "X")):
    """Oracle: weight every (Alice state, Bob basis) pair, keep matched bases only."""
    alice_probs = alice_probs or {s: Fraction(1, 4) for s in STATES}
    ones = total = Fraction(0)
    for state, bob_basis in product(STATES, ("Z", "X")):
        basis, bit = STATES[state]
        if bob_basis != basis or basis not in key_bases:
            continue
        w = alice_probs[state] * Fraction(1, 2) * Fraction(eff[state])
        total += w
        ones += w * bit
    return ones / total


def test_detector_ids():
    assert {d.name for d in DetectorId} == set(STATES)
    for d in DetectorId:
        assert (d.basis.value, d.bit) == STATES[d.name]
        assert d.partner.basis is d.basis and d.partner.bit != d.bit
    assert DetectorId.parse(" x1 ") is DetectorId.X1
    with pytest.raises(ValueError):
        DetectorId.parse("Y0")


@pytest.mark.parametrize("bank, expected", [
    (DetectorBank(), 0.5),
    (DetectorBank(x1=0.0), 1 / 3),
    (DetectorBank(z0=0.0), 2 / 3),
    (DetectorBank(z1=0.5), 1.5 / 3.5),
])
def test_sifted_bit_mean_examples(bank, expected):
    assert sifted_bit_mean(bank) == pytest.approx(expected, abs=1e-12)


def test_sifted_bit_mean_partial_fault_matches_enumeration():
    eff = {"Z0": 1, "Z1": Fraction(1, 2), "X0": 1, "X1": 1}
    assert enumerate_sifted_mean(eff) == Fraction(3, 7)
    assert sifted_bit_mean(DetectorBank(z1=0.5)) == pytest.approx(0.428571, abs=1e-6)


def test_dead_bank_rejected():
    with pytest.raises(ValueError, match="no detectable states"):
        sifted_bit_mean(DetectorBank(0, 0, 0, 0))


@settings(max_examples=200)
@given(st.lists(st.floats(0, 1), min_size=4, max_size=4).filter(lambda v: sum(v) > 1e-6))
def test_sifted_bit_mean_equals_enumeration(values):
    bank = DetectorBank.from_sequence(values)
    eff = {name: Fraction(v) for name, v in zip(STATES, values)}
    assert sifted_bit_mean(bank) == pytest.approx(float(enumerate_sifted_mean(eff)), abs=1e-12)


def test_bank_validation():
    with pytest.raises(ValueError):
        DetectorBank(z0=1.5)
    assert DetectorBank().with_efficiency(DetectorId.X0, 0.2)[DetectorId.X0] == 0.2


def test_schedule_validation():
    with pytest.raises(ValueError):
        ErrorSchedule(-1, post_mean=0.3)
    with pytest.raises(ValueError):
        ErrorSchedule(5, DetectorId.Z0, new_efficiency=1.0)
    with pytest.raises(ValueError, match="below the nominal"):
        StreamConfig(DetectorModel(DetectorBank(z0=0.5)), 1, ErrorSchedule(0, DetectorId.Z0, 0.7))
    with pytest.raises(ValueError, match="post_mean"):
        StreamConfig(Bernoulli(0.5), 1, ErrorSchedule(3))
    with pytest.raises(ValueError, match="64-bit"):
        StreamConfig(Bernoulli(0.5), -1)


def test_bernoulli_mean_within_three_sigma():
    bits = generate(StreamConfig(Bernoulli(0.5), seed=11), 10**6)
    assert bits.dtype == np.uint8 and bits.shape == (10**6,)
    assert abs(bits.mean() - 0.5) <= 3 * math.sqrt(0.25 / 10**6)


def test_bernoulli_post_onset_segment():
    cfg = StreamConfig(Bernoulli(0.5), seed=3, schedule=ErrorSchedule(10**5, post_mean=1 / 3))
    bits = generate(cfg, 2 * 10**5)
    post = bits[10**5:]
    sigma = math.sqrt((1 / 3) * (2 / 3) / post.size)
    assert abs(post.mean() - 1 / 3) <= 3 * sigma
    assert abs(bits[:10**5].mean() - 0.5) <= 3 * math.sqrt(0.25 / 10**5)


def test_empty_stream():
    assert generate(StreamConfig(Bernoulli(0.5)), 0).shape == (0,)
    with pytest.raises(ValueError):
        generate(StreamConfig(Bernoulli(0.5)), -1)


CONFIGS = [
    StreamConfig(Bernoulli(0.5), seed=5, schedule=ErrorSchedule(300, post_mean=0.2)),
    StreamConfig(DetectorModel(DetectorBank(z1=0.7)), seed=2**64 - 1,
                 schedule=ErrorSchedule(250, DetectorId.X1, 0.0)),
]


@pytest.mark.parametrize("cfg", CONFIGS)
def test_determinism_and_prefix(cfg, accel_path):
    a = generate(cfg, 1000)
    assert np.array_equal(a, generate(cfg, 1000))
    assert np.array_equal(a[:417], generate(cfg, 417))


@pytest.mark.parametrize("cfg", CONFIGS)
@settings(max_examples=30, deadline=None)
@given(cuts=st.lists(st.integers(0, 300), max_size=4))
def test_chunking_does_not_change_stream(cfg, cuts):
    whole = generate(cfg, 1200)
    ks = KeyStream(cfg)
    parts = [ks.take(c) for c in cuts]
    parts.append(ks.take(1200 - sum(cuts)))
    assert np.array_equal(np.concatenate(parts), whole)
    assert ks.position == 1200


def test_backends_give_the_same_detector_stream(monkeypatch):
    from sdrecog import _accel
    if _accel.numba is None:
        pytest.skip("numba not installed")
    cfg = CONFIGS[1]
    monkeypatch.setattr(_accel, "USE_NUMBA", True)
    a = generate(cfg, 5000)
    monkeypatch.setattr(_accel, "USE_NUMBA", False)
    assert np.array_equal(a, generate(cfg, 5000))


@pytest.mark.parametrize("bank", [
    DetectorBank(), DetectorBank(x1=0.0), DetectorBank(z0=0.0), DetectorBank(0.9, 0.4, 0.7, 0.1),
    DetectorBank(0.05, 1.0, 0.0, 0.3),
])
def test_detector_model_matches_sifted_mean(bank):
    bits = generate(StreamConfig(DetectorModel(bank), seed=17), 10**6)
    p = sifted_bit_mean(bank)
    assert abs(bits.mean() - p) <= 4 * math.sqrt(p * (1 - p) / 10**6) + 1e-12


def test_detector_fault_moves_mean_at_onset():
    cfg = StreamConfig(DetectorModel(), seed=9, schedule=ErrorSchedule(50_000, DetectorId.X1, 0.0))
    ks = KeyStream(cfg)
    bits = ks.take(200_000)
    assert abs(bits[:50_000].mean() - 0.5) < 4 * math.sqrt(0.25 / 50_000)
    assert abs(bits[50_000:].mean() - 1 / 3) < 4 * math.sqrt(2 / 9 / 150_000)
    # X1 never clicks after onset
    assert not (ks.last_detectors[50_000:] == DetectorId.X1).any()


@pytest.mark.parametrize("missing", list(DetectorId))
def test_three_state_key_uses_intact_basis(missing):
    bank = DetectorBank(0.9, 0.6, 0.8, 0.5).with_efficiency(missing, 0.0)
    ks = KeyStream(StreamConfig(DetectorModel(bank), seed=21))
    ks.switch_to_three_state(missing)
    bits = ks.take(200_000)
    key_basis = "X" if missing.basis is Basis.Z else "Z"
    probs = {s: Fraction(1, 4) for s in STATES}
    probs[missing.name] = Fraction(0)
    probs[missing.partner.name] = Fraction(1, 2)
    eff = {name: Fraction(bank[DetectorId[name]]) for name in STATES}
    p = float(enumerate_sifted_mean(eff, probs, key_bases=(key_basis,)))
    assert abs(bits.mean() - p) <= 4 * math.sqrt(p * (1 - p) / bits.size)
    assert all(DetectorId(int(d)).basis.value == key_basis for d in np.unique(ks.last_detectors))


def test_three_state_needs_detector_model():
    with pytest.raises(TypeError):
        KeyStream(StreamConfig(Bernoulli(0.5))).switch_to_three_state(DetectorId.X1)


@pytest.mark.parametrize("cfg", CONFIGS + [StreamConfig(Bernoulli(0.3), seed=1)])
def test_stream_file_round_trip(tmp_path, cfg):
    bits = generate(cfg, 1000)
    path = tmp_path / "s.txt"
    write_stream(path, bits, cfg.header())
    lines = path.read_text().splitlines()
    assert lines[0].startswith(f"# seed={cfg.seed} mode=")
    assert "prng=numpy-philox4x64-10" in lines[0]
    assert all(len(line) == 64 for line in lines[1:-1]) and len(lines[-1]) == 1000 % 64
    meta, back = read_stream(path)
    assert np.array_equal(back, bits)
    assert int(meta["seed"]) == cfg.seed
    assert meta["onset"] == (str(cfg.schedule.onset_index) if cfg.schedule else "none")


def test_read_stream_rejects_garbage(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("# seed=1 mode=bernoulli:0.5 onset=none\n0101\n01x1\n")
    with pytest.raises(ValueError, match=":3:"):
        read_stream(p)
    p.write_text("0101\n")
    with pytest.raises(ValueError, match="header"):
        read_stream(p)
