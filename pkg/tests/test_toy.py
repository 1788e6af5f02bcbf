import numpy as np
import pytest

from rosette_gan.errors import ValidationError
from rosette_gan.toy import ToyConfig, check_toy, seeded_target, train_toy


def test_target_is_seeded():
    assert seeded_target(3) == seeded_target(3)
    m, s = seeded_target(3, dim=2)
    assert len(m) == 2 and all(0.5 <= v <= 1.5 for v in s)


def test_stability_500_steps():
    r = train_toy(ToyConfig(steps=500, seed=0))
    assert len(r.d_losses) == 500
    assert np.all(np.isfinite(r.d_losses)) and np.all(np.isfinite(r.g_losses))


def test_deterministic():
    a = train_toy(ToyConfig(steps=20, seed=1))
    b = train_toy(ToyConfig(steps=20, seed=1))
    assert a.d_losses == b.d_losses


def test_two_dimensional_runs():
    r = train_toy(ToyConfig(dim=2, target_mean=(1.0, -1.0), target_std=(0.5, 1.0), steps=50))
    assert check_toy(r, n=100).mean.shape == (2,)


def test_validation():
    with pytest.raises(ValidationError):
        ToyConfig(target_std=(0.0,))


@pytest.mark.slow
def test_converges_single_seed():
    m, s = seeded_target(1)
    assert check_toy(train_toy(ToyConfig(seed=1, target_mean=m, target_std=s))).passed
