import numpy as np
import pytest

from daunet.functional import ShapeError
from daunet.gradcheck import finite_diff_check
from daunet.simam import SimamConfig, attention_map, simam_attend, simam_energy
from daunet.tensor import Tensor

from oracles import simam_energy_loops


def test_config_validation():
    with pytest.raises(ValueError):
        SimamConfig(lam=0.0)
    with pytest.raises(ValueError):
        SimamConfig(eps=-1.0)
    cfg = SimamConfig()
    assert cfg.lam == 1e-4 and cfg.eps == 1e-8


def test_constant_plane_zero_energy():
    x = Tensor(np.full((2, 3, 4, 4), 7.5))
    e = simam_energy(x).data
    assert np.allclose(e, 0.0, atol=1e-12)


def test_worked_neuron_energy():
    # plane [[1,2],[3,4]], neuron x_t = 1: mu_t = 3, (x_t-mu_t)^2 = 4,
    # sum_{i != t} (x_i - mu_t)^2 = 1 + 0 + 1 = 2, E_t = 4 + 1e-4 * 2
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    e = simam_energy(x).data
    assert e[0, 0, 0, 0] == pytest.approx(4.0002, abs=1e-12)


def test_energy_matches_leave_one_out_oracle():
    rng = np.random.default_rng(50)
    x_data = rng.normal(size=(2, 3, 4, 4))
    got = simam_energy(Tensor(x_data)).data
    want = simam_energy_loops(x_data, 1e-4)
    assert np.max(np.abs(got - want)) <= 1e-10


def test_energy_nonnegative():
    rng = np.random.default_rng(51)
    e = simam_energy(Tensor(rng.normal(size=(2, 4, 5, 5)))).data
    assert np.all(e >= 0.0)


def test_energy_single_pixel_error():
    with pytest.raises(ShapeError):
        simam_energy(Tensor(np.zeros((1, 1, 1, 1))))


def test_constant_plane_attention_saturates_to_identity():
    x_data = np.full((1, 2, 3, 3), 4.0)
    out = simam_attend(Tensor(x_data)).data
    assert np.max(np.abs(out - x_data)) <= 1e-12


def test_worked_neuron_attention():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    a = attention_map(x).data
    # a_t = sigmoid(1 / (4.0002 + 1e-8)) = sigmoid(0.2499875...)
    want = 1.0 / (1.0 + np.exp(-1.0 / (4.0002 + 1e-8)))
    assert a[0, 0, 0, 0] == pytest.approx(want, abs=1e-12)
    out = simam_attend(x).data
    assert out[0, 0, 0, 0] == pytest.approx(1.0 * want, abs=1e-12)


def test_attention_weights_in_half_one():
    # 1/(E+eps) > 0, so weights live in (0.5, 1); float64 rounds the upper
    # end to exactly 1.0 when a neuron sits on its leave-one-out mean.
    rng = np.random.default_rng(52)
    for _ in range(5):
        a = attention_map(Tensor(rng.normal(size=(1, 2, 4, 4)) * rng.uniform(0.1, 10))).data
        assert np.all(a > 0.5)
        assert np.all(a <= 1.0)
    # Strict upper bound holds wherever energy is bounded away from zero.
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    assert np.all(attention_map(x).data < 1.0)


def test_energy_ordering_far_neuron_gets_less_attention():
    # All neurons share one value except a single outlier: the outlier's
    # energy is highest, so its attention weight is strictly lowest.
    x_data = np.full((1, 1, 3, 3), 1.0)
    x_data[0, 0, 1, 1] = 5.0
    a = attention_map(Tensor(x_data)).data[0, 0]
    outlier = a[1, 1]
    rest = np.delete(a.ravel(), 4)
    assert np.all(outlier < rest)


def test_parameter_free():
    # Attention must introduce no tensors beyond its input: it is a pure
    # function, so the graph's leaves are exactly the input.
    x = Tensor(np.random.default_rng(53).normal(size=(1, 2, 3, 3)), requires_grad=True)
    out = simam_attend(x)
    leaves = set()
    stack = [out]
    seen = set()
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if not node._parents and node.requires_grad:
            leaves.add(id(node))
        stack.extend(node._parents)
    assert leaves == {id(x)}


def test_attend_gradient_matches_finite_difference():
    rng = np.random.default_rng(54)
    x = Tensor(rng.normal(size=(1, 2, 3, 3)), requires_grad=True)
    rep = finite_diff_check(lambda: (simam_attend(x) ** 2).sum(), {"x": x})
    assert rep.passed, str(rep)
