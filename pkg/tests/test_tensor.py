"""
Tests for dense arrays, the recording graph, layers, Adam and checkpoints.
"""

import numpy as np
import pytest

from app.core.config import settings
from app.core.errors import FormatError, GraphError, NonFiniteError, ShapeError
from app.tensor import ops
from app.tensor.array import DenseArray, Graph, backward, get_dtype, precision
from app.tensor.checkpoint import load_arrays, save_arrays
from app.tensor.nn import MLP, Conv2d, Linear, Module, Parameter
from app.tensor.optim import Adam


# ==================== FORWARD OP TESTS ====================

def test_matmul_identity(double):
    """Test identity times A returns A."""
    a = np.arange(9.0).reshape(3, 3)
    out = ops.matmul(DenseArray(np.eye(3)), DenseArray(a))
    np.testing.assert_array_equal(out.numpy(), a)


def test_softmax_uniform():
    """Test softmax of equal logits is uniform."""
    out = ops.softmax(DenseArray([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.numpy(), [1 / 3, 1 / 3, 1 / 3], rtol=1e-6)


def test_softmax_shift_invariance(double, rng):
    """Test adding a constant to every logit leaves softmax unchanged."""
    logits = rng.normal(size=(4, 6))
    base = ops.softmax(DenseArray(logits)).numpy()
    shifted = ops.softmax(DenseArray(logits + 123.0)).numpy()
    np.testing.assert_allclose(shifted, base, atol=1e-12)


def _source_index(shape: tuple[int, ...], out_index: tuple[int, ...]) -> tuple[int, ...]:
    """Index of the operand element that broadcasting places at `out_index`."""
    offset = len(out_index) - len(shape)
    return tuple(0 if shape[i] == 1 else out_index[offset + i] for i in range(len(shape)))


@pytest.mark.parametrize("shape_a,shape_b", [
    ((3,), (2, 3)),
    ((2, 1), (1, 4)),
    ((2, 1, 3), (4, 1)),
    ((1, 3, 1, 2), (2, 1, 4, 1)),
])
def test_broadcast_matches_naive_loops(double, rng, shape_a, shape_b):
    """Test broadcast products and their gradients against explicit index loops."""
    a_data, b_data = rng.normal(size=shape_a), rng.normal(size=shape_b)
    a = DenseArray(a_data, requires_grad=True)
    b = DenseArray(b_data, requires_grad=True)
    with Graph() as graph:
        out = a * b
        loss = out.sum()
    graph.backward(loss)

    out_shape = np.broadcast_shapes(shape_a, shape_b)
    expected = np.zeros(out_shape)
    grad_a, grad_b = np.zeros(shape_a), np.zeros(shape_b)
    for idx in np.ndindex(*out_shape):
        ia, ib = _source_index(shape_a, idx), _source_index(shape_b, idx)
        va, vb = a_data[ia], b_data[ib]
        expected[idx] = va * vb
        grad_a[ia] += vb
        grad_b[ib] += va
    np.testing.assert_allclose(out.numpy(), expected)
    np.testing.assert_allclose(a.grad, grad_a)
    np.testing.assert_allclose(b.grad, grad_b)


def test_bilinear_sample_lattice_point(double, rng):
    """Test sampling at an integer pixel returns the stored value with mask set."""
    image = rng.normal(size=(2, 5, 6))
    values, mask = ops.bilinear_sample(DenseArray(image), np.array([[4.0, 3.0]]))
    np.testing.assert_array_equal(values.numpy()[:, 0], image[:, 3, 4])
    assert mask[0]


def test_bilinear_sample_is_linear_between_nodes(double):
    """Test sampling halfway between two pixels averages them."""
    image = np.array([[[0.0, 2.0], [4.0, 6.0]]])
    values, mask = ops.bilinear_sample(DenseArray(image), np.array([[0.5, 0.0], [0.5, 0.5]]))
    np.testing.assert_allclose(values.numpy()[0], [1.0, 3.0])
    assert mask.all()


def test_bilinear_sample_outside_is_zero_and_masked(double):
    """Test samples beyond the border are zero-padded and flagged invalid."""
    image = np.ones((1, 3, 3))
    values, mask = ops.bilinear_sample(DenseArray(image), np.array([[-1.5, 1.0], [1.0, 1.0], [2.5, 1.0]]))
    assert values.numpy()[0, 0] == 0.0
    assert mask.tolist() == [False, True, False]


def test_trilinear_sample_lattice_point(double, rng):
    """Test sampling a volume at a lattice node returns the stored value."""
    vol = rng.normal(size=(3, 4, 5, 6))
    values, mask = ops.trilinear_sample(DenseArray(vol), np.array([[2.0, 1.0, 3.0]]))
    np.testing.assert_array_equal(values.numpy()[:, 0], vol[:, 3, 1, 2])
    assert mask[0]


def test_shape_mismatch_names_kind():
    """Test incompatible operands raise a ShapeError naming the op."""
    with pytest.raises(ShapeError, match="matmul"):
        ops.matmul(DenseArray(np.ones((2, 3))), DenseArray(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="add"):
        ops.add(DenseArray(np.ones((2, 3))), DenseArray(np.ones((4,))))


def test_debug_mode_rejects_non_finite_inputs():
    """Test debug mode stops at the first op fed a NaN."""
    settings.DEBUG = True
    with pytest.raises(NonFiniteError, match="exp"):
        ops.exp(DenseArray([1.0, np.nan]))


def test_max_returns_indices():
    """Test max along an axis returns values and argmax indices."""
    values, idx = ops.max(DenseArray([[1.0, 5.0, 2.0], [7.0, 0.0, 3.0]]), axis=1)
    np.testing.assert_array_equal(values.numpy(), [5.0, 7.0])
    np.testing.assert_array_equal(idx, [1, 0])


def test_empty_array_rejected():
    """Test zero-sized arrays are refused."""
    with pytest.raises(ShapeError):
        DenseArray(np.zeros((0, 3)))


# ==================== PRECISION TESTS ====================

def test_precision_switch():
    """Test the precision context changes the default dtype and restores it."""
    outer = get_dtype()
    with precision("double"):
        assert DenseArray([1.0]).dtype == np.float64
    with precision("single"):
        assert DenseArray([1.0]).dtype == np.float32
    assert get_dtype() == outer


# ==================== BACKWARD TESTS ====================

def test_backward_square(double):
    """Test d(sum(x*x))/dx = 2x."""
    x = DenseArray([1.0, 2.0, 3.0], requires_grad=True)
    with Graph() as graph:
        loss = ops.sum(x * x)
    graph.backward(loss)
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])


def test_full_reduction_is_a_scalar(double):
    """Test summing every axis gives a 0-d array with one element."""
    x = DenseArray(np.ones((2, 3)))
    total = x.sum()
    assert total.shape == ()
    assert total.item() == 6.0


def test_backward_full_sum_of_matrix(double):
    """Test d(sum(x*x))/dx = 2x for a rank-2 input."""
    data = np.arange(6.0).reshape(2, 3)
    x = DenseArray(data, requires_grad=True)
    with Graph() as graph:
        loss = (x * x).sum()
    graph.backward(loss)
    np.testing.assert_allclose(x.grad, 2.0 * data)


def test_backward_partial_reductions(double):
    """Test mean over one axis and max along another route gradients to the right cells."""
    data = np.array([[1.0, 5.0, 2.0], [7.0, 3.0, 4.0]])
    x = DenseArray(data, requires_grad=True)
    with Graph() as graph:
        values, _ = ops.max(x, axis=1)
        loss = ops.mean(x, axis=0).sum() + values.sum()
    graph.backward(loss)
    expected = np.full((2, 3), 0.5)
    expected[0, 1] += 1.0
    expected[1, 0] += 1.0
    np.testing.assert_allclose(x.grad, expected)


def test_backward_sigmoid_at_zero(double):
    """Test the sigmoid slope at zero is 1/4."""
    x = DenseArray([0.0], requires_grad=True)
    with Graph():
        loss = ops.sum(ops.sigmoid(x))
    backward(loss)
    np.testing.assert_allclose(x.grad, [0.25])


def test_backward_accumulates_shared_inputs(double):
    """Test a leaf used twice receives both contributions."""
    x = DenseArray([3.0], requires_grad=True)
    with Graph() as graph:
        loss = ops.sum(x * 2.0 + x * 5.0)
    graph.backward(loss)
    np.testing.assert_allclose(x.grad, [7.0])


def test_backward_rejects_non_scalar():
    """Test backward refuses a non-scalar loss."""
    x = DenseArray([1.0, 2.0], requires_grad=True)
    with Graph() as graph:
        y = x * 2.0
    with pytest.raises(GraphError, match="scalar"):
        graph.backward(y)


def test_backward_twice_fails():
    """Test a consumed graph cannot be reused."""
    x = DenseArray([1.0], requires_grad=True)
    with Graph() as graph:
        loss = ops.sum(x * x)
    graph.backward(loss)
    with pytest.raises(GraphError, match="consumed"):
        graph.backward(loss)


def test_backward_without_graph_fails():
    """Test an unrecorded loss has no history to differentiate."""
    x = DenseArray([1.0], requires_grad=True)
    with pytest.raises(GraphError):
        backward(ops.sum(x * x))


def test_suspend_stops_recording():
    """Test ops inside Graph.suspend are not recorded."""
    x = DenseArray([1.0], requires_grad=True)
    with Graph() as graph:
        with Graph.suspend():
            y = x * 2.0
        z = x * 3.0
    assert len(graph) == 1
    assert not y.requires_grad
    assert z.requires_grad


# ==================== LAYER TESTS ====================

class TwoLayer(Module):
    def __init__(self, rng):
        self.first = Linear(3, 4, rng)
        self.rest = [Linear(4, 2, rng)]
        self.gain = Parameter(np.ones(2))


def test_named_parameters_are_unique_and_nested(rng):
    """Test parameter names follow attribute paths."""
    names = [name for name, _ in TwoLayer(rng).named_parameters()]
    assert len(names) == len(set(names))
    assert "gain" in names
    assert any(name.startswith("first.") for name in names)
    assert any(name.startswith("rest.0.") for name in names)


def test_mlp_and_conv_shapes(rng):
    """Test layer output shapes."""
    mlp = MLP([5, 8, 2], rng)
    assert mlp(DenseArray(np.zeros((7, 5)))).shape == (7, 2)
    conv = Conv2d(3, 6, 3, rng, stride=2)
    assert conv(DenseArray(np.zeros((1, 3, 8, 8)))).shape == (1, 6, 4, 4)


# ==================== ADAM TESTS ====================

def test_adam_zero_gradient_keeps_values(double):
    """Test a zero gradient leaves parameters unchanged but advances the step counter."""
    p = Parameter(np.array([1.0, -2.0]), name="p")
    opt = Adam([("p", p)])
    opt.step()
    np.testing.assert_array_equal(p.value, [1.0, -2.0])
    assert opt.t == 1


def test_adam_first_step_hand_value(double):
    """Test one Adam step with g=1 moves p by lr."""
    p = Parameter(np.array([1.0]), name="p")
    opt = Adam([("p", p)], lr=1e-4)
    p.grad = np.array([1.0])
    opt.step()
    np.testing.assert_allclose(p.value, [1.0 - 1e-4], rtol=1e-9)
    assert np.all(p.grad == 0)


def test_adam_constant_gradient_decreases(double):
    """Test two steps with a constant positive gradient decrease p monotonically."""
    p = Parameter(np.array([1.0]), name="p")
    opt = Adam([("p", p)], lr=1e-2)
    history = [p.value[0]]
    for _ in range(2):
        p.grad = np.array([1.0])
        opt.step()
        history.append(p.value[0])
    assert history[0] > history[1] > history[2]


def test_adam_skips_non_finite_gradient(double):
    """Test a NaN gradient skips only that parameter."""
    a, b = Parameter(np.array([1.0]), "a"), Parameter(np.array([1.0]), "b")
    opt = Adam([("a", a), ("b", b)], lr=0.1)
    a.grad, b.grad = np.array([np.nan]), np.array([1.0])
    assert opt.step() == 1
    assert a.value[0] == 1.0
    assert b.value[0] < 1.0


def test_adam_duplicate_names_rejected(double):
    """Test two parameters under one name are refused with the name in the message."""
    a, b = Parameter(np.array([1.0]), "w"), Parameter(np.array([2.0]), "w")
    with pytest.raises(GraphError, match="repeated: w"):
        Adam([("w", a), ("w", b)])


# ==================== CHECKPOINT TESTS ====================

def test_checkpoint_round_trip_is_exact(tmp_path, rng):
    """Test saved arrays come back bit-identical in both payload widths."""
    arrays = {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=(4,)), "s": np.array(2.5)}
    save_arrays(tmp_path / "d.recon", arrays, double=True)
    loaded, is_double = load_arrays(tmp_path / "d.recon")
    assert is_double
    for name, arr in arrays.items():
        np.testing.assert_array_equal(loaded[name], arr)

    single = {k: v.astype(np.float32) for k, v in arrays.items()}
    save_arrays(tmp_path / "s.recon", single)
    loaded, is_double = load_arrays(tmp_path / "s.recon")
    assert not is_double
    for name, arr in single.items():
        np.testing.assert_array_equal(loaded[name], arr)


def test_checkpoint_rejects_bad_magic(tmp_path):
    """Test a foreign file is refused."""
    path = tmp_path / "bad.recon"
    path.write_bytes(b"NOTAFILE" + b"\0" * 8)
    with pytest.raises(FormatError, match="magic"):
        load_arrays(path)


def test_checkpoint_rejects_truncation(tmp_path):
    """Test a cut-off payload is reported."""
    path = tmp_path / "t.recon"
    save_arrays(path, {"w": np.ones((4, 4))})
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(FormatError, match="truncated"):
        load_arrays(path)
