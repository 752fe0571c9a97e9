import numpy as np
import pytest
from hypothesis import given

from core.datamodel import ConvLayerSpec, DenseConvKernel, FeatureMap, TTConvKernel
from core.errors import TTDataError, TTIntegrityError, TTShapeError
from core.index_mapping import plan_factorization
from core.tt_conv import (MacCounter, bias_adds, conv_flops, decompose_kernel, dense_conv_forward,
                          drop_padding, kernel_rank_bounds, kernel_to_matrix, matrix_to_kernel,
                          pad_feature_map, reconstruct_kernel, relative_deviation, resolve_ranks,
                          to_storage_precision, tt_conv_forward)
from core.tt_core import tt_param_count
from tests.strategies import conv_spec, conv_specs, expensive, random_kernel


def explicit_spec(k, in_factors, out_factors, c_in=None, c_out=None, bias=False):
    c_in = c_in or int(np.prod(in_factors))
    c_out = c_out or int(np.prod(out_factors))
    return ConvLayerSpec(k=k, in_channels=c_in, out_channels=c_out, has_bias=bias,
                         in_plan=plan_factorization(c_in, len(in_factors), "explicit", in_factors),
                         out_plan=plan_factorization(c_out, len(out_factors), "explicit", out_factors))


def naive_conv(weights, bias, x):
    """Sechs geschachtelte Schleifen, unabhängig von im2col."""
    k, _, c_in, c_out = weights.shape
    h, w, _ = x.shape
    out = np.zeros((h - k + 1, w - k + 1, c_out))
    for oh in range(h - k + 1):
        for ow in range(w - k + 1):
            for o in range(c_out):
                acc = 0.0
                for m in range(k):
                    for n in range(k):
                        for c in range(c_in):
                            acc += weights[m, n, c, o] * x[oh + m, ow + n, c]
                out[oh, ow, o] = acc + (bias[o] if bias is not None else 0.0)
    return out


def random_tt_kernel(rng, spec, rank):
    ranks = resolve_ranks(spec, rank)
    chain = (1,) + ranks + (1,)
    core0 = rng.standard_normal((1, spec.k * spec.k, chain[1]))
    cores = [rng.standard_normal((chain[i + 1], ci, co, chain[i + 2]))
             for i, (ci, co) in enumerate(zip(spec.in_plan.factors, spec.out_plan.factors))]
    bias = rng.standard_normal(spec.out_channels) if spec.has_bias else None
    return TTConvKernel(spec, core0, cores, bias)


# ============================================================
# DICHTES ORAKEL
# ============================================================

class TestDenseForward:

    def test_identity_kernel(self, rng):
        spec = explicit_spec(1, (1,), (1,))
        x = rng.standard_normal((5, 4, 1))
        y = dense_conv_forward(DenseConvKernel(spec, np.ones((1, 1, 1, 1))), FeatureMap(x))
        assert np.array_equal(y.data, x)

    def test_all_ones_2x2(self):
        spec = explicit_spec(2, (1,), (1,))
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1)
        y = dense_conv_forward(DenseConvKernel(spec, np.ones((2, 2, 1, 1))), FeatureMap(x))
        assert y.shape == (1, 1, 1)
        assert y.data[0, 0, 0] == 10.0

    def test_matches_six_loop_oracle_exactly(self, rng):
        spec = explicit_spec(3, (2, 2), (2, 2), bias=True)
        kernel = random_kernel(rng, spec, integer=True)
        x = rng.integers(-4, 5, size=(8, 8, 4)).astype(np.float64)
        y = dense_conv_forward(kernel, FeatureMap(x))
        assert np.array_equal(y.data, naive_conv(kernel.weights, kernel.bias, x))

    def test_channel_mismatch(self, rng):
        spec = explicit_spec(1, (2,), (2,))
        with pytest.raises(TTShapeError):
            dense_conv_forward(random_kernel(rng, spec), FeatureMap(np.zeros((3, 3, 3))))

    def test_input_smaller_than_kernel(self, rng):
        spec = explicit_spec(3, (1,), (1,))
        with pytest.raises(TTShapeError):
            dense_conv_forward(random_kernel(rng, spec), FeatureMap(np.zeros((2, 5, 1))))

    def test_counter(self, rng):
        spec = explicit_spec(3, (2,), (3,), bias=True)
        counter = MacCounter()
        dense_conv_forward(random_kernel(rng, spec), FeatureMap(rng.standard_normal((6, 5, 2))), counter)
        assert counter.macs == conv_flops(spec, "dense", (4, 3))
        assert counter.bias_adds == bias_adds(spec, (4, 3)) == 36


class TestKernelMatrix:

    def test_k1_is_channel_matrix(self, rng):
        spec = explicit_spec(1, (3,), (5,))
        kernel = random_kernel(rng, spec)
        assert np.array_equal(kernel_to_matrix(kernel), kernel.weights[0, 0])

    def test_spatial_order_m_fastest(self):
        spec = explicit_spec(2, (1,), (1,))
        w = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1, 1)     # W[m, n]
        column = kernel_to_matrix(DenseConvKernel(spec, w))[:, 0]
        assert column.tolist() == [1.0, 3.0, 2.0, 4.0]                   # W[1,1], W[2,1], W[1,2], W[2,2]

    def test_channel_block_layout(self, rng):
        spec = explicit_spec(3, (2,), (5,))
        kernel = random_kernel(rng, spec)
        mat = kernel_to_matrix(kernel)
        for m in range(3):
            for n in range(3):
                for c in range(2):
                    assert np.array_equal(mat[m + 3 * n + 9 * c], kernel.weights[m, n, c])

    def test_roundtrip(self, rng):
        spec = explicit_spec(3, (2,), (5,))
        kernel = random_kernel(rng, spec)
        back = matrix_to_kernel(kernel_to_matrix(kernel), spec)
        assert np.array_equal(back.weights, kernel.weights)


# ============================================================
# ZERLEGUNG UND REKONSTRUKTION
# ============================================================

class TestDecomposeKernel:

    def test_rank_two_param_count(self, rng):
        spec = explicit_spec(3, (4, 4, 4, 4), (4, 4, 4, 4))
        ttk = decompose_kernel(random_kernel(rng, spec), rank=2)
        assert ttk.core0.shape == (1, 9, 2)
        assert [c.shape for c in ttk.channel_cores] == [(2, 4, 4, 2)] * 3 + [(2, 4, 4, 1)]
        assert ttk.param_count == 242 == tt_param_count(ttk.mode_sizes, ttk.chain_ranks)
        assert spec.dense_params == 589_824
        assert spec.dense_params / ttk.param_count == pytest.approx(2437.3, abs=0.05)

    def test_recovers_tt_structured_kernel(self, rng):
        spec = explicit_spec(3, (2, 2), (2, 2))
        source = reconstruct_kernel(random_tt_kernel(rng, spec, 2))
        ttk = decompose_kernel(source, rank=2)
        err = np.linalg.norm(reconstruct_kernel(ttk).weights - source.weights) / np.linalg.norm(source.weights)
        assert err <= 1e-8

    def test_scalar_chain(self):
        spec = explicit_spec(1, (1,), (1,))
        kernel = DenseConvKernel(spec, np.full((1, 1, 1, 1), 2.5))
        assert reconstruct_kernel(decompose_kernel(kernel, rank=1)).weights[0, 0, 0, 0] == pytest.approx(2.5)

    def test_zero_kernel(self):
        spec = explicit_spec(3, (2, 3), (2, 2), c_in=5)
        ttk = decompose_kernel(DenseConvKernel(spec, np.zeros((3, 3, 5, 4))), rank=3)
        assert not np.any(reconstruct_kernel(ttk).weights)

    def test_full_rank_exact(self, rng):
        spec = conv_spec(3, 6, 7, 2)
        kernel = random_kernel(rng, spec)
        ttk = decompose_kernel(kernel)
        err = np.linalg.norm(reconstruct_kernel(ttk).weights - kernel.weights) / np.linalg.norm(kernel.weights)
        assert err <= 1e-10

    def test_tolerance_mode(self, rng):
        spec = conv_spec(3, 8, 8, 2)
        kernel = random_kernel(rng, spec)
        ttk = decompose_kernel(kernel, tolerance=0.3)
        err = np.linalg.norm(reconstruct_kernel(ttk).weights - kernel.weights) / np.linalg.norm(kernel.weights)
        assert err <= 0.3

    def test_non_finite_weights(self):
        spec = explicit_spec(1, (2,), (2,))
        w = np.ones((1, 1, 2, 2))
        w[0, 0, 1, 1] = np.inf
        with pytest.raises(TTDataError):
            decompose_kernel(DenseConvKernel(spec, w), rank=1)

    def test_dummy_weights_checked(self, rng):
        spec = explicit_spec(1, (2, 2), (2, 2), c_in=3)
        corrupt = random_tt_kernel(rng, spec, 2)          # Dummy-Eingang nicht Null
        with pytest.raises(TTIntegrityError):
            reconstruct_kernel(corrupt)

    def test_padded_kernel_measures_bound(self, rng):
        spec = conv_spec(3, 5, 7, 2)
        assert spec.in_plan.pad_count and spec.out_plan.pad_count
        ttk = decompose_kernel(random_kernel(rng, spec), rank=2)
        assert ttk.dummy_bound > 1e-12
        fm = FeatureMap(rng.standard_normal((6, 5, spec.in_channels)))
        y_ref = dense_conv_forward(reconstruct_kernel(ttk), fm)
        assert relative_deviation(tt_conv_forward(ttk, fm).data, y_ref.data) <= 1e-6

    def test_storage_precision_is_float32_exact(self, rng):
        spec = conv_spec(3, 4, 6, 2, bias=True)
        ttk = to_storage_precision(decompose_kernel(random_kernel(rng, spec), rank=3))
        for arr in (ttk.core0, ttk.bias, *ttk.channel_cores):
            assert np.array_equal(arr.astype(np.float32).astype(np.float64), arr)
        reconstruct_kernel(ttk)

    def test_rank_bounds_and_clamping(self):
        spec = explicit_spec(3, (2, 2, 2, 2), (2, 2, 2, 2))
        assert kernel_rank_bounds(spec) == (9, 36, 16, 4)
        assert resolve_ranks(spec, 16) == (9, 16, 16, 4)
        with pytest.raises(TTShapeError):
            resolve_ranks(spec, 0)


# ============================================================
# TT-FORWARD
# ============================================================

class TestTTForward:

    def test_identity_tt_kernel(self, rng):
        spec = explicit_spec(1, (2, 2), (2, 2))
        eye = np.eye(2).reshape(1, 2, 2, 1)
        ttk = TTConvKernel(spec, np.ones((1, 1, 1)), [eye, eye])
        x = rng.standard_normal((5, 6, 4))
        y = tt_conv_forward(ttk, FeatureMap(x))
        assert np.max(np.abs(y.data - x)) <= 1e-12

    def test_zero_input_gives_bias(self, rng):
        spec = conv_spec(3, 6, 5, 2, bias=True)
        ttk = decompose_kernel(random_kernel(rng, spec), rank=2)
        y = tt_conv_forward(ttk, FeatureMap(np.zeros((6, 6, 6))))
        assert np.array_equal(y.data, np.broadcast_to(ttk.bias, (4, 4, 5)))

    def test_zero_input_without_bias(self, rng):
        spec = conv_spec(1, 4, 4, 2)
        ttk = decompose_kernel(random_kernel(rng, spec), rank=2)
        assert not np.any(tt_conv_forward(ttk, FeatureMap(np.zeros((3, 3, 4)))).data)

    def test_random_8x8_against_oracle(self, rng):
        spec = conv_spec(3, 8, 12, 2, bias=True)
        ttk = decompose_kernel(random_kernel(rng, spec), rank=4)
        fm = FeatureMap(rng.standard_normal((8, 8, 8)))
        dev = relative_deviation(tt_conv_forward(ttk, fm).data,
                                 dense_conv_forward(reconstruct_kernel(ttk), fm).data)
        assert dev <= 1e-6

    def test_oracle_equivalence_200_cases(self):
        rng = np.random.default_rng(200)
        for _ in range(200):
            k = int(rng.choice([1, 3]))
            spec = conv_spec(k, int(rng.integers(1, 33)), int(rng.integers(1, 33)),
                             int(rng.integers(1, 4)), bias=bool(rng.integers(0, 2)))
            rank = int(rng.choice([1, 2, 4, 8]))
            ttk = decompose_kernel(random_kernel(rng, spec), rank=rank)
            h, w = int(rng.integers(k, 17)), int(rng.integers(k, 17))
            fm = FeatureMap(rng.standard_normal((h, w, spec.in_channels)))

            counter = MacCounter()
            y_tt = tt_conv_forward(ttk, fm, counter)
            y_ref = dense_conv_forward(reconstruct_kernel(ttk), fm)
            assert relative_deviation(y_tt.data, y_ref.data) <= 1e-6
            assert counter.macs == conv_flops(spec, "tt", y_tt.shape[:2], ttk.ranks)

    def test_channel_mismatch(self, rng):
        spec = conv_spec(1, 4, 4, 2)
        ttk = decompose_kernel(random_kernel(rng, spec), rank=1)
        with pytest.raises(TTShapeError):
            tt_conv_forward(ttk, FeatureMap(np.zeros((3, 3, 5))))

    def test_linearity(self, rng):
        spec = conv_spec(3, 6, 9, 2)
        ttk = decompose_kernel(random_kernel(rng, spec), rank=3)
        x, y = rng.standard_normal((7, 7, 6)), rng.standard_normal((7, 7, 6))
        a, b = 1.7, -0.4
        lhs = tt_conv_forward(ttk, FeatureMap(a * x + b * y)).data
        rhs = a * tt_conv_forward(ttk, FeatureMap(x)).data + b * tt_conv_forward(ttk, FeatureMap(y)).data
        assert relative_deviation(lhs, rhs) <= 1e-9

    def test_padding_neutrality(self, rng):
        spec = conv_spec(3, 5, 7, 2)
        ttk = decompose_kernel(random_kernel(rng, spec), rank=2)
        fm = FeatureMap(rng.standard_normal((6, 6, 5)))
        padded = pad_feature_map(fm, spec.in_plan)
        assert padded.is_padded and padded.shape[2] == spec.in_plan.padded_size
        assert np.array_equal(tt_conv_forward(ttk, padded).data, tt_conv_forward(ttk, fm).data)
        assert np.array_equal(drop_padding(padded).data, fm.data)

    def test_padding_neutrality_dense(self, rng):
        spec = explicit_spec(3, (5,), (3,))
        padded_spec = explicit_spec(3, (8,), (3,))
        kernel = random_kernel(rng, spec, integer=True)
        w = np.zeros((3, 3, 8, 3))
        w[:, :, :5] = kernel.weights
        x = rng.integers(-4, 5, size=(6, 6, 5)).astype(np.float64)
        xp = np.zeros((6, 6, 8))
        xp[:, :, :5] = x
        y = dense_conv_forward(kernel, FeatureMap(x)).data
        yp = dense_conv_forward(DenseConvKernel(padded_spec, w), FeatureMap(xp)).data
        assert np.array_equal(y, yp)

    def test_stride_and_padding_plumbing(self, rng):
        spec = conv_spec(3, 4, 6, 2)
        ttk = decompose_kernel(random_kernel(rng, spec), rank=2)
        fm = FeatureMap(rng.standard_normal((9, 9, 4)))
        y_tt = tt_conv_forward(ttk, fm, stride=2, padding=1)
        y_ref = dense_conv_forward(reconstruct_kernel(ttk), fm, stride=2, padding=1)
        assert y_tt.shape == (5, 5, 6)
        assert relative_deviation(y_tt.data, y_ref.data) <= 1e-6


@expensive
@given(conv_specs(max_channels=16))
def test_forward_matches_oracle_for_any_plan(spec):
    rng = np.random.default_rng(spec.in_channels * 97 + spec.out_channels)
    ttk = decompose_kernel(random_kernel(rng, spec), rank=3)
    fm = FeatureMap(rng.standard_normal((spec.k + 3, spec.k + 2, spec.in_channels)))
    assert relative_deviation(tt_conv_forward(ttk, fm).data,
                              dense_conv_forward(reconstruct_kernel(ttk), fm).data) <= 1e-6


# ============================================================
# MAC-MODELL
# ============================================================

class TestConvFlops:

    def test_dense_trivial(self):
        assert conv_flops(explicit_spec(1, (1,), (1,)), "dense", (4, 4)) == 16

    def test_dense_256(self):
        spec = explicit_spec(3, (4, 4, 4, 4), (4, 4, 4, 4))
        assert conv_flops(spec, "dense", (20, 20)) == 235_929_600

    def test_tt_rank16_matches_instrumented_forward(self, rng):
        spec = explicit_spec(3, (4, 4, 4, 4), (4, 4, 4, 4))
        ttk = decompose_kernel(random_kernel(rng, spec), rank=16)
        counter = MacCounter()
        y = tt_conv_forward(ttk, FeatureMap(rng.standard_normal((6, 6, 256))), counter)
        assert counter.macs == conv_flops(spec, "tt", y.shape[:2], ttk.ranks)
        assert counter.macs == conv_flops(spec, "tt", (4, 4), 16)

    def test_crossover_tt_exceeds_dense(self, rng):
        spec = explicit_spec(3, (2, 2, 2, 2), (2, 2, 2, 2))
        assert conv_flops(spec, "dense", (1, 1)) == 2304
        assert conv_flops(spec, "tt", (1, 1), 16) == 16272
        ttk = decompose_kernel(random_kernel(rng, spec), rank=16)
        counter = MacCounter()
        tt_conv_forward(ttk, FeatureMap(rng.standard_normal((5, 5, 16))), counter)
        assert counter.macs == conv_flops(spec, "tt", (3, 3), ttk.ranks) > conv_flops(spec, "dense", (3, 3))

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            conv_flops(explicit_spec(1, (1,), (1,)), "sparse", (1, 1))

    def test_tt_needs_ranks(self):
        with pytest.raises(ValueError):
            conv_flops(explicit_spec(1, (1,), (1,)), "tt", (1, 1))
