"""The gradient-verification suites themselves stay healthy."""

from gldnet.verification import gld_block_suite, network_sampled_suite, op_suite


def test_op_suite_all_within_tolerance():
    results = op_suite(seed=0)
    assert results, "suite must cover the op inventory"
    worst = max(results.values())
    assert worst <= 1e-4, {k: v for k, v in results.items() if v > 1e-4}


def test_op_suite_covers_op_kinds():
    names = set(op_suite(seed=1))
    for expected in ("matmul", "softmax", "conv2d", "deconv2d", "overlap_add",
                     "batchnorm_gamma", "elu", "sigmoid"):
        assert any(expected in n for n in names), expected


def test_block_suite_sampled():
    results = gld_block_suite(seed=2, sample=4)
    assert max(results.values()) <= 1e-4
    assert any("global_gain" in k for k in results)
    assert any("local_gain" in k for k in results)


def test_network_suite_groups():
    results = network_sampled_suite(seed=3, coords_per_tensor=1, tensors_per_group=1)
    assert max(results.values()) <= 1e-4
    for group in ("enc0", "lstm0", "lstm_proj", "dec0", "wave_decoder"):
        assert group in results
