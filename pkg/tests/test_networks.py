from pathlib import Path

import numpy as np
import pytest

from histotnet.core.rng import Rng
from histotnet.errors import FormatError, PayloadLengthError, ValidationError
from histotnet.nn.autograd import Tensor
from histotnet.nn.bundle import (
    NNW_MAGIC,
    ModelBundle,
    bundle_of,
    decode_bundle,
    encode_bundle,
    load_model,
    load_network,
    save_model,
)
from histotnet.nn.classifier import build_classifier
from histotnet.nn.gradcheck import gradcheck
from histotnet.nn.layers import (
    Conv2d,
    Sequential,
    architectures,
    build_from_descriptor,
    format_descriptor,
    parse_descriptor,
)
from histotnet.nn.tnet import TNet, TNetSpec, UNet, build_tnet, copy_weights


def _batch(shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape).astype(np.float32)


def test_tnet_spec_validation():
    with pytest.raises(ValidationError):
        TNetSpec(depth=0)
    with pytest.raises(ValidationError):
        TNetSpec(skip_convs=-1)
    assert TNetSpec(depth=4).divisor == 8


def test_tnet_output_shape_and_divisibility():
    model = build_tnet(TNetSpec(depth=3, base_channels=2, skip_convs=1, out_classes=4))
    out = model(Tensor(_batch((2, 3, 8, 12))))
    assert out.shape == (2, 4, 8, 12)
    with pytest.raises(ValidationError):
        model(Tensor(_batch((1, 3, 6, 8))))
    with pytest.raises(ValidationError):
        model(Tensor(_batch((1, 1, 8, 8))))


def test_unet_parameter_count():
    assert UNet(TNetSpec(depth=2, base_channels=2)).num_parameters() == 507


@pytest.mark.parametrize("depth,base,skip", [(2, 2, 1), (3, 4, 2), (4, 2, 3), (1, 3, 2)])
def test_skip_convolutions_add_the_expected_weights(depth, base, skip):
    spec = TNetSpec(depth=depth, base_channels=base, skip_convs=skip)
    extra = build_tnet(spec).num_parameters() - UNet(spec).num_parameters()
    assert extra == spec.skip_parameter_count()
    assert extra == sum(skip * (9 * c * c + c) for c in (base * 2 ** i for i in range(depth - 1)))


def test_tnet_without_skip_convs_matches_unet_bit_for_bit():
    spec = TNetSpec(depth=3, base_channels=3, skip_convs=0, out_classes=2)
    unet = UNet(spec, Rng(5))
    tnet = TNet(spec, Rng(9))
    copy_weights(unet, tnet)
    x = _batch((2, 3, 8, 8), seed=4)
    assert np.array_equal(tnet(Tensor(x)).data, unet(Tensor(x)).data)


def test_tnet_gradcheck_small_network():
    model = build_tnet(TNetSpec(depth=2, base_channels=2, skip_convs=1, out_classes=1), seed=3)
    before = model.get_flat_weights().copy()
    report = gradcheck(model, _batch((1, 3, 4, 4), seed=1), tolerance=1e-3, max_entries=16)
    assert report.passed, report.errors
    assert "input" in report.errors
    assert np.array_equal(model.get_flat_weights(), before)
    assert all(p.data.dtype == np.float32 for p in model.parameters())


def test_classifier_gradcheck():
    model = build_classifier(widths=(2, 3), spp_levels=2, seed=1)
    report = gradcheck(model, _batch((2, 3, 8, 6), seed=2), tolerance=1e-3, max_entries=16)
    assert report.passed, report.errors


def test_gradcheck_report_table_lists_every_tensor():
    model = build_classifier(widths=(2,), spp_levels=1, out_classes=1, head="one-vs-all")
    report = gradcheck(model, _batch((1, 3, 4, 4)), max_entries=4)
    table = report.to_table()
    assert table.row_count == len(report.errors)
    assert report.failures() == []


def test_classifier_probabilities():
    multi = build_classifier(widths=(4, 8), spp_levels=2)
    assert multi.min_patch == 4
    probs = multi.predict_proba(_batch((3, 3, 9, 7)))
    assert probs.shape == (3, 4)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-5)

    ova = build_classifier(widths=(4,), spp_levels=1, out_classes=1, head="one-vs-all")
    single = ova.predict_proba(_batch((2, 3, 5, 5)))
    assert single.shape == (2, 1)
    assert np.all((single > 0) & (single < 1))


def test_classifier_rejects_inconsistent_heads():
    with pytest.raises(ValidationError):
        build_classifier(out_classes=4, head="one-vs-all")
    with pytest.raises(ValidationError):
        build_classifier(head="softmax")


def test_sequential_checks_channel_chain():
    with pytest.raises(ValidationError):
        Sequential([Conv2d(3, 4), Conv2d(5, 2)])


def test_descriptor_round_trip():
    line = format_descriptor("classifier", **{"in": 3}, widths=(4, 8), spp=2, out=1, head="one-vs-all")
    assert line == "classifier in=3 widths=4,8 spp=2 out=1 head=one-vs-all"
    kind, params = parse_descriptor(line)
    assert kind == "classifier"
    assert params["widths"] == (4, 8) and params["head"] == "one-vs-all"
    with pytest.raises(ValidationError):
        parse_descriptor("tnet depth")
    assert {"classifier", "tnet", "unet"} <= set(architectures.get_kinds())


def test_unknown_architecture_is_rejected():
    with pytest.raises(ValidationError):
        build_from_descriptor("resnet depth=50")


def test_bundle_round_trip(tmp_path: Path):
    model = build_tnet(TNetSpec(depth=2, base_channels=2, skip_convs=1), seed=4)
    save_model(tmp_path / "model.nnw", model)
    raw = (tmp_path / "model.nnw").read_bytes()
    assert raw.startswith(NNW_MAGIC + b"tnet depth=2 base=2 skip=1 in=3 out=1 weights=545\n")
    restored = load_network(tmp_path / "model.nnw")
    assert isinstance(restored, TNet)
    assert np.array_equal(restored.get_flat_weights(), model.get_flat_weights())
    x = Tensor(_batch((1, 3, 4, 4)))
    assert np.array_equal(restored(x).data, model(x).data)


def test_single_width_classifier_bundle(tmp_path: Path):
    model = build_classifier(widths=(4,), spp_levels=2, seed=2)
    save_model(tmp_path / "cls.nnw", model)
    bundle = load_model(tmp_path / "cls.nnw")
    assert bundle.kind == "classifier"
    restored = bundle.to_network()
    assert np.array_equal(restored.get_flat_weights(), model.get_flat_weights())


def test_bundle_decode_errors():
    good = encode_bundle(bundle_of(build_classifier(widths=(2,), spp_levels=1)))
    with pytest.raises(FormatError) as bad_magic:
        decode_bundle(b"NNW2\n" + good[5:])
    assert bad_magic.value.offset == 0
    with pytest.raises(PayloadLengthError):
        decode_bundle(good[:-4])
    with pytest.raises(FormatError):
        decode_bundle(NNW_MAGIC + b"tnet depth=2\n")


def test_bundle_weight_count_must_match_architecture():
    bundle = ModelBundle("tnet depth=2 base=2 skip=1 in=3 out=1", np.zeros(10, dtype=np.float32))
    with pytest.raises(ValidationError):
        bundle.to_network()


def test_missing_model_file(tmp_path: Path):
    with pytest.raises(FileNotFoundError):
        load_model(tmp_path / "missing.nnw")
