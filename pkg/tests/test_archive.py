"""Weight-archive format: byte layout, validation, and transfer loading."""

import struct

import numpy as np
import pytest

import lesionbench as lb
from lesionbench.archive import MAGIC, ArchiveEntry
from lesionbench.errors import FormatError, SpecError
from tests.conftest import tiny_fusion_spec


def test_byte_layout_matches_hand_assembly():
    a = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    b = np.array([5.0], dtype=np.float32)
    arch = lb.WeightArchive.from_arrays([("layer.weight", a), ("layer.bias", b)])
    got = arch.to_bytes()

    expected = bytearray()
    expected += b"LSNBW001"
    expected += struct.pack("<I", 2)
    name = b"layer.weight"
    expected += struct.pack("<H", len(name)) + name + struct.pack("<B", 2)
    expected += struct.pack("<II", 2, 2) + struct.pack("<Q", 0)
    name = b"layer.bias"
    expected += struct.pack("<H", len(name)) + name + struct.pack("<B", 1)
    expected += struct.pack("<I", 1) + struct.pack("<Q", 16)
    payload = a.tobytes() + b.tobytes()
    expected += struct.pack("<Q", len(payload)) + payload
    assert got == bytes(expected)


def test_round_trip_preserves_values_and_order(tmp_path):
    rng = np.random.default_rng(0)
    arrays = [("conv1.weight", rng.standard_normal((2, 3, 3, 3)).astype(np.float32)),
              ("conv1.bias", rng.standard_normal(2).astype(np.float32)),
              ("head.weight", rng.standard_normal((1, 6)).astype(np.float32))]
    arch = lb.WeightArchive.from_arrays(arrays)
    path = tmp_path / "w.lsnbw"
    arch.save(path)
    loaded = lb.WeightArchive.load(path)
    assert loaded.names() == [n for n, _ in arrays]
    for name, arr in arrays:
        assert np.array_equal(loaded.tensor(name), arr)
        assert loaded.tensor(name).dtype == np.float32


def test_save_rounds_float64_to_nearest_float32(tmp_path):
    model = lb.build(tiny_fusion_spec(), seed=1)
    path = tmp_path / "m.lsnbw"
    lb.save(model, path)
    arch = lb.WeightArchive.load(path)
    for name, tensor in model.parameters():
        assert np.array_equal(arch.tensor(name), tensor.data.astype(np.float32))


def test_bad_magic_rejected():
    with pytest.raises(FormatError) as err:
        lb.WeightArchive.from_bytes(b"NOTMAGIC" + b"\x00" * 16)
    assert "magic" in str(err.value)


def test_truncated_payload_rejected(tmp_path):
    arch = lb.WeightArchive.from_arrays([("w", np.ones((4, 4), dtype=np.float32))])
    raw = arch.to_bytes()
    with pytest.raises(FormatError) as err:
        lb.WeightArchive.from_bytes(raw[:-8])
    assert "truncated" in str(err.value)


def test_truncated_manifest_rejected():
    arch = lb.WeightArchive.from_arrays([("w", np.ones(3, dtype=np.float32))])
    raw = arch.to_bytes()
    with pytest.raises(FormatError):
        lb.WeightArchive.from_bytes(raw[:14])


def test_offsets_must_tile_payload_exactly():
    a = np.ones(2, dtype=np.float32)
    with pytest.raises(FormatError):
        # gap: second entry starts at 12, first ends at 8
        lb.WeightArchive([ArchiveEntry("x", (2,), 0), ArchiveEntry("y", (2,), 12)],
                         b"\x00" * 20)
    with pytest.raises(FormatError):
        # overlap
        lb.WeightArchive([ArchiveEntry("x", (2,), 0), ArchiveEntry("y", (2,), 4)],
                         b"\x00" * 12)
    with pytest.raises(FormatError):
        # payload longer than manifest total
        lb.WeightArchive([ArchiveEntry("x", (2,), 0)], b"\x00" * 12)
    del a


def test_duplicate_names_rejected():
    with pytest.raises(FormatError):
        lb.WeightArchive([ArchiveEntry("x", (1,), 0), ArchiveEntry("x", (1,), 4)],
                         b"\x00" * 8)


def test_manifest_order_does_not_matter():
    a = np.arange(4, dtype=np.float32)
    b = np.arange(4, 10, dtype=np.float32)
    arch = lb.WeightArchive.from_arrays([("first", a), ("second", b)])
    raw = arch.to_bytes()
    # rebuild the file with manifest entries swapped but offsets unchanged
    reordered = lb.WeightArchive(entries=[arch.entries[1], arch.entries[0]],
                                 payload=arch.payload)
    swapped = lb.WeightArchive.from_bytes(reordered.to_bytes())
    original = lb.WeightArchive.from_bytes(raw)
    assert np.array_equal(swapped.tensor("first"), original.tensor("first"))
    assert np.array_equal(swapped.tensor("second"), original.tensor("second"))


def test_load_model_restores_forward_behavior(tmp_path):
    spec = tiny_fusion_spec()
    model = lb.build(spec, seed=7)
    path = tmp_path / "m.lsnbw"
    lb.save(model, path)
    restored = lb.load_model(lb.WeightArchive.load(path), spec)
    rng = np.random.default_rng(5)
    img = rng.random((3, 8, 8))
    st = np.array([0.2, 1.0, 0.6])
    out_orig = lb.forward(model, img, st)
    out_rest = lb.forward(restored, img, st)
    # restored weights are the float32 rounding of the originals
    assert abs(float(out_orig.data[0]) - float(out_rest.data[0])) < 1e-5


def test_load_model_missing_layers_lists_all():
    spec = tiny_fusion_spec()
    arch = lb.WeightArchive.from_arrays(
        [("conv1.weight", np.zeros((2, 3, 3, 3), dtype=np.float32)),
         ("conv1.bias", np.zeros(2, dtype=np.float32))])
    with pytest.raises(SpecError) as err:
        lb.load_model(arch, spec)
    msg = str(err.value)
    for missing in ("fc_img.weight", "fc_img.bias", "fc_static.weight",
                    "fc_static.bias", "head.weight", "head.bias"):
        assert missing in msg


def test_shape_mismatch_names_layer_and_shapes(tmp_path):
    spec = tiny_fusion_spec()
    model = lb.build(spec, seed=3)
    wrong = [(n, t.data.astype(np.float32)) for n, t in model.parameters()]
    wrong[0] = ("conv1.weight", np.zeros((2, 3, 5, 5), dtype=np.float32))
    arch = lb.WeightArchive.from_arrays(wrong)
    with pytest.raises(SpecError) as err:
        lb.load_model(arch, spec)
    msg = str(err.value)
    assert "conv1.weight" in msg and "(2, 3, 5, 5)" in msg and "(2, 3, 3, 3)" in msg


def test_load_with_new_head_replaces_only_head(tmp_path):
    spec = tiny_fusion_spec()
    source = lb.build(spec, seed=11)
    path = tmp_path / "src.lsnbw"
    arch = lb.save(source, path)
    target = lb.load_with_new_head(arch, spec, seed=99)
    assert np.array_equal(target.params["conv1"]["weight"].data,
                          arch.tensor("conv1.weight").astype(np.float64))
    assert not np.array_equal(target.params["head"]["weight"].data,
                              arch.tensor("head.weight").astype(np.float64))
    assert np.array_equal(target.params["head"]["bias"].data, np.zeros(1))
    # head init is deterministic per seed
    again = lb.load_with_new_head(arch, spec, seed=99)
    assert np.array_equal(target.params["head"]["weight"].data,
                          again.params["head"]["weight"].data)


def test_load_with_new_head_tolerates_missing_head_entry():
    spec = tiny_fusion_spec()
    model = lb.build(spec, seed=2)
    trunk_only = [(n, t.data.astype(np.float32)) for n, t in model.parameters()
                  if not n.startswith("head.")]
    arch = lb.WeightArchive.from_arrays(trunk_only)
    loaded = lb.load_with_new_head(arch, spec, seed=5)
    assert loaded.params["head"]["weight"].data.shape == (1, 6)


def test_load_with_new_head_freeze_list(tmp_path):
    spec = tiny_fusion_spec()
    arch = lb.WeightArchive.from_model(lb.build(spec, seed=1))
    model = lb.load_with_new_head(arch, spec, seed=2, freeze=("conv1",))
    assert not model.params["conv1"]["weight"].requires_grad
    assert not model.params["conv1"]["bias"].requires_grad
    assert model.params["fc_img"]["weight"].requires_grad
    assert model.params["head"]["weight"].requires_grad
    with pytest.raises(SpecError):
        lb.load_with_new_head(arch, spec, seed=2, freeze=("nope",))


def test_restore_into_overwrites_in_place():
    spec = tiny_fusion_spec()
    m1 = lb.build(spec, seed=1)
    m2 = lb.build(spec, seed=2)
    arch = lb.WeightArchive.from_model(m1)
    tensors_before = [t for _, t in m2.parameters()]
    lb.restore_into(m2, arch)
    tensors_after = [t for _, t in m2.parameters()]
    assert all(a is b for a, b in zip(tensors_before, tensors_after))
    for name, t in m2.parameters():
        assert np.array_equal(t.data, arch.tensor(name).astype(np.float64))


def test_save_is_deterministic(tmp_path):
    spec = tiny_fusion_spec()
    model = lb.build(spec, seed=21)
    p1 = tmp_path / "a.lsnbw"
    p2 = tmp_path / "b.lsnbw"
    lb.save(model, p1)
    lb.save(model, p2)
    assert p1.read_bytes() == p2.read_bytes()
