import struct
import zlib

import numpy as np
import pytest

from core.datamodel import TTConvKernel
from core.errors import CorruptionError, ModelFileError, TTIntegrityError, UnsupportedVersionError
from core.integration import compress_network, synthetic_weights
from core.manifest import manifest_from_dict, manifest_to_dict, parse_manifest
from core.serialization import (index_path, load_model, load_weights, model_bytes, save_model,
                                save_weights)
from core.tt_conv import reconstruct_kernel, to_storage_precision

HEADER_SIZE, ENTRY_SIZE = 12, 24


def saved(tmp_path, small_manifest, rank=2, seed=0, name="model.ttcv"):
    kernels, _ = compress_network(small_manifest, rank=rank, seed=seed)
    path = str(tmp_path / name)
    save_model(kernels, small_manifest, path)
    return path, kernels


def rewrite_crc(data, section):
    """Trägt die CRC einer veränderten Sektion neu in die Tabelle ein."""
    entry = HEADER_SIZE + section * ENTRY_SIZE
    kind, reserved, offset, length, _ = struct.unpack_from("<HHQQI", data, entry)
    struct.pack_into("<HHQQI", data, entry, kind, reserved, offset, length,
                     zlib.crc32(bytes(data[offset:offset + length])))


def random_manifest(rng, idx):
    """Kleines Zufallsnetz: Layerzahl, k, Kanäle, Bias, Auswahl und Ordnung variieren."""
    layers = []
    for j in range(int(rng.integers(1, 5))):
        k = int(rng.choice([1, 3]))
        layers.append({
            'id': f"n{idx}.l{j}",
            'k': k,
            'in_channels': int(rng.integers(1, 13)),
            'out_channels': int(rng.integers(1, 13)),
            'bias': bool(rng.integers(2)),
            'selected': bool(rng.integers(4)),
            'input_size': [k + int(rng.integers(0, 4)), k + int(rng.integers(0, 4))],
        })
    return manifest_from_dict({'schema': 'ttconv-manifest/1', 'name': f"zufall-{idx}",
                               'defaults': {'order': int(rng.integers(1, 4))}, 'layers': layers})


class TestModelRoundtrip:

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("rank", [1, 2, 3, 64])
    def test_save_load_save_bit_exact(self, tmp_path, small_manifest, seed, rank):
        path, _ = saved(tmp_path, small_manifest, rank, seed)
        with open(path, 'rb') as f:
            original = f.read()
        kernels, manifest = load_model(path)
        assert model_bytes(kernels, manifest) == original

    def test_randomized_models_bit_exact(self, tmp_path):
        rng = np.random.default_rng(2024)
        path = str(tmp_path / "zufall.ttcv")
        n_padded = 0
        for idx in range(60):
            manifest = random_manifest(rng, idx)
            n_padded += sum(1 for l in manifest.layers if l.spec.in_plan.pad_count or l.spec.out_plan.pad_count)
            if idx % 10 == 0:
                kernels, _ = compress_network(manifest, tolerance=0.3, seed=idx)
            else:
                kernels, _ = compress_network(manifest, rank=int(rng.integers(1, 7)), seed=idx)
            save_model(kernels, manifest, path)
            with open(path, 'rb') as f:
                first = f.read()
            loaded, echoed = load_model(path)
            assert model_bytes(loaded, echoed) == first, manifest.name
        assert n_padded > 0

    def test_loaded_kernels_match(self, tmp_path, small_manifest):
        path, kernels = saved(tmp_path, small_manifest, rank=3)
        loaded, manifest = load_model(path)
        assert list(loaded) == ['l0', 'l1', 'l2']
        assert manifest_to_dict(manifest) == manifest_to_dict(small_manifest)
        for lid, kernel in kernels.items():
            other = loaded[lid]
            assert type(other) is type(kernel)
            if isinstance(kernel, TTConvKernel):
                kernel = to_storage_precision(kernel)
                assert other.ranks == kernel.ranks
                assert other.dummy_bound == kernel.dummy_bound
                assert np.array_equal(other.core0, kernel.core0)
                assert all(np.array_equal(a, b) for a, b in zip(other.channel_cores, kernel.channel_cores))
            else:
                assert np.array_equal(other.weights, kernel.weights)
        assert np.array_equal(loaded['l0'].bias, kernels['l0'].bias)

    def test_tolerance_model(self, tmp_path, small_manifest):
        kernels, _ = compress_network(small_manifest, tolerance=0.3, seed=4)
        path = str(tmp_path / "tol.ttcv")
        save_model(kernels, small_manifest, path)
        loaded, manifest = load_model(path)
        assert model_bytes(loaded, manifest) == model_bytes(kernels, small_manifest)

    def test_fixture_manifest(self, tmp_path, fixture_manifest):
        kernels, _ = compress_network(fixture_manifest, rank=2)
        path = str(tmp_path / "yolo.ttcv")
        save_model(kernels, fixture_manifest, path)
        loaded, manifest = load_model(path)
        assert len(loaded) == 9
        assert model_bytes(loaded, manifest) == model_bytes(kernels, fixture_manifest)

    def test_empty_model(self, tmp_path):
        manifest = parse_manifest("schema: ttconv-manifest/1\nname: leer\nlayers: []\n")
        path = str(tmp_path / "leer.ttcv")
        save_model({}, manifest, path)
        kernels, loaded = load_model(path)
        assert kernels == {}
        assert len(loaded) == 0

    def test_deterministic_bytes(self, small_manifest):
        a, _ = compress_network(small_manifest, rank=2, seed=5)
        b, _ = compress_network(small_manifest, rank=2, seed=5)
        assert model_bytes(a, small_manifest) == model_bytes(b, small_manifest)

    def test_selected_layer_must_be_tt(self, small_manifest):
        weights = synthetic_weights(small_manifest)
        with pytest.raises(ModelFileError):
            model_bytes(weights, small_manifest)

    def test_missing_kernel(self, small_manifest):
        kernels, _ = compress_network(small_manifest, rank=2)
        del kernels['l1']
        with pytest.raises(ModelFileError):
            model_bytes(kernels, small_manifest)


class TestCorruption:

    def test_every_truncation_detected(self, tmp_path, small_manifest):
        path, _ = saved(tmp_path, small_manifest)
        with open(path, 'rb') as f:
            data = f.read()
        cut_path = tmp_path / "cut.ttcv"
        for cut in sorted({0, 5, HEADER_SIZE, HEADER_SIZE + 10, len(data) // 2, len(data) - 1}):
            cut_path.write_bytes(data[:cut])
            with pytest.raises(CorruptionError):
                load_model(str(cut_path))

    def test_crc_flip_names_section(self, tmp_path, small_manifest):
        path, _ = saved(tmp_path, small_manifest)
        with open(path, 'rb') as f:
            data = bytearray(f.read())
        data[-1] ^= 0x01
        with open(path, 'wb') as f:
            f.write(data)
        with pytest.raises(CorruptionError) as info:
            load_model(path)
        assert info.value.section == "TT #3"
        assert "CRC" in str(info.value)

    def test_bad_magic(self, tmp_path, small_manifest):
        path, _ = saved(tmp_path, small_manifest)
        with open(path, 'r+b') as f:
            f.write(b"XXXX")
        with pytest.raises(CorruptionError):
            load_model(path)

    def test_unsupported_version(self, tmp_path, small_manifest):
        path, _ = saved(tmp_path, small_manifest)
        with open(path, 'r+b') as f:
            f.seek(4)
            f.write(struct.pack("<H", 2))
        with pytest.raises(UnsupportedVersionError) as info:
            load_model(path)
        assert info.value.version == 2

    def test_swapped_layer_index(self, tmp_path, small_manifest):
        path, _ = saved(tmp_path, small_manifest)
        with open(path, 'rb') as f:
            data = bytearray(f.read())
        _, _, offset, _, _ = struct.unpack_from("<HHQQI", data, HEADER_SIZE + 2 * ENTRY_SIZE)
        struct.pack_into("<I", data, offset, 7)
        rewrite_crc(data, 2)
        with open(path, 'wb') as f:
            f.write(data)
        with pytest.raises(CorruptionError) as info:
            load_model(path)
        assert info.value.section == "DENSE #2"

    def test_broken_rank_chain(self, tmp_path, small_manifest):
        path, _ = saved(tmp_path, small_manifest)
        with open(path, 'rb') as f:
            data = bytearray(f.read())
        _, _, offset, _, _ = struct.unpack_from("<HHQQI", data, HEADER_SIZE + 1 * ENTRY_SIZE)
        # erster Kern: ndim u8, dann dims (1, 9, r1) → r1 verfälschen
        dims_at = offset + 16 + 1
        struct.pack_into("<I", data, dims_at + 8, 5)
        rewrite_crc(data, 1)
        with open(path, 'wb') as f:
            f.write(data)
        with pytest.raises(CorruptionError):
            load_model(path)

    def test_dummy_mass_rejected_on_save(self, tmp_path, small_manifest):
        l0 = small_manifest.get('l0')
        spec = l0.spec
        # Einsen überall → Dummy-Ausgabekanal rekonstruiert zu 1
        ttk = TTConvKernel(spec, np.ones((1, 9, 1)),
                           [np.ones((1, c, d, 1)) for c, d in zip(spec.in_plan.factors, spec.out_plan.factors)],
                           np.zeros(spec.out_channels), dummy_bound=1e-12)
        kernels, _ = compress_network(small_manifest, rank=2)
        kernels['l0'] = ttk
        path = tmp_path / "dummy.ttcv"
        with pytest.raises(TTIntegrityError):
            save_model(kernels, small_manifest, str(path))
        assert not path.exists()

    def test_tightened_dummy_bound_fails_integrity(self, tmp_path, small_manifest):
        path, _ = saved(tmp_path, small_manifest, rank=2)
        loaded, _ = load_model(path)
        assert loaded['l0'].dummy_bound > 1e-12
        with open(path, 'rb') as f:
            data = bytearray(f.read())
        _, _, offset, _, _ = struct.unpack_from("<HHQQI", data, HEADER_SIZE + 1 * ENTRY_SIZE)
        struct.pack_into("<d", data, offset + 8, 1e-12)
        rewrite_crc(data, 1)
        with open(path, 'wb') as f:
            f.write(data)
        loaded, _ = load_model(path)
        with pytest.raises(TTIntegrityError):
            reconstruct_kernel(loaded['l0'])

    def test_failed_write_leaves_no_file(self, tmp_path, small_manifest):
        kernels, _ = compress_network(small_manifest, rank=2)
        target = tmp_path / "fehlt" / "model.ttcv"
        with pytest.raises(OSError):
            save_model(kernels, small_manifest, str(target))
        assert not target.exists()
        assert not (tmp_path / "fehlt").exists()


class TestWeightsFile:

    def test_roundtrip(self, tmp_path, small_manifest):
        weights = synthetic_weights(small_manifest, 3)
        path = str(tmp_path / "w.bin")
        save_weights(weights, path)
        raw = load_weights(path)
        assert list(raw) == ['l0', 'l1', 'l2']
        for lid, kernel in weights.items():
            w, bias = raw[lid]
            assert np.array_equal(w, kernel.weights)
            if kernel.bias is None:
                assert bias is None
            else:
                assert np.array_equal(bias, kernel.bias)

    def test_loaded_weights_compress_like_synthetic(self, tmp_path, small_manifest):
        path = str(tmp_path / "w.bin")
        save_weights(synthetic_weights(small_manifest, 6), path)
        from_file, _ = compress_network(small_manifest, load_weights(path), rank=2)
        synthetic, _ = compress_network(small_manifest, rank=2, seed=6)
        assert model_bytes(from_file, small_manifest) == model_bytes(synthetic, small_manifest)

    def test_missing_index(self, tmp_path, small_manifest):
        path = tmp_path / "w.bin"
        path.write_bytes(b"\x00" * 8)
        with pytest.raises(FileNotFoundError):
            load_weights(str(path))

    def test_size_mismatch(self, tmp_path, small_manifest):
        path = str(tmp_path / "w.bin")
        save_weights(synthetic_weights(small_manifest), path)
        with open(path, 'ab') as f:
            f.write(b"\x00" * 4)
        with pytest.raises(CorruptionError):
            load_weights(path)

    def test_odd_length(self, tmp_path, small_manifest):
        path = str(tmp_path / "w.bin")
        save_weights(synthetic_weights(small_manifest), path)
        with open(path, 'ab') as f:
            f.write(b"\x00")
        with pytest.raises(CorruptionError):
            load_weights(path)

    def test_index_is_yaml(self, tmp_path, small_manifest):
        path = str(tmp_path / "w.bin")
        save_weights(synthetic_weights(small_manifest), path)
        with open(index_path(path), encoding='utf-8') as f:
            text = f.read()
        assert "ttconv-weights/1" in text
        assert "bias_offset" in text
