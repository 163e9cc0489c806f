import dataclasses
from dataclasses import replace

import numpy as np
import pytest

from camcodec.coder import DecodeError
from camcodec.entropy import RDPoint
from camcodec.numerics import ConfigurationError, NumericError, Tensor
from camcodec.pipeline import checkpoint, training
from camcodec.pipeline.analysis import (
    CamStack,
    ConvStack,
    cluster_masks,
    conv_receptive_radius,
    erf_gradient,
    erf_map,
    erf_to_8bit,
    mean_erf,
    outside_radius_mass,
    stage_blocks,
)
from camcodec.pipeline.bitstream import CodedFile, FormatError
from camcodec.pipeline.checkpoint import CheckpointError
from camcodec.pipeline.cli import main
from camcodec.pipeline.codec import decode_bytes, decode_image, encode_array, encode_image, latent_shapes, rd_forward
from camcodec.pipeline.evaluate import (
    PSNR_CAP,
    EvaluationError,
    bd_rate,
    evaluate_images,
    psnr_from_mse,
    read_rd_points,
    write_rd_csv,
)
from camcodec.pipeline.imageio import InputError, pad_to_multiple, read_pgm, read_ppm, write_ppm
from camcodec.pipeline.synthetic import synthetic_dataset, synthetic_image, write_dataset
from camcodec.transforms import TINY, CompressionModel

from oracles import bd_rate_reference

# high-precision 10 * log10(255^2)
PSNR_MSE1_REF = 48.1308036086791034


@pytest.fixture(scope="module")
def tiny():
    return CompressionModel(TINY, seed=0)


@pytest.fixture(scope="module")
def images():
    return synthetic_dataset(3, 48, seed=5)


def curve(rates, psnrs):
    return [RDPoint(bpp=r, psnr_db=p, rate_bits=0.0, distortion=0.0) for r, p in zip(rates, psnrs)]


class TestImageIO:
    def test_ppm_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(5, 7, 3)) / 255.0
        write_ppm(tmp_path / "a.ppm", img)
        np.testing.assert_allclose(read_ppm(tmp_path / "a.ppm"), img, atol=1e-12)

    def test_rejects_non_ppm(self, tmp_path):
        (tmp_path / "bad.ppm").write_bytes(b"not an image")
        with pytest.raises(InputError):
            read_ppm(tmp_path / "bad.ppm")

    def test_padding(self, rng):
        img = rng.uniform(size=(17, 30, 3))
        padded = pad_to_multiple(img, 16)
        assert padded.shape == (32, 32, 3)
        np.testing.assert_array_equal(padded[:17, :30], img)
        assert pad_to_multiple(rng.uniform(size=(1, 1, 3)), 16).shape == (16, 16, 3)


class TestBitstream:
    def test_round_trip(self):
        f = CodedFile(height=50, width=37, config_id=1234, z_payload=b"\1\2", y_payload=b"xyz")
        data = f.to_bytes()
        assert data[:4] == b"CAMC"
        assert CodedFile.from_bytes(data) == f

    def test_corruption(self):
        data = CodedFile(8, 8, 1, b"ab", b"cd").to_bytes()
        for bad in (b"XAMC" + data[4:], data[:-1], data + b"\0", data[:10],
                    CodedFile(0, 8, 1, b"", b"").to_bytes(), data[:4] + b"\7" + data[5:]):
            with pytest.raises(FormatError):
                CodedFile.from_bytes(bad)


class TestCodec:
    def test_round_trip_bit_exact(self, tiny, rng):
        for h, w in [(32, 32), (50, 37), (16, 70)]:
            img = rng.uniform(size=(h, w, 3))
            enc = encode_array(img, tiny)
            x_hat = decode_bytes(enc.data, tiny)
            assert x_hat.shape == (h, w, 3)
            assert x_hat.tobytes() == enc.reconstruction.tobytes()

    def test_deterministic(self, tiny, images):
        assert encode_array(images[0], tiny).data == encode_array(images[0].copy(), tiny).data

    def test_stats_from_file_size(self, tiny, images):
        enc = encode_array(images[1], tiny)
        assert enc.stats.file_bytes == len(enc.data)
        assert enc.stats.bpp == 8 * len(enc.data) / (48 * 48)

    def test_config_mismatch(self, tiny, images):
        data = encode_array(images[0], tiny).data
        other = CompressionModel(replace(TINY, k_clusters=3), seed=0)
        with pytest.raises(FormatError):
            decode_bytes(data, other)

    def test_truncated_payload(self, tiny, images):
        f = CodedFile.from_bytes(encode_array(images[0], tiny).data)
        cut = dataclasses.replace(f, y_payload=f.y_payload[:-2]).to_bytes()
        with pytest.raises(DecodeError):
            decode_bytes(cut, tiny)

    def test_files(self, tiny, images, tmp_path):
        write_ppm(tmp_path / "in.ppm", images[2])
        enc = encode_image(tmp_path / "in.ppm", tiny, tmp_path / "x.camc")
        assert (tmp_path / "x.camc").stat().st_size == enc.stats.file_bytes
        x_hat = decode_image(tmp_path / "x.camc", tiny, tmp_path / "out.ppm")
        np.testing.assert_array_equal(read_ppm(tmp_path / "out.ppm"), np.rint(x_hat * 255) / 255)

    def test_latent_shapes(self, tiny):
        y, z = latent_shapes(50, 37, tiny)
        assert y == (1, 4, 3, 8) and z == (1, 1, 1, 8)

    def test_rd_forward_modes(self, tiny, images):
        x = images[:2, :32, :32]
        for mode in ("train", "eval", "smooth"):
            out = rd_forward(CompressionModel(TINY, seed=0), x, 0.01, np.random.default_rng(0), mode=mode)
            assert np.isfinite(out.loss.item()) and out.bpp.item() > 0
        with pytest.raises(ConfigurationError):
            rd_forward(tiny, x, 0.01, mode="test")


class TestCheckpoint:
    def test_byte_identical_round_trip(self, tiny, tmp_path):
        checkpoint.save(tiny, tmp_path / "m.ckpt")
        restored = checkpoint.load(tmp_path / "m.ckpt")
        assert checkpoint.to_bytes(restored) == (tmp_path / "m.ckpt").read_bytes()
        assert restored.config == tiny.config

    def test_restored_model_codes_identically(self, tiny, images):
        restored = checkpoint.from_bytes(checkpoint.to_bytes(tiny))
        assert encode_array(images[0], restored).data == encode_array(images[0], tiny).data

    def test_corrupt(self, tiny):
        data = checkpoint.to_bytes(tiny)
        for bad in (b"XXXX" + data[4:], data[:-3], data + b"\0"):
            with pytest.raises(CheckpointError):
                checkpoint.from_bytes(bad)


class TestTraining:
    def test_zero_steps_keeps_weights(self, images, tmp_path):
        model = CompressionModel(TINY, seed=3)
        before = checkpoint.to_bytes(model)
        result = training.train(model, list(images), 0, 0.01, checkpoint_path=tmp_path / "m.ckpt",
                                log_path=tmp_path / "log.csv", crop=32)
        assert result.log == [] and not result.aborted
        assert (tmp_path / "m.ckpt").read_bytes() == before
        assert (tmp_path / "log.csv").read_text().strip() == "step,bpp,mse,loss"

    def test_seeded_runs_identical(self, images):
        runs = []
        for _ in range(2):
            model = CompressionModel(TINY, seed=1)
            res = training.train(model, list(images), 3, 0.01, seed=7, batch_size=2, crop=32)
            runs.append((checkpoint.to_bytes(model), res.log))
        assert runs[0] == runs[1]
        assert len(runs[0][1]) == 3

    def test_updates_weights_and_centers(self, images):
        model = CompressionModel(TINY, seed=1)
        before = checkpoint.to_bytes(model)
        training.train(model, list(images), 2, 0.01, crop=32, batch_size=1)
        assert checkpoint.to_bytes(model) != before

    def test_divergence_rolls_back(self, images, tmp_path, monkeypatch):
        model = CompressionModel(TINY, seed=1)
        real = training.rd_forward
        calls = []

        def flaky(*args, **kwargs):
            calls.append(1)
            if len(calls) == 3:
                raise NumericError("state overflow")
            return real(*args, **kwargs)

        monkeypatch.setattr(training, "rd_forward", flaky)
        snapshots = []
        res = training.train(model, list(images), 5, 0.01, crop=32, batch_size=1,
                             checkpoint_path=tmp_path / "m.ckpt",
                             progress=lambda s, l: snapshots.append(checkpoint.to_bytes(model)))
        assert res.aborted and "step 3" in res.message
        assert len(res.log) == 2
        assert (tmp_path / "m.ckpt").read_bytes() == snapshots[-1]

    def test_rejects_small_images(self):
        with pytest.raises(InputError):
            training.train(CompressionModel(TINY), [np.zeros((20, 20, 3))], 1, 0.01, crop=32)


class TestMetrics:
    def test_psnr(self):
        assert psnr_from_mse(0.0) == PSNR_CAP == 99.0
        assert psnr_from_mse(1.0) == pytest.approx(PSNR_MSE1_REF, abs=1e-12)
        assert abs(psnr_from_mse(1.0) - 48.13) < 0.01

    def test_evaluate_uses_file_bytes(self, tiny, images, tmp_path):
        summary = evaluate_images(list(images), tiny)
        for r, img in zip(summary.images, images):
            assert r.file_bytes == len(encode_array(img, tiny).data)
        write_rd_csv(tmp_path / "rd.csv", summary)
        points = read_rd_points(tmp_path / "rd.csv")
        assert len(points) == 3
        assert points[0].bpp == pytest.approx(summary.images[0].bpp, abs=1e-6)

    def test_bd_identical(self):
        a = curve([0.2, 0.4, 0.7, 1.1], [28.0, 31.0, 33.5, 36.0])
        assert abs(bd_rate(a, a)) < 1e-12

    def test_bd_rate_shift(self):
        rates, psnrs = [0.15, 0.3, 0.55, 0.9, 1.4], [27.1, 30.2, 32.9, 35.4, 37.8]
        a = curve(rates, psnrs)
        b = curve([r * 0.9 for r in rates], psnrs)
        assert bd_rate(a, b) == pytest.approx(-10.0, abs=1e-9)

    def test_bd_matches_reference(self, rng):
        for _ in range(20):
            pa = np.sort(rng.uniform(25, 40, size=6))
            pb = np.sort(rng.uniform(26, 41, size=5))
            ra = np.exp(np.sort(rng.uniform(-2, 1, size=6)))
            rb = np.exp(np.sort(rng.uniform(-2, 1, size=5)))
            ours = bd_rate(curve(ra, pa), curve(rb, pb))
            assert ours == pytest.approx(bd_rate_reference(ra, pa, rb, pb), rel=1e-6, abs=1e-6)

    def test_bd_errors(self):
        a = curve([0.2, 0.4, 0.7, 1.1], [28.0, 31.0, 33.5, 36.0])
        with pytest.raises(EvaluationError):
            bd_rate(a, curve([0.2, 0.4, 0.7], [28.0, 31.0, 33.5]))
        with pytest.raises(EvaluationError):
            bd_rate(a, curve([0.2, 0.4, 0.7, 1.1], [40.0, 41.0, 42.0, 43.0]))


class TestErf:
    def test_single_conv_support(self, rng):
        stack = ConvStack(1, 4, rng)
        img = rng.uniform(size=(9, 9, 3))
        mag = erf_gradient(stack, img)
        assert stack.radius == 1
        assert mag[3:6, 3:6].min() > 0
        assert outside_radius_mass(mag, 1) == 0.0

    def test_conv_stack_bound(self, rng):
        stack = ConvStack(3, 4, rng)
        mag = mean_erf(stack, [rng.uniform(size=(17, 17, 3)) for _ in range(3)])
        assert stack.radius == 3
        assert outside_radius_mass(mag, 3) == 0.0
        assert outside_radius_mass(mag, 2) > 0.0

    def test_radius_with_strides(self):
        assert conv_receptive_radius([3, 3]) == 2
        assert conv_receptive_radius([5, 3], [2, 1]) == 4

    def test_cam_stack_is_global(self, rng):
        stack = CamStack(1, 4, rng, d_state=4, k=2)
        mag = erf_gradient(stack, rng.uniform(size=(9, 9, 3)))
        assert outside_radius_mass(mag, 2) > 0.0

    def test_erf_map_file(self, tiny, images, tmp_path):
        gray = erf_map(tiny, images[0][:40, :40], tmp_path / "erf.pgm")
        assert gray.shape == (40, 40) and gray.dtype == np.uint8
        np.testing.assert_array_equal(read_pgm(tmp_path / "erf.pgm"), gray)

    def test_8bit_clip(self):
        np.testing.assert_array_equal(erf_to_8bit(np.array([0.0, 0.1, 0.2, 5.0])), [0, 128, 255, 255])


class TestMasks:
    def test_partition(self, tiny, images, tmp_path):
        for stage in (3, 4, 5):
            masks = cluster_masks(tiny, images[0], stage, out_dir=tmp_path)
            assert masks.shape[0] == TINY.k_clusters
            assert ((masks == 255).sum(axis=0) == 1).all()
        assert (tmp_path / "stage3_cluster01.pgm").exists()

    def test_single_cluster_full(self, images):
        model = CompressionModel(replace(TINY, k_clusters=1), seed=0)
        masks = cluster_masks(model, images[0], 3)
        assert masks.shape == (1, 6, 6) and (masks == 255).all()

    def test_stage_without_cam(self, tiny):
        with pytest.raises(ConfigurationError):
            stage_blocks(tiny, 1)
        with pytest.raises(ConfigurationError):
            stage_blocks(tiny, 9)


class TestCli:
    def test_workflow(self, tmp_path, capsys):
        data = tmp_path / "data"
        assert main(["synth", "--count", "3", "--size", "64", "--out", str(data)]) == 0
        run = tmp_path / "run"
        assert main(["train", str(data), "--config", "tiny", "--steps", "2", "--batch", "1", "--out", str(run)]) == 0
        for name in ("model.ckpt", "loss.csv", "loss.png"):
            assert (run / name).exists()
        ckpt = ["--checkpoint", str(run / "model.ckpt")]
        img = sorted(data.glob("*.ppm"))[0]
        assert main(["encode", str(img), *ckpt, "--out", str(tmp_path / "a.camc")]) == 0
        assert main(["decode", str(tmp_path / "a.camc"), *ckpt, "--out", str(tmp_path / "a.ppm")]) == 0
        assert read_ppm(tmp_path / "a.ppm").shape == (64, 64, 3)
        assert main(["eval", str(data), *ckpt, "--out", str(tmp_path / "ev")]) == 0
        assert (tmp_path / "ev" / "rd.csv").exists() and (tmp_path / "ev" / "rd.png").exists()
        assert main(["erf", str(img), *ckpt, "--out", str(tmp_path / "erf.pgm")]) == 0
        assert (tmp_path / "erf.png").exists()
        assert main(["masks", str(img), *ckpt, "--out", str(tmp_path / "masks")]) == 0
        assert len(list((tmp_path / "masks").glob("*.pgm"))) == TINY.k_clusters

    def test_bdrate(self, tmp_path, capsys):
        for name, scale in (("a.csv", 1.0), ("b.csv", 0.9)):
            rows = ["image,pixels,bytes,bpp,psnr_db"]
            for i, (r, p) in enumerate(zip([0.2, 0.4, 0.7, 1.1], [28.0, 31.0, 33.5, 36.0])):
                rows.append(f"i{i},1,1,{r * scale},{p}")
            (tmp_path / name).write_text("\n".join(rows) + "\n")
        assert main(["bdrate", str(tmp_path / "a.csv"), str(tmp_path / "b.csv"), "--out", str(tmp_path / "bd.png")]) == 0
        assert "-10.00%" in capsys.readouterr().out
        assert (tmp_path / "bd.png").exists()

    def test_selftest(self, capsys):
        assert main(["selftest"]) == 0
        assert "FAILED" not in capsys.readouterr().out

    def test_expected_errors_exit_2(self, tmp_path, capsys):
        assert main(["encode", str(tmp_path / "missing.ppm"), "--config", "tiny"]) == 2
        (tmp_path / "junk.camc").write_bytes(b"junk")
        assert main(["decode", str(tmp_path / "junk.camc"), "--config", "tiny"]) == 2
        assert "error:" in capsys.readouterr().err

    def test_synthetic_images_in_range(self, rng, tmp_path):
        img = synthetic_image(rng, 64)
        assert img.shape == (64, 64, 3) and img.min() >= 0 and img.max() <= 1
        paths = write_dataset(tmp_path, 2, 32, seed=1)
        np.testing.assert_allclose(read_ppm(paths[0]), synthetic_dataset(2, 32, 1)[0], atol=0.5 / 255 + 1e-12)
