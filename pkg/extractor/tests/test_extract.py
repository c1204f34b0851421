import os
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from actextract.extract import ExtractJob, run_extract


class StubModel:
    """Deterministic stand-in for the CNN: features derived from pixel
    statistics, no weights needed."""

    name = "stub"
    layer = "toy_pool"
    dim = 6
    class_names = ["Wine Bottle", "goblet", "plate", "restaurant", "beer glass"]

    def _channel_means(self, images):
        rows = []
        for img in images:
            arr = np.asarray(img, dtype=np.float64)
            rows.append(arr.reshape(-1, 3).mean(axis=0))
        return np.vstack(rows)  # (N, 3)

    def activations(self, images):
        means = self._channel_means(images)
        # 6 units; subtracting 120 pushes some units to or below zero
        return np.hstack([means, means[:, ::-1]]) - 120.0

    def class_scores(self, images):
        means = self._channel_means(images)
        mix = np.array([
            [1.0, 0.1, -0.2, 0.4, 0.0],
            [-0.3, 0.8, 0.1, 0.0, 0.5],
            [0.2, -0.1, 0.9, 0.3, -0.4],
        ])
        return means @ mix


def put_image(directory, name, color):
    img = Image.new("RGB", (32, 32), color)
    img.save(directory / name)


@pytest.fixture
def image_dir(tmp_path):
    d = tmp_path / "imgs"
    d.mkdir()
    put_image(d, "c_red.png", (200, 10, 10))
    put_image(d, "a_blue.png", (10, 10, 200))
    put_image(d, "b_green.png", (10, 200, 10))
    return d


@pytest.fixture
def gold_csv(tmp_path):
    path = tmp_path / "gold.csv"
    path.write_text("a_blue.png,drink\nc_red.png,food\n")
    return str(path)


class TestLabelsMode:
    def test_format_order_and_gold(self, tmp_path, image_dir, gold_csv):
        out = tmp_path / "out.lab"
        result = run_extract(
            ExtractJob(str(image_dir), "labels", str(out), k=2, labels_csv=gold_csv),
            StubModel())
        assert result.n_images == 3 and result.n_skipped == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "#labfile v1 source=stub"
        ids = [line.split("\t")[0] for line in lines[1:]]
        assert ids == ["a_blue.png", "b_green.png", "c_red.png"]  # sorted order
        golds = [line.split("\t")[1] for line in lines[1:]]
        assert golds == ["drink", "-", "food"]
        for line in lines[1:]:
            surfaces = line.split("\t")[2].split("|")
            assert len(surfaces) == 2
            assert all(s == s.lower() for s in surfaces)  # lowercased names

    def test_k_clamped_and_unique(self, tmp_path, image_dir):
        out = tmp_path / "out.lab"
        run_extract(ExtractJob(str(image_dir), "labels", str(out), k=99), StubModel())
        for line in out.read_text().splitlines()[1:]:
            surfaces = line.split("\t")[2].split("|")
            assert len(surfaces) == len(StubModel.class_names)
            assert len(set(surfaces)) == len(surfaces)

    def test_deterministic(self, tmp_path, image_dir):
        out1, out2 = tmp_path / "r1.lab", tmp_path / "r2.lab"
        job = lambda o: ExtractJob(str(image_dir), "labels", str(o), k=3)
        run_extract(job(out1), StubModel())
        run_extract(job(out2), StubModel())
        assert out1.read_bytes() == out2.read_bytes()


class TestActsMode:
    def test_header_and_sparsity(self, tmp_path, image_dir):
        out = tmp_path / "out.act"
        run_extract(ExtractJob(str(image_dir), "acts", str(out)), StubModel())
        lines = out.read_text().splitlines()
        assert lines[0] == "#actfile v1 layer=toy_pool dim=6"
        for line in lines[1:]:
            payload = line.split("\t")[2]
            pairs = [p.split(":") for p in payload.split()] if payload else []
            idxs = [int(i) for i, _ in pairs]
            assert idxs == sorted(set(idxs))  # strictly increasing
            assert all(float(v) > 0 for _, v in pairs)  # zeros dropped

    def test_small_batches_match_one_batch(self, tmp_path, image_dir):
        out1, out2 = tmp_path / "b1.act", tmp_path / "b5.act"
        run_extract(ExtractJob(str(image_dir), "acts", str(out1), batch_size=1), StubModel())
        run_extract(ExtractJob(str(image_dir), "acts", str(out2), batch_size=5), StubModel())
        assert out1.read_bytes() == out2.read_bytes()


class TestSkipping:
    def test_undecodable_listed_in_sidecar(self, tmp_path, image_dir):
        (image_dir / "broken.jpg").write_bytes(b"this is not an image")
        out = tmp_path / "out.lab"
        result = run_extract(ExtractJob(str(image_dir), "labels", str(out), k=1),
                             StubModel())
        assert result.n_images == 3 and result.n_skipped == 1
        assert "broken.jpg" not in out.read_text()
        assert result.sidecar == str(out) + ".skipped.txt"
        assert "broken.jpg" in open(result.sidecar).read()

    def test_bad_mode_rejected(self, tmp_path, image_dir):
        with pytest.raises(ValueError, match="mode"):
            run_extract(ExtractJob(str(image_dir), "features", str(tmp_path / "x")),
                        StubModel())


def ingest(*argv):
    return subprocess.run([sys.executable, "-m", "acttopics.cli", *argv],
                          capture_output=True, text=True)


class TestPrimaryIntegration:
    """Extractor output must pass the topic pipeline's ingest validation."""

    def test_labfile_round_trip(self, tmp_path, image_dir, gold_csv):
        out = tmp_path / "out.lab"
        run_extract(ExtractJob(str(image_dir), "labels", str(out), k=3,
                               labels_csv=gold_csv), StubModel())
        proc = ingest("ingest", "--labfile", str(out),
                      "--out", str(tmp_path / "c.corpus"))
        assert proc.returncode == 0, proc.stderr
        assert "3 docs" in proc.stdout

    def test_actfile_round_trip(self, tmp_path, image_dir):
        out = tmp_path / "out.act"
        run_extract(ExtractJob(str(image_dir), "acts", str(out)), StubModel())
        proc = ingest("ingest", "--actfile", str(out), "--threshold", "10",
                      "--out", str(tmp_path / "c.corpus"))
        assert proc.returncode == 0, proc.stderr


class TestVggLayerContract:
    """Structural checks on the torchvision VGG16 topology that the adapter
    relies on; uses an untrained network, no weights download."""

    def test_block_aliases_and_flatten_order(self):
        torch = pytest.importorskip("torch")
        torchvision = pytest.importorskip("torchvision")
        from actextract.models import VGG16_BLOCK_POOLS

        net = torchvision.models.vgg16()
        mods = list(net.features.children())
        for idx in VGG16_BLOCK_POOLS.values():
            assert isinstance(mods[idx], torch.nn.MaxPool2d)
        cut = torch.nn.Sequential(*mods[:VGG16_BLOCK_POOLS["block5_pool"] + 1])
        with torch.no_grad():
            out = cut(torch.zeros(1, 3, 224, 224))
        assert tuple(out.shape) == (1, 512, 7, 7)  # -> dim 25088 in the header
        # flattening is channel-major, then row, then column
        out = torch.arange(24.0).reshape(1, 2, 3, 4)
        flat = out.flatten(start_dim=1)
        c, h, w = 1, 2, 3
        assert flat[0, c * 12 + h * 4 + w] == out[0, c, h, w]


SMOKE_IMAGES = os.environ.get("ACTEXTRACT_SMOKE_IMAGES")


@pytest.mark.skipif(not SMOKE_IMAGES,
                    reason="set ACTEXTRACT_SMOKE_IMAGES to an image directory "
                           "(pretrained VGG16 weights required) to run")
def test_end_to_end_smoke(tmp_path):
    """Full pipeline on user-supplied photos: extract labels (K=10), ingest,
    LDA with 5 topics, eval. Checks the pipeline completes and emits a 5-row
    density table; topic quality is inspected by hand, not gated."""
    from actextract.models import Vgg16Model

    out = tmp_path / "photos.lab"
    job = ExtractJob(SMOKE_IMAGES, "labels", str(out), k=10,
                     labels_csv=os.environ.get("ACTEXTRACT_SMOKE_LABELS"))
    run_extract(job, Vgg16Model(weights_path=os.environ.get("ACTEXTRACT_SMOKE_WEIGHTS")))

    corpus = tmp_path / "photos.corpus"
    assert ingest("ingest", "--labfile", str(out), "--out", str(corpus)).returncode == 0
    model = tmp_path / "photos.lda"
    assert ingest("fit", "--model", "lda", "--topics", "5", "--seed", "7",
                  "--corpus", str(corpus), "--out", str(model)).returncode == 0
    assign = tmp_path / "photos.assign.tsv"
    assert ingest("assign", "--model", str(model), "--corpus", str(corpus),
                  "--out", str(assign)).returncode == 0
    report = tmp_path / "report"
    assert ingest("eval", "--corpus", str(corpus), "--assignments", str(assign),
                  "--model", str(model), "--out-dir", str(report)).returncode == 0
    table = (report / "contingency.txt").read_text().splitlines()
    data_rows = [l for l in table if l and l[0].isdigit()]
    assert len(data_rows) == 5
