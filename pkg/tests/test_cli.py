import json

import numpy as np
import pytest

from udaseg import imageio, metrics
from udaseg.cli import main


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    assert main(["synth", "--out", str(root), "--n-images", "6", "--n-eval", "3", "--size", "32"]) == 0
    return root


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = {
        "net": {"base_width": 8},
        "data": {"root": str(dataset)},
        "prw": {"n_superpixels": 4},
        "total_steps": 3,
    }
    (out / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(out / "cfg.json"), "--out", str(out), "--no-figures"]) == 0
    return out


def test_synth_layout(dataset):
    assert len(list((dataset / "source" / "images").glob("*.png"))) == 6
    assert len(list((dataset / "source" / "labels").glob("*.png"))) == 6
    assert len(list((dataset / "target" / "images").glob("*.png"))) == 6
    assert len(list((dataset / "target" / "labels_eval").glob("*.png"))) == 3


def test_eval_identity(dataset, tmp_path, capsys):
    labels = dataset / "source" / "labels"
    assert main(["eval", "--pred", str(labels), "--gt", str(labels), "--classes", "4",
                 "--out", str(tmp_path / "r.csv"), "--figure"]) == 0
    assert metrics.read_report(tmp_path / "r.csv")["miou"] == 1.0
    assert (tmp_path / "r.png").is_file()
    assert "mIoU 1.000000" in capsys.readouterr().out


def test_gradcheck_ok(capsys):
    assert main(["gradcheck"]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["eval", "--bogus"]) == 1
    assert main(["nosuch"]) == 1


def test_missing_data_is_exit_2(tmp_path, capsys):
    code = main(["eval", "--pred", str(tmp_path / "none"), "--gt", str(tmp_path), "--classes", "2",
                 "--out", str(tmp_path / "r.csv")])
    assert code == 2
    assert str(tmp_path / "none") in capsys.readouterr().err


def test_bad_config_key_is_exit_1(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"fusion": {"size": 3}}))
    assert main(["train", "--config", str(tmp_path / "c.json")]) == 1
    assert "fusion.size" in capsys.readouterr().err


def test_train_zero_steps_matches_eval(dataset, tmp_path):
    out = tmp_path / "run"
    cfg = {"net": {"base_width": 8}, "data": {"root": str(dataset)}, "total_steps": 0}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(out), "--no-figures"]) == 0
    assert main(["infer", "--checkpoint", str(out / "checkpoint.bin"),
                 "--images", str(dataset / "target" / "eval_images"), "--out", str(tmp_path / "pred")]) == 0
    assert main(["eval", "--pred", str(tmp_path / "pred" / "labels"), "--gt", str(dataset / "target" / "labels_eval"),
                 "--classes", "4", "--out", str(tmp_path / "r.csv")]) == 0
    assert metrics.read_report(tmp_path / "r.csv")["miou"] == metrics.read_report(out / "metrics.csv")["miou"]


def test_train_outputs(trained):
    for name in ("checkpoint.bin", "loss.csv", "metrics.csv"):
        assert (trained / name).is_file()


def test_infer_outputs(trained, dataset, tmp_path):
    assert main(["infer", "--checkpoint", str(trained / "checkpoint.bin"),
                 "--images", str(dataset / "target" / "eval_images"), "--out", str(tmp_path)]) == 0
    lab = imageio.read_labels(tmp_path / "labels" / "evl0000.png")
    col = imageio.read_image(tmp_path / "color" / "evl0000.png")
    assert lab.shape == (32, 32) and lab.max() < 4
    assert col.shape == (32, 32, 3)


def test_transfer_and_fuse(trained, dataset, tmp_path):
    src = dataset / "source" / "images"
    assert main(["transfer", "--src", str(src), "--ref", str(dataset / "target" / "images"),
                 "--out", str(tmp_path / "st")]) == 0
    assert main(["fuse", "--source", str(src), "--transferred", str(tmp_path / "st"),
                 "--checkpoint", str(trained / "checkpoint.bin"), "--out", str(tmp_path / "fz"),
                 "--patch-size", "8"]) == 0
    for p in sorted(src.glob("*.png")):
        x_s = imageio.read_image(p)
        x_st = imageio.read_image(tmp_path / "st" / p.name)
        mix = imageio.read_image(tmp_path / "fz" / "images" / p.name)
        mask = imageio.read_mask(tmp_path / "fz" / "masks" / p.name)
        assert mask.shape == (4, 4)
        pix = np.repeat(np.repeat(mask, 8, 0), 8, 1)
        np.testing.assert_array_equal(mix, np.where(pix[..., None], x_st, x_s))


def test_fuse_cnn(dataset, tmp_path):
    src = dataset / "source" / "images"
    assert main(["transfer", "--src", str(src), "--out", str(tmp_path / "st"), "--method", "identity"]) == 0
    assert main(["fuse", "--source", str(src), "--transferred", str(tmp_path / "st"),
                 "--out", str(tmp_path / "fz"), "--variant", "cnn"]) == 0
    p = sorted(src.glob("*.png"))[0]
    # identity transfer at averaging initialisation reproduces the source
    np.testing.assert_allclose(imageio.read_image(tmp_path / "fz" / "images" / p.name), imageio.read_image(p),
                               atol=1 / 255)


def test_fuse_missing_transfer_names_stem(trained, dataset, tmp_path, capsys):
    code = main(["fuse", "--source", str(dataset / "source" / "images"), "--transferred", str(tmp_path),
                 "--checkpoint", str(trained / "checkpoint.bin"), "--out", str(tmp_path / "fz")])
    assert code == 2
    assert "src0000" in capsys.readouterr().err


def test_pseudo(trained, dataset, tmp_path):
    assert main(["pseudo", "--checkpoint", str(trained / "checkpoint.bin"),
                 "--images", str(dataset / "target" / "images"), "--out", str(tmp_path),
                 "--prw", "--n-superpixels", "4", "--beta", "0.3", "--delta", "0.5"]) == 0
    rows = (tmp_path / "quality.csv").read_text().splitlines()
    assert rows[0] == "stem,w_base" and len(rows) == 7
    w_base = float(rows[1].split(",")[1])
    wmap = np.load(tmp_path / "weights" / "tgt0000.npy")
    assert set(np.unique(wmap)) <= {w_base, w_base + 0.3}
    assert (tmp_path / "labels" / "tgt0000.png").is_file()


def test_pseudo_bad_beta(trained, dataset, tmp_path):
    assert main(["pseudo", "--checkpoint", str(trained / "checkpoint.bin"),
                 "--images", str(dataset / "target" / "images"), "--out", str(tmp_path),
                 "--prw", "--beta", "1.0"]) == 1


def test_superpix_reproducible(dataset, tmp_path):
    args = ["superpix", "--images", str(dataset / "target" / "images"), "--n-superpixels", "4"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for p in (tmp_path / "a" / "superpixels").glob("*.png"):
        assert p.read_bytes() == (tmp_path / "b" / "superpixels" / p.name).read_bytes()
    sp = np.asarray(imageio._open(tmp_path / "a" / "superpixels" / "tgt0000.png"))
    assert sp.shape == (32, 32)
    assert (tmp_path / "a" / "boundaries" / "tgt0000.png").is_file()


def test_non_checkpoint_is_exit_2(dataset, tmp_path):
    (tmp_path / "x.bin").write_bytes(b"garbage!" * 4)
    assert main(["infer", "--checkpoint", str(tmp_path / "x.bin"),
                 "--images", str(dataset / "target" / "images"), "--out", str(tmp_path / "o")]) == 2
