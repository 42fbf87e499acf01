import io

import numpy as np
import pytest

from conftest import NOISE_FREE
from evsynth import EventStream, ModelParams, read_events, stimuli, write_events, write_frames
from evsynth.cli import main
from evsynth.frames import read_pgm
from evsynth.model import K_NAMES
from evsynth.sync import RoiTrack, write_roi_track

K_STAR = ModelParams(k1=8, k2=50, k3=1e-3, k4=2e-6, k5=4e-9, k6=2e-4)


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], out, err)
    return code, out.getvalue(), err.getvalue()


def summary(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


def _k_flags(params):
    return [a for k in K_NAMES for a in (f"--{k}", repr(getattr(params, k)))]


@pytest.fixture(scope="module")
def bar_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("bar") / "bar.r2ef"
    write_frames(path, stimuli.moving_bar(346, 260, n=12))
    return path


def test_static_noise_free_gives_zero_events(tmp_path):
    write_frames(tmp_path / "s.r2ef", stimuli.static(32, 24, n=20, level=90))
    code, out, _ = run("convert", "--input", tmp_path / "s.r2ef", "--output",
                       tmp_path / "s.r2ev", *_k_flags(NOISE_FREE))
    assert code == 0
    assert summary(out)["events"] == "0"
    assert len(read_events(tmp_path / "s.r2ev")) == 0


def test_moving_edge_on_off_balanced(bar_file, tmp_path):
    # leakage drifts k4, k5 push every pixel toward ON; without them the stimulus is symmetric
    code, out, _ = run("convert", "--input", bar_file, "--output", tmp_path / "e.r2ev",
                       "--k4", 0, "--k5", 0)
    s = summary(out)
    on, off = int(s["on"]), int(s["off"])
    assert code == 0 and on + off == int(s["events"]) > 10_000
    assert abs(on - off) <= 0.05 * max(on, off)
    assert float(s["events_per_s"]) > 0


def test_threads_do_not_change_output(bar_file, tmp_path):
    for t in (1, 8):
        assert run("convert", "--input", bar_file, "--output", tmp_path / f"t{t}.r2ev",
                   "--threads", t, "--seed", 5)[0] == 0
    assert (tmp_path / "t1.r2ev").read_bytes() == (tmp_path / "t8.r2ev").read_bytes()


def test_env_threads_default(bar_file, tmp_path, monkeypatch):
    monkeypatch.setenv("R2E_THREADS", "3")
    assert run("convert", "--input", bar_file, "--output", tmp_path / "a.r2ev")[0] == 0
    monkeypatch.delenv("R2E_THREADS")
    assert run("convert", "--input", bar_file, "--output", tmp_path / "b.r2ev")[0] == 0
    assert (tmp_path / "a.r2ev").read_bytes() == (tmp_path / "b.r2ev").read_bytes()


def test_config_file_and_alias_flags(bar_file, tmp_path):
    (tmp_path / "run.cfg").write_text("sensitivity=3\njitter=1e-4,2e-5\nseed=4\n")
    run("convert", "--config", tmp_path / "run.cfg", "--input", bar_file,
        "--output", tmp_path / "a.r2ev")
    run("convert", "--k1", 3, "--k3", 1e-4, "--k6", 2e-5, "--seed", 4, "--input", bar_file,
        "--output", tmp_path / "b.r2ev")
    assert (tmp_path / "a.r2ev").read_bytes() == (tmp_path / "b.r2ev").read_bytes()


def test_bayer_input_is_reduced(tmp_path):
    seq = stimuli.grating(16, 12, 5)
    mosaic = np.repeat(np.repeat(seq.frames, 2, axis=1), 2, axis=2)
    from evsynth import FrameSequence
    write_frames(tmp_path / "raw.r2ef", FrameSequence(32, 24, 8, seq.timestamps, mosaic, 1))
    write_frames(tmp_path / "luma.r2ef", seq)
    for name in ("raw", "luma"):
        run("convert", "--input", tmp_path / f"{name}.r2ef", "--output", tmp_path / f"{name}.r2ev")
    assert (tmp_path / "raw.r2ev").read_bytes() == (tmp_path / "luma.r2ev").read_bytes()


@pytest.fixture(scope="module")
def sweep_pair(tmp_path_factory):
    from evsynth import GeneratorConfig, generate_events_sequence
    d = tmp_path_factory.mktemp("sweep")
    frames = stimuli.brightness_sweep(96, 96, 150)
    write_frames(d / "sweep.r2ef", frames)
    write_events(d / "ref.r2ev", generate_events_sequence(frames, GeneratorConfig(params=K_STAR)))
    return d


def test_calibrate_recovers_k1(sweep_pair):
    code, out, _ = run("calibrate", "--input", sweep_pair / "sweep.r2ef",
                       "--reference", sweep_pair / "ref.r2ev",
                       "--grid", "100,1000,10;-120,120,32")
    assert code == 0
    report = summary(out)
    assert abs(float(report["k1"]) - 8) <= 0.2 * 8
    # budget 0: regression only
    assert "search.trials" not in report and "[trials.csv]" not in out


def test_calibrate_with_search(sweep_pair, tmp_path):
    (tmp_path / "c.cfg").write_text("bounds.k1=1,30\nbounds.k4=0,1e-5\n")
    code, out, _ = run("calibrate", "--config", tmp_path / "c.cfg",
                       "--input", sweep_pair / "sweep.r2ef", "--reference", sweep_pair / "ref.r2ev",
                       "--grid", "100,1000,10;-120,120,32", "--budget", 4,
                       "--output", tmp_path / "report.txt")
    assert code == 0
    assert summary(out)["search.trials"] == "4"
    assert "[trials.csv]\ntrial,phase,feasible,emd" in out
    assert (tmp_path / "report.txt").read_text() == out


def test_calibrate_errors(sweep_pair, tmp_path):
    write_events(tmp_path / "empty.r2ev", EventStream.empty(96, 96))
    code, _, err = run("calibrate", "--input", sweep_pair / "sweep.r2ef",
                       "--reference", tmp_path / "empty.r2ev")
    assert code == 2 and "no events" in err
    code, _, err = run("calibrate", "--input", sweep_pair / "sweep.r2ef",
                       "--reference", sweep_pair / "ref.r2ev", "--n-min", 10**9)
    assert code == 2 and "insufficient bins" in err and "occupancy" in err


def _clock(path, n=300, offset=5_000_000):
    s = np.arange(n) * 33_333
    path.write_text("sensor_us,real_us\n" + "".join(f"{a},{a + offset}\n" for a in s))


def test_sync_prints_offset_and_shifts(tmp_path):
    _clock(tmp_path / "clock.csv")
    s = EventStream.from_columns(8, 8, [10, 20], [1, 2], [3, 4], [1, 0])
    write_events(tmp_path / "ev.r2ev", s)
    code, out, _ = run("sync", "--clock", tmp_path / "clock.csv", "--window", 30,
                       "--shift", tmp_path / "ev.r2ev", "--output", tmp_path / "shifted.r2ev")
    assert code == 0 and "offset_us=5000000\n" in out
    assert read_events(tmp_path / "shifted.r2ev").events["t"].tolist() == [5_000_010, 5_000_020]
    write_frames(tmp_path / "f.r2ef", stimuli.static(4, 4, n=3))
    assert run("sync", "--clock", tmp_path / "clock.csv", "--shift", tmp_path / "f.r2ef",
               "--output", tmp_path / "g.r2ef")[0] == 0


def test_filter_full_sensor_is_byte_identical(bar_file, tmp_path):
    run("convert", "--input", bar_file, "--output", tmp_path / "in.r2ev")
    write_roi_track(tmp_path / "roi.csv", RoiTrack([0, 10**7], [172.5] * 2, [129.5] * 2,
                                                   [400] * 2, [400] * 2, [0, 0]))
    code, out, _ = run("filter", "--input", tmp_path / "in.r2ev", "--roi-track",
                       tmp_path / "roi.csv", "--output", tmp_path / "out.r2ev")
    assert code == 0
    assert (tmp_path / "in.r2ev").read_bytes() == (tmp_path / "out.r2ev").read_bytes()


def test_viz_outputs(tmp_path):
    write_events(tmp_path / "empty.r2ev", EventStream.empty(20, 10))
    code, out, _ = run("viz", "heatmap", "--input", tmp_path / "empty.r2ev",
                       "--output", tmp_path / "h.pgm")
    img, maxval = read_pgm(tmp_path / "h.pgm")
    assert code == 0 and img.shape == (10, 20) and not img.any() and maxval == 255
    s = EventStream.from_columns(4, 4, [0, 100, 300, 350], [1, 1, 1, 2], [1, 1, 1, 2], [1] * 4)
    write_events(tmp_path / "s.r2ev", s)
    code, out, _ = run("viz", "hist", "--input", tmp_path / "s.r2ev", "--output",
                       tmp_path / "h.csv", "--hist-bins", "0,400,4")
    assert code == 0 and summary(out)["intervals"] == "2"
    code, out, _ = run("viz", "cloud", "--input", tmp_path / "s.r2ev", "--output",
                       tmp_path / "c.csv", "--stride", 2, "--polarity", "ON")
    assert code == 0 and summary(out)["points"] == "2"


def test_bench_report():
    code, out, _ = run("bench", "--width", 64, "--height", 48, "--frames", 4, "--repeats", 1)
    report = summary(out)
    assert code == 0
    assert report["run0.resolution"] == "346x260" and report["run3.resolution"] == "64x48"
    assert report["run2.workload"] == "static" and report["run2.events"] == "0"


@pytest.mark.parametrize("argv,code", [
    ((), 1),
    (("explode",), 1),
    (("convert", "--nope"), 1),
    (("convert",), 1),                                  # --input missing
    (("convert", "--input", "/nonexistent.r2ef"), 2),
    (("convert", "--input", "x", "--k2", "-1"), 2),
    (("convert", "--input", "x", "--contrast", "1"), 2),
    (("convert", "--help"), 0),
])
def test_exit_codes(argv, code):
    assert run(*argv)[0] == code


def test_corrupt_input_is_data_error(tmp_path):
    (tmp_path / "bad.r2ef").write_bytes(b"R2EF\x01")
    code, _, err = run("convert", "--input", tmp_path / "bad.r2ef")
    assert code == 2 and "bad.r2ef" in err


def test_internal_error_code(monkeypatch, tmp_path):
    import evsynth.cli as cli

    def boom(*a, **k):
        raise RuntimeError("bug")
    monkeypatch.setattr(cli, "generate_events_sequence", boom)
    write_frames(tmp_path / "s.r2ef", stimuli.static(4, 4, n=3))
    code, _, err = run("convert", "--input", tmp_path / "s.r2ef")
    assert code == 3 and "RuntimeError" in err
