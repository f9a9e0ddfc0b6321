import hashlib
import re
import shutil
import xml.etree.ElementTree as ET

import pytest
from filelock import FileLock

from quasistates import cli
from quasistates import clustering as cl
from quasistates.config import PipelineConfig, load_config
from quasistates.pipeline import LOCK, MANIFEST, read_manifest

SHORT_RUN = """
scenario = three_regime
n_days = 2000
seed = 0
threshold = 0.3
"""


def write_cfg(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def finished(tmp_path_factory):
    """A complete `all` run on a shortened three-regime scenario."""
    root = tmp_path_factory.mktemp("run")
    cfg = write_cfg(root / "run.cfg", SHORT_RUN)
    out = root / "out"
    assert cli.main(["all", "--config", cfg, "--out", str(out)]) == 0
    return root, cfg, out


@pytest.fixture
def workdir(finished, tmp_path):
    """Private copy of the finished run, safe to modify."""
    _, cfg, out = finished
    shutil.copytree(out, tmp_path / "out")
    return cfg, tmp_path / "out"


class TestExitCodes:
    def test_usage(self, capsys):
        with pytest.raises(SystemExit) as info:
            cli.main([])
        assert info.value.code == 1
        with pytest.raises(SystemExit) as info:
            cli.main(["explode"])
        assert info.value.code == 1
        with pytest.raises(SystemExit) as info:
            cli.main(["ingest", "--seed", "x"])
        assert info.value.code == 1

    def test_missing_sector_file(self, tmp_path, capsys):
        prices = tmp_path / "prices.csv"
        prices.write_text("date,ticker,close\n2020-01-01,A,1\n2020-01-02,A,2\n")
        missing = tmp_path / "nowhere" / "sectors.csv"
        cfg = write_cfg(tmp_path / "c.cfg", f"prices = {prices}\nsectors = {missing}\n")
        assert cli.main(["ingest", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert str(missing) in capsys.readouterr().err

    def test_stage_out_of_order(self, tmp_path, capsys):
        assert cli.main(["cluster", "--out", str(tmp_path / "empty")]) == 3
        err = capsys.readouterr().err
        assert "cluster" in err and "run `correlate` first" in err

    def test_all_windows_fail(self, workdir, tmp_path):
        cfg, out = workdir
        broken = write_cfg(tmp_path / "b.cfg", SHORT_RUN + "count_min = 1e9\n")
        assert cli.main(["potentials", "--config", broken, "--out", str(out)]) == 4
        status = (out / "potentials").glob("windows_r*.csv")
        assert all("ok" not in p.read_text().split("\n", 1)[1] for p in status)

    def test_bad_config(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "c.cfg", "no_such_key = 1\n")
        assert cli.main(["ingest", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "unknown key" in capsys.readouterr().err

    def test_locked_output(self, workdir, capsys):
        cfg, out = workdir
        with FileLock(str(out / LOCK)):
            assert cli.main(["report", "--config", cfg, "--out", str(out)]) == 2
        assert "locked" in capsys.readouterr().err


class TestStages:
    def test_artifacts_and_manifest(self, finished):
        _, cfg, out = finished
        for name in ("data/prices.csv", "returns.csv", "normalized_returns.csv", "states.csv",
                     "model.json", "timeline.csv", "tree.txt", "distances.csv",
                     "proposals.csv", "fixed_point.csv", "consistency.csv", "delta.csv"):
            assert (out / name).stat().st_size > 0, name
        manifest = read_manifest(out / MANIFEST)
        assert list(manifest) == ["synth", "ingest", "correlate", "cluster", "potentials",
                                  "merge", "fixedpoint", "report"]
        expected_hash = load_config(cfg).replace(out=str(out)).digest()
        for stage, lines in manifest.items():
            assert lines[0].startswith("version ")
            assert lines[1] == f"config_hash {expected_hash}"
            for line in lines[2:]:
                kind, rel, sha = line.split(" ")
                if kind == "output":
                    assert digest(out / rel) == sha, (stage, rel)

    def test_ingest_rerun_is_byte_identical(self, workdir):
        cfg, out = workdir
        names = ("returns.csv", "normalized_returns.csv", "sectors.csv")
        before = {n: digest(out / n) for n in names}
        assert cli.main(["ingest", "--config", cfg, "--out", str(out)]) == 0
        assert {n: digest(out / n) for n in names} == before

    def test_merge_without_proposals(self, workdir, tmp_path):
        _, out = workdir
        strict = write_cfg(tmp_path / "s.cfg", SHORT_RUN + "merge_support = 99\n")
        assert cli.main(["merge", "--config", strict, "--out", str(out)]) == 0
        lines = (out / "proposals.csv").read_text().splitlines()
        assert lines == ["reference_id,minimum_x,member_ids,support_count"]

    def test_fixedpoint_auto_run(self, finished):
        _, _, out = finished
        rows = (out / "consistency.csv").read_text().splitlines()
        assert rows[0] == "reference_a,reference_b,distance,tol,consistent"
        assert len((out / "fixed_point.csv").read_text().splitlines()) >= 2

    def test_fixedpoint_two_references(self, workdir, tmp_path):
        _, out = workdir
        # an interval inside the first (calm) regime, seen from both other clusters
        pure = write_cfg(tmp_path / "p.cfg", SHORT_RUN + "fp_interval = 100:600\n")
        assert cli.main(["fixedpoint", "--config", pure, "--out", str(out)]) == 0
        rows = (out / "consistency.csv").read_text().splitlines()
        assert len(rows) == 2
        _a, _b, dist, tol, flag = rows[1].split(",")
        assert flag == str(int(float(dist) < float(tol)))
        assert len((out / "fixed_point.csv").read_text().splitlines()) == 3

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = write_cfg(tmp_path / "c.cfg", "seed = 1\n")
        args = cli.build_parser().parse_args(["--seed", "5", "ingest", "--config", cfg])
        assert cli.resolve_config(args).seed == 5
        args = cli.build_parser().parse_args(["ingest", "--config", cfg, "--out", "x"])
        resolved = cli.resolve_config(args)
        assert resolved.seed == 1 and resolved.out == "x"
        assert resolved.digest() != PipelineConfig(seed=5).digest()


class TestReport:
    FIGURES = ("timeline.svg", "distances.svg", "potentials.svg", "delta.svg")

    def test_four_valid_svgs(self, finished):
        _, _, out = finished
        for name in self.FIGURES:
            path = out / "figures" / name
            assert path.stat().st_size > 0
            assert ET.parse(path).getroot().tag.endswith("svg")

    def test_one_vertical_per_live_cluster(self, finished):
        _, _, out = finished
        model = cl.load_model(out / "model.json")
        text = (out / "figures" / "potentials.svg").read_text()
        ids = re.findall(r'id="(w\d{4})-center-(\d+)"', text)
        panels = {w for w, _ in ids}
        assert panels
        for w in panels:
            centers = sorted(int(j) for p, j in ids if p == w)
            assert centers == list(model.leaves)

    def test_rerun_is_identical(self, workdir):
        cfg, out = workdir
        before = {n: digest(out / "figures" / n) for n in self.FIGURES}
        assert cli.main(["report", "--config", cfg, "--out", str(out)]) == 0
        assert {n: digest(out / "figures" / n) for n in self.FIGURES} == before
