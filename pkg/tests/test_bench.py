import numpy as np

from svcompress import cli
from svcompress.bench import BenchmarkConfig, benchmark, prepare
from svcompress.io import read_json

TINY = BenchmarkConfig(U=60, C=8, F=4, d=5, iterations=3, repetitions=2, t_min=30, t_max=40)


class TestBenchmark:
    def test_report_shape(self):
        report = benchmark(["fefa", "ppca", "fa", "ppls", "sppca", "pca"], TINY)
        assert report["dimensions"] == {"U": 60, "C": 8, "F": 4, "d": 5, "h": 32}
        by = {m["method"]: m for m in report["methods"]}
        assert len(by["ppca"]["per_iteration_seconds"]) == 3
        assert len(by["ppca"]["objectives"]) == 4
        assert len(by["pca"]["per_iteration_seconds"]) == 1
        assert all(m["median_total_seconds"] > 0 for m in report["methods"])
        assert set(report["speedup_vs_fefa"]) == {"ppca", "fa", "ppls", "sppca", "pca"}

    def test_prepared_data(self):
        data = prepare(TINY)
        assert data.stats.n.shape == (60, 8)
        np.testing.assert_allclose(data.supervectors.matrix.mean(axis=0), 0.0, atol=1e-10)

    def test_cli(self, tmp_path, capsys):
        out = tmp_path / "bench.json"
        assert cli.main(["benchmark", "--methods", "fefa", "ppca", "--U", "40", "--C", "4", "--F", "3",
                         "--d", "3", "--iterations", "2", "--repetitions", "1", "--output", str(out)]) == 0
        assert "speedup ppca vs fefa" in capsys.readouterr().out
        assert read_json(out)["config"]["U"] == 40
        assert out.with_suffix(".png").stat().st_size > 0
