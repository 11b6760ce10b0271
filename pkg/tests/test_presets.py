import pytest

from carlift.presets import BENCHMARKS, benchmark, model_preset


def test_registry_contents():
    assert set(BENCHMARKS) == {
        "linear",
        "weak_quadratic",
        "cubic",
        "dissipative_linear",
    }


def test_model_degrees():
    assert model_preset("linear").x_degree == 1
    assert model_preset("weak_quadratic").x_degree == 2
    assert model_preset("cubic").x_degree == 3
    assert model_preset("dissipative_linear").x_degree == 1


def test_unknown_names_raise():
    with pytest.raises(ValueError):
        model_preset("quartic")
    with pytest.raises(ValueError):
        benchmark("quartic")


def test_benchmark_windows_are_valid():
    for name in BENCHMARKS:
        bench = benchmark(name)
        s = bench.schedule()
        assert bench.t_start > bench.t_end >= s.t_floor
        grid = bench.grid(8)
        assert grid.M == 8
        assert grid.t[0] == bench.t_start and grid.t[-1] == bench.t_end
        assert bench.model().d == 1
