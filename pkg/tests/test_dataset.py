import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tallyopt.dataset import (
    Dataset, fit_scaler, generate_dataset, grid_array, grid_converter, grid_moderator, load_dataset,
    load_sidecar, n_test_rows, prepare, save_dataset, save_sidecar, split,
)
from tallyopt.errors import ConfigError, ParseError
from tallyopt.rng import derive_int, derive_rng


@pytest.fixture(scope="module")
def moderator_ds():
    return generate_dataset("moderator", 0.05, 4)


class TestGrids:
    def test_moderator_grid(self):
        g = grid_moderator()
        assert len(g) == 750
        assert (g[0].be_thickness, g[0].pe_thickness) == (0.003, 0.75)
        be = sorted({p.be_thickness for p in g})
        assert len(be) == 30
        np.testing.assert_allclose(np.diff(be), 0.003, atol=1e-15)
        assert be[-1] == 0.09
        pe = sorted({p.pe_thickness for p in g})
        assert len(pe) == 25 and pe[-1] == 2.5

    def test_converter_grid(self):
        g = grid_converter()
        assert len(g) == 1760
        heights = sorted({p.height for p in g})
        assert heights[0] == 0.05 and heights[-1] == 2.2 and len(heights) == 44
        np.testing.assert_allclose(np.diff(heights), 0.05, atol=1e-12)
        assert sorted({p.radius for p in g}) == [round(0.1 * k, 1) for k in range(1, 11)]

    def test_grid_array_shapes(self):
        assert grid_array("moderator").shape == (750, 2)
        assert grid_array("converter").shape == (1760, 4)


class TestGenerate:
    def test_cost_moderator(self):
        assert generate_dataset("moderator", 0.01, 0).total_cost == 750.0

    def test_cost_converter(self):
        assert generate_dataset("converter", 0.05, 0).total_cost == pytest.approx(140.8, rel=1e-14)

    def test_deterministic_bytes(self, moderator_ds):
        assert generate_dataset("moderator", 0.05, 4).to_text() == moderator_ds.to_text()

    def test_seed_changes_values(self, moderator_ds):
        other = generate_dataset("moderator", 0.05, 5)
        np.testing.assert_array_equal(other.inputs, moderator_ds.inputs)
        assert not np.array_equal(other.outputs, moderator_ds.outputs)

    def test_outputs_positive(self, moderator_ds):
        assert np.all(moderator_ds.outputs > 0)

    def test_nonstandard_level_warns(self, caplog):
        generate_dataset("moderator", 0.2, 0)
        assert "not one of" in caplog.text

    def test_bad_level(self):
        with pytest.raises(ConfigError):
            generate_dataset("moderator", 0.0, 0)


class TestPersistence:
    def test_round_trip_bytes(self, moderator_ds, tmp_path):
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        save_dataset(moderator_ds, p1)
        save_dataset(load_dataset(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header(self, moderator_ds):
        lines = moderator_ds.to_text().splitlines()
        assert lines[0].startswith("# problem=moderator,u_level=0.05,seed=4,total_cost=")
        assert lines[1] == "in_0,in_1,f1,f2"

    def test_wrong_column_count_names_row(self, moderator_ds, tmp_path):
        lines = moderator_ds.to_text().splitlines()
        lines[7] += ",1.0"
        path = tmp_path / "bad.csv"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError) as exc:
            load_dataset(path)
        assert exc.value.line == 8
        assert "line 8" in str(exc.value)

    @pytest.mark.parametrize("bad,line", [
        ("problem=moderator,u_level=0.05", 1),
        ("# problem=moderator,u_level=0.05", 1),
    ])
    def test_bad_metadata(self, tmp_path, bad, line):
        path = tmp_path / "bad.csv"
        path.write_text(bad + "\nin_0,in_1,f1,f2\n0.1,1.0,1.0,1.0\n")
        with pytest.raises(ParseError) as exc:
            load_dataset(path)
        assert exc.value.line == line

    def test_non_numeric_cell(self, moderator_ds, tmp_path):
        lines = moderator_ds.to_text().splitlines()
        lines[3] = "0.003,abc,1.0,1.0"
        path = tmp_path / "bad.csv"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError, match="line 4"):
            load_dataset(path)

    def test_sidecar_round_trip(self, moderator_ds, tmp_path):
        prep = prepare(moderator_ds, 9)
        save_sidecar(prep, tmp_path / "s.json")
        back = load_sidecar(tmp_path / "s.json", moderator_ds)
        np.testing.assert_array_equal(back.split.test_indices, prep.split.test_indices)
        np.testing.assert_array_equal(back.input_scaler.std, prep.input_scaler.std)

    def test_sidecar_hash_mismatch(self, moderator_ds, tmp_path):
        save_sidecar(prepare(moderator_ds, 9), tmp_path / "s.json")
        with pytest.raises(ParseError, match="hash"):
            load_sidecar(tmp_path / "s.json", generate_dataset("moderator", 0.05, 99))


class TestScaler:
    def test_constant_column(self):
        x = np.column_stack([np.full(10, 3.0), np.arange(10.0)])
        s = fit_scaler(x)
        assert np.all(s.transform(x)[:, 0] == 0.0)

    def test_standardized_training_rows(self, moderator_ds):
        prep = prepare(moderator_ds, 1)
        x_tr, y_tr, _, _ = prep.scaled()
        for a in (x_tr, y_tr):
            assert np.all(np.abs(a.mean(axis=0)) < 1e-10)
            np.testing.assert_allclose(a.std(axis=0), 1.0, atol=1e-10)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(rng.uniform(-1e3, 1e3, 3), rng.uniform(1e-3, 1e3, 3), size=(40, 3))
        s = fit_scaler(x)
        np.testing.assert_allclose(s.inverse(s.transform(x)), x, rtol=1e-12, atol=1e-12 * np.abs(x).max())

    def test_empty(self):
        with pytest.raises(ConfigError):
            fit_scaler(np.empty((0, 2)))


class TestSplit:
    @pytest.mark.parametrize("n,expected", [(750, 113), (1760, 264), (20, 3)])
    def test_test_size(self, n, expected):
        assert n_test_rows(n) == expected
        assert len(split(n, 0).test_indices) == expected

    def test_partition(self):
        s = split(750, 3)
        assert not set(s.train_indices) & set(s.test_indices)
        assert sorted([*s.train_indices, *s.test_indices]) == list(range(750))

    def test_seeded(self):
        np.testing.assert_array_equal(split(100, 5).test_indices, split(100, 5).test_indices)
        assert not np.array_equal(split(100, 5).test_indices, split(100, 6).test_indices)

    def test_too_small(self):
        with pytest.raises(ConfigError):
            split(19, 0)

    def test_scalers_use_training_rows_only(self, moderator_ds):
        prep = prepare(moderator_ds, 2)
        tr = prep.split.train_indices
        np.testing.assert_allclose(prep.output_scaler.mean, moderator_ds.outputs[tr].mean(axis=0))


class TestRng:
    def test_streams_independent_of_order(self):
        a = derive_rng(1, "x", 2).random(3)
        derive_rng(1, "y").random(100)
        np.testing.assert_array_equal(derive_rng(1, "x", 2).random(3), a)

    def test_labels_matter(self):
        assert derive_int(0, "a") != derive_int(0, "b")
        assert derive_int(0, "a", 1) != derive_int(0, "a", 2)
        assert derive_int(0, "a") != derive_int(1, "a")

    def test_negative_label(self):
        with pytest.raises(ValueError):
            derive_rng(0, -1)
