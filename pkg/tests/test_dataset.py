import json

import numpy as np
import pandas as pd
import pytest

from revealed.dataset import (
    Dataset,
    DatasetError,
    DatasetParseError,
    PersonalizedAllocation,
    SchemaError,
    Violation,
    allocation_bounds,
    dataset_from_json,
    dataset_to_json,
    group_expenditure,
    read_allocation,
    read_dataset,
    validate,
    write_allocation,
    write_dataset,
    write_dataset_csv,
)


class TestValidate:
    def test_simulated_dataset_is_valid(self, coordinated):
        dataset, _ = coordinated
        assert validate(dataset) == []

    def test_single_full_observation(self):
        dataset = Dataset.from_arrays([[1.0, 2.0]], [[0.5, 0.5]], [[[0.5, 0.5]]])
        assert validate(dataset) == []

    def test_dominance_violation(self, coordinated):
        dataset, _ = coordinated
        beta_hats = dataset.beta_hats.copy()
        beta_hats[0, 0, 0] = dataset.betas[0, 0] + 1.0
        broken = Dataset.from_arrays(dataset.alphas, dataset.betas, beta_hats)
        dominance = [v for v in validate(broken) if v.rule == "dominance"]
        assert len(dominance) == 1
        assert (dominance[0].t, dominance[0].i, dominance[0].component) == (0, 0, 0)

    def test_non_positive_probe(self):
        dataset = Dataset.from_arrays([[0.0, 1.0]], [[1.0, 1.0]], [[[0.5, 0.5]]])
        assert [v.rule for v in validate(dataset)] == ["positive-probe"]

    def test_assignable_sum_exceeds_aggregate(self):
        dataset = Dataset.from_arrays([[1.0, 1.0]], [[1.0, 1.0]], [[[0.6, 0.1], [0.6, 0.1]]])
        assert [v.rule for v in validate(dataset)] == ["assignable-sum"]

    def test_violation_reads_one_based(self):
        assert str(Violation(2, 0, 1, "dominance")) == "t=3 i=1 k=2: dominance"


class TestGroupExpenditure:
    def test_inner_product(self):
        dataset = Dataset.from_arrays([[1.0, 1.0]], [[2.0, 3.0]], [[[0.0, 0.0]]])
        assert group_expenditure(dataset, 0) == 5.0

    def test_zero_consumption(self):
        dataset = Dataset.from_arrays([[0.5, 2.0]], [[0.0, 0.0]], [[[0.0, 0.0]]])
        assert group_expenditure(dataset, 0) == 0.0

    def test_matches_csv_recomputation(self, coordinated, tmp_path):
        dataset, _ = coordinated
        path = tmp_path / "dataset.csv"
        write_dataset_csv(dataset, str(path))
        frame = pd.read_csv(path)
        row = frame.iloc[0]
        recomputed = row["alpha_1"] * row["beta_1"] + row["alpha_2"] * row["beta_2"]
        assert group_expenditure(dataset, 0) == pytest.approx(recomputed, rel=1e-12)

    def test_index_out_of_range(self, coordinated):
        dataset, _ = coordinated
        with pytest.raises(DatasetError):
            group_expenditure(dataset, dataset.T)


class TestAllocationBounds:
    def test_box_contains_truth(self, coordinated):
        dataset, truth = coordinated
        lower, upper = allocation_bounds(dataset)
        assert np.all(truth.q >= lower - 1e-12)
        assert np.all(truth.q <= upper + 1e-12)
        assert truth.violations(dataset) == []


class TestFiles:
    def test_round_trip(self, coordinated, tmp_path):
        dataset, _ = coordinated
        path = tmp_path / "dataset.json"
        write_dataset(dataset, str(path))
        assert read_dataset(str(path)) == dataset

    def test_truncated_file(self, coordinated, tmp_path):
        dataset, _ = coordinated
        path = tmp_path / "dataset.json"
        text = json.dumps(dataset_to_json(dataset))
        path.write_text(text[: len(text) // 2])
        with pytest.raises(DatasetParseError) as info:
            read_dataset(str(path))
        assert info.value.line is not None

    def test_undecodable_bytes(self, tmp_path):
        path = tmp_path / "dataset.json"
        path.write_bytes(b"{\n  \"version\": \xff\xfe}")
        with pytest.raises(DatasetParseError) as info:
            read_dataset(str(path))
        assert (info.value.line, info.value.column) == (2, 14)
        with pytest.raises(DatasetParseError):
            read_allocation(str(path))

    def test_header_disagrees_with_blocks(self, coordinated, tmp_path):
        dataset, _ = coordinated
        document = dataset_to_json(dataset)
        for record in document["observations"]:
            record["beta_hat"] = record["beta_hat"][:2]
        path = tmp_path / "dataset.json"
        path.write_text(json.dumps(document))
        with pytest.raises(SchemaError, match="M=3 but found 2"):
            read_dataset(str(path))

    def test_wrong_version(self, coordinated):
        document = dataset_to_json(coordinated[0])
        document["version"] = "0"
        with pytest.raises(SchemaError):
            dataset_from_json(document)

    def test_allocation_round_trip(self, coordinated, tmp_path):
        _, truth = coordinated
        path = tmp_path / "witness.json"
        write_allocation(truth, str(path))
        assert np.array_equal(read_allocation(str(path)).q, truth.q)

    def test_csv_columns(self, coordinated, tmp_path):
        dataset, _ = coordinated
        path = tmp_path / "dataset.csv"
        write_dataset_csv(dataset, str(path))
        frame = pd.read_csv(path)
        assert list(frame.columns[:5]) == ["t", "alpha_1", "alpha_2", "beta_1", "beta_2"]
        assert "beta_hat_3_2" in frame.columns
        assert len(frame) == dataset.T


class TestPersonalizedAllocation:
    def test_adding_up_violation(self, coordinated):
        dataset, truth = coordinated
        q = truth.q.copy()
        q[4, 1, 0] += 0.5
        rules = {v.rule for v in PersonalizedAllocation(q).violations(dataset)}
        assert "adding-up" in rules

    def test_shape_mismatch(self, coordinated):
        dataset, truth = coordinated
        assert PersonalizedAllocation(truth.q[:3]).violations(dataset)[0].rule == "shape"
