import numpy as np
import pytest
import torch

from dlsr.complexity import (genotype_complexity, op_multiadds, op_params,
                             search_space_cardinality, supernet_complexity)
from dlsr.genotype import (Genotype, build_derived_network, load_genotype,
                           recent_connections)
from dlsr.search_space import (OPERATIONS, Supernet, SupernetConfig,
                               get_operation_spec)

# params (K) and Multi-Adds (G) at C=50, x2, 720p, as printed in the
# candidate-op table
PUBLISHED_TABLE = {
    "conv1x1": (2.5, 0.576),
    "conv3x3": (22.5, 5.184),
    "conv5x5": (62.5, 14.400),
    "conv7x7": (122.5, 28.224),
    "sepconv3x3": (5.9, 1.359),
    "sepconv5x5": (7.5, 1.728),
    "sepconv7x7": (9.9, 2.281),
    "dilconv3x3": (2.95, 0.680),
    "dilconv5x5": (3.75, 0.864),
}


@pytest.mark.parametrize("name", list(PUBLISHED_TABLE))
def test_published_op_table_reproduced_exactly(name):
    spec = get_operation_spec(name)
    params_k, multiadds_g = PUBLISHED_TABLE[name]
    assert round(op_params(spec, 50) / 1e3, 2) == params_k
    assert round(op_multiadds(spec, 50, (720, 1280), 2) / 1e9, 3) == multiadds_g


@pytest.mark.parametrize("name,channels,expected", [
    ("conv7x7", 50, 122_500),
    ("sepconv7x7", 50, 9_900),
    ("dilconv5x5", 50, 3_750),
    ("conv1x1", 1, 1),
])
def test_op_params_examples(name, channels, expected):
    assert op_params(get_operation_spec(name), channels) == expected


def test_op_params_match_instantiated_layers():
    from dlsr.search_space import instantiate_operation
    for spec in OPERATIONS:
        layer = instantiate_operation(spec, 12)
        assert sum(p.numel() for p in layer.parameters()) == op_params(spec, 12)


def test_multiadds_scale_quadratically():
    for spec in OPERATIONS:
        at2 = op_multiadds(spec, 50, (720, 1280), 2)
        at4 = op_multiadds(spec, 50, (720, 1280), 4)
        assert at4 * 4 == at2


def test_multiadds_reject_nondivisible_dims():
    with pytest.raises(ValueError):
        op_multiadds(OPERATIONS[0], 50, (720, 1281), 2)
    with pytest.raises(ValueError):
        op_multiadds(OPERATIONS[0], 50, (720, 1280), 3)


def fixture_genotype(triple, channels=48, num_cells=6, scale=2):
    return Genotype(cells=[tuple(triple)] * num_cells,
                    connections=recent_connections(num_cells),
                    channels=channels, num_cells=num_cells, scale=scale)


class TestGenotypeComplexity:
    def test_fixture_file_within_ten_percent_of_published_total(self):
        genotype = load_genotype("fixtures/dlsr.json")
        report = genotype_complexity(genotype, SupernetConfig(), (720, 1280))
        assert abs(report.total_params - 322_000) / 322_000 <= 0.10

    def test_totals_equal_weight_enumeration_oracle(self):
        genotype = fixture_genotype(["conv1x1", "sepconv3x3", "sepconv7x7"],
                                    channels=8, num_cells=3)
        cfg = SupernetConfig(channels=8, num_cells=3, scale=2)
        report = genotype_complexity(genotype, cfg, (32, 32))
        net = build_derived_network(genotype, cfg)
        assert report.total_params == sum(p.numel() for p in net.parameters())

    def test_random_genotypes_equal_enumeration(self):
        rng = np.random.default_rng(0)
        cfg = SupernetConfig(channels=8, num_cells=2, scale=2)
        names = [s.name for s in OPERATIONS]
        for _ in range(4):
            cells = [tuple(rng.choice(names, size=3)) for _ in range(2)]
            genotype = Genotype(cells=cells, connections=[[0], [0, 1]],
                                channels=8, num_cells=2, scale=2)
            report = genotype_complexity(genotype, cfg, (16, 16))
            net = build_derived_network(genotype, cfg)
            assert report.total_params == sum(p.numel() for p in net.parameters())

    def test_degenerate_single_cell_hand_count(self):
        # C=1, one cell, conv1x1 ops, distill_ratio 1, esa_reduction 1:
        #   stem 3x3x3x1+1=28, agg 1+1=2, distill1..3 (1+1)x3=6,
        #   distill4 3x3 9+1=10, ops 1x3=3, fuse 4+1=5,
        #   esa 2+2+(9+1)x4+2=46, fusion1 1+1=2, fusion2 9+1=10,
        #   tail 3x3x1x12+12=120  -> total 232
        cfg = SupernetConfig(channels=1, num_cells=1, scale=2,
                             distill_ratio=1.0, esa_reduction=1)
        genotype = Genotype(cells=[("conv1x1",) * 3], connections=[[0]],
                            channels=1, num_cells=1, scale=2)
        report = genotype_complexity(genotype, cfg, (16, 16))
        assert report.total_params == 232
        net = build_derived_network(genotype, cfg)
        assert sum(p.numel() for p in net.parameters()) == 232

    def test_report_totals_equal_per_layer_sums(self):
        genotype = fixture_genotype(["sepconv3x3"] * 3, channels=8, num_cells=2)
        report = genotype_complexity(genotype, SupernetConfig(channels=8,
                                                              num_cells=2),
                                     (64, 96))
        assert report.total_params == sum(l.params for l in report.per_layer)
        assert report.total_multiadds == sum(l.multiadds for l in report.per_layer)
        assert all(l.params >= 0 and l.multiadds >= 0 for l in report.per_layer)

    def test_mismatched_config_rejected(self):
        genotype = fixture_genotype(["conv1x1"] * 3, channels=8, num_cells=2)
        with pytest.raises(ValueError):
            genotype_complexity(genotype, SupernetConfig(channels=16,
                                                         num_cells=2), (16, 16))

    def test_nondivisible_dims_rejected(self):
        genotype = fixture_genotype(["conv1x1"] * 3, channels=8, num_cells=2)
        with pytest.raises(ValueError):
            genotype_complexity(genotype, SupernetConfig(channels=8, num_cells=2),
                                (17, 16))


class TestSupernetComplexity:
    def test_matches_enumeration_excluding_arch_params(self, tiny_cfg):
        report = supernet_complexity(tiny_cfg, (32, 32))
        net = Supernet(tiny_cfg)
        arch = {id(p) for p in net.arch_parameters()}
        enumerated = sum(p.numel() for p in net.parameters() if id(p) not in arch)
        assert report.total_params == enumerated

    def test_derived_cost_never_exceeds_supernet(self, tiny_cfg):
        genotype = fixture_genotype(["conv7x7"] * 3, channels=8, num_cells=2)
        derived = genotype_complexity(genotype, tiny_cfg, (32, 32))
        sup = supernet_complexity(tiny_cfg, (32, 32))
        assert derived.total_multiadds <= sup.total_multiadds
        assert derived.total_params <= sup.total_params


class TestCardinality:
    def test_published_eq3_value(self):
        assert search_space_cardinality(SupernetConfig(), "paper") == 87_480

    def test_single_cell(self):
        assert search_space_cardinality(1, "paper") == 729
        assert search_space_cardinality(1, "top2") == 729

    def test_three_cells_top2(self):
        # 729 x C(2,2) x C(3,2)
        assert search_space_cardinality(3, "top2") == 729 * 3

    def test_six_cells_top2(self):
        assert search_space_cardinality(6, "top2") == 729 * 3 * 6 * 10 * 15

    def test_unknown_convention(self):
        with pytest.raises(ValueError):
            search_space_cardinality(6, "other")
