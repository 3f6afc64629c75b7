import numpy as np
import pytest
import torch

from dlsr.complexity import genotype_complexity, supernet_complexity
from dlsr.genotype import (DerivedNetwork, Genotype, GenotypeError,
                           build_derived_network, extract_genotype,
                           load_genotype, parse, recent_connections,
                           saturate_arch_parameters, serialize,
                           transfer_supernet_weights)
from dlsr.search_space import (ArchParams, OP_NAMES, Supernet, SupernetConfig)


def random_arch(rng, num_cells):
    return ArchParams(alpha=rng.normal(size=(3 * num_cells, 9)),
                      beta=[rng.normal(size=j + 1) for j in range(num_cells)])


class TestExtraction:
    def test_argmax_selects_bumped_op(self, tiny_cfg):
        alpha = np.zeros((6, 9))
        alpha[0, OP_NAMES.index("sepconv3x3")] = 1.0
        arch = ArchParams(alpha=alpha, beta=[np.zeros(1), np.zeros(2)])
        genotype = extract_genotype(arch, tiny_cfg)
        assert genotype.cells[0][0] == "sepconv3x3"

    def test_top2_connections(self):
        cfg = SupernetConfig(channels=8, num_cells=3, scale=2)
        beta = [np.zeros(1), np.zeros(2), np.array([0.5, 2.0, 1.0])]
        arch = ArchParams(alpha=np.zeros((9, 9)), beta=beta)
        genotype = extract_genotype(arch, cfg)
        assert genotype.connections[2] == [1, 2]

    def test_single_predecessor_keeps_one(self, tiny_cfg):
        arch = ArchParams(alpha=np.zeros((6, 9)),
                          beta=[np.zeros(1), np.zeros(2)])
        genotype = extract_genotype(arch, tiny_cfg)
        assert genotype.connections[0] == [0]

    def test_ties_break_to_lowest_index(self, tiny_cfg):
        arch = ArchParams(alpha=np.zeros((6, 9)),
                          beta=[np.zeros(1), np.zeros(2)])
        genotype = extract_genotype(arch, tiny_cfg)
        assert all(triple == ("conv1x1",) * 3 for triple in genotype.cells)
        assert genotype.connections == [[0], [0, 1]]

    def test_shift_invariance_sweep(self):
        cfg = SupernetConfig(channels=8, num_cells=3, scale=2)
        rng = np.random.default_rng(11)
        for _ in range(25):
            arch = random_arch(rng, 3)
            base = extract_genotype(arch, cfg)
            shift = float(rng.normal() * 50)
            shifted = ArchParams(alpha=arch.alpha + shift,
                                 beta=[b + shift for b in arch.beta])
            assert extract_genotype(shifted, cfg) == base


class TestSerialization:
    def test_fixture_files_parse(self):
        for name in ("dlsr", "model2", "model3", "model4", "model5"):
            genotype = load_genotype(f"fixtures/{name}.json")
            genotype.validate()
            assert genotype.num_cells == 6 and genotype.channels == 48

    def test_fixture_models_match_published_triples(self):
        assert load_genotype("fixtures/dlsr.json").cells[0] == \
            ("conv1x1", "sepconv3x3", "sepconv7x7")
        assert load_genotype("fixtures/model2.json").cells[0] == \
            ("sepconv3x3", "sepconv3x3", "sepconv3x3")

    def test_roundtrip_byte_identity(self, tiny_cfg):
        rng = np.random.default_rng(0)
        genotype = extract_genotype(random_arch(rng, 2), tiny_cfg)
        text = serialize(genotype)
        assert serialize(parse(text)) == text

    def test_unknown_op_name_reported(self):
        text = serialize(load_genotype("fixtures/dlsr.json")).replace(
            "conv1x1", "conv2x2")
        with pytest.raises(GenotypeError, match="conv2x2"):
            parse(text)

    def test_missing_field_reported(self):
        with pytest.raises(GenotypeError, match="scale"):
            parse('{"cells": [], "connections": [], "channels": 8, "num_cells": 0}')

    def test_malformed_json_reported(self):
        with pytest.raises(GenotypeError, match="malformed"):
            parse("{not json")

    def test_extraction_serialize_parse_fixed_point_many_draws(self):
        cfg = SupernetConfig(channels=8, num_cells=4, scale=2)
        rng = np.random.default_rng(42)
        for i in range(1000):
            genotype = extract_genotype(random_arch(rng, 4), cfg)
            again = parse(serialize(genotype))
            assert again == genotype
            if i % 250 == 0:
                build_derived_network(again, cfg)


class TestGenotypeValidation:
    def test_wrong_connection_count(self):
        with pytest.raises(GenotypeError):
            Genotype(cells=[("conv1x1",) * 3] * 2, connections=[[0], [0]],
                     channels=8, num_cells=2, scale=2).validate()

    def test_unsorted_connections(self):
        with pytest.raises(GenotypeError):
            Genotype(cells=[("conv1x1",) * 3] * 2, connections=[[0], [1, 0]],
                     channels=8, num_cells=2, scale=2).validate()

    def test_out_of_range_predecessor(self):
        with pytest.raises(GenotypeError):
            Genotype(cells=[("conv1x1",) * 3] * 2, connections=[[0], [1, 2]],
                     channels=8, num_cells=2, scale=2).validate()


class TestDerivedNetwork:
    def test_param_count_equals_complexity(self, tiny_cfg):
        rng = np.random.default_rng(1)
        genotype = extract_genotype(random_arch(rng, 2), tiny_cfg)
        net = build_derived_network(genotype, tiny_cfg)
        report = genotype_complexity(genotype, tiny_cfg, (32, 32))
        assert sum(p.numel() for p in net.parameters()) == report.total_params

    def test_forward_shape_contract(self, tiny_cfg):
        genotype = extract_genotype(
            ArchParams(alpha=np.zeros((6, 9)), beta=[np.zeros(1), np.zeros(2)]),
            tiny_cfg)
        net = build_derived_network(genotype, tiny_cfg)
        assert net(torch.rand(1, 3, 16, 16)).shape == (1, 3, 32, 32)

    def test_no_architecture_parameters(self, tiny_cfg):
        genotype = extract_genotype(
            ArchParams(alpha=np.zeros((6, 9)), beta=[np.zeros(1), np.zeros(2)]),
            tiny_cfg)
        net = build_derived_network(genotype, tiny_cfg)
        names = [n for n, _ in net.named_parameters()]
        assert not any("alpha" in n or "beta" in n for n in names)

    def test_non_rgb_rejected(self, tiny_cfg):
        genotype = extract_genotype(
            ArchParams(alpha=np.zeros((6, 9)), beta=[np.zeros(1), np.zeros(2)]),
            tiny_cfg)
        net = build_derived_network(genotype, tiny_cfg)
        with pytest.raises(ValueError):
            net(torch.rand(1, 1, 16, 16))

    def test_derived_multiadds_not_above_supernet(self, tiny_cfg):
        rng = np.random.default_rng(2)
        genotype = extract_genotype(random_arch(rng, 2), tiny_cfg)
        derived = genotype_complexity(genotype, tiny_cfg, (32, 32))
        assert derived.total_multiadds <= \
            supernet_complexity(tiny_cfg, (32, 32)).total_multiadds

    def test_config_mismatch_rejected(self, tiny_cfg):
        genotype = Genotype(cells=[("conv1x1",) * 3] * 2,
                            connections=recent_connections(2),
                            channels=16, num_cells=2, scale=2)
        with pytest.raises(GenotypeError):
            DerivedNetwork(genotype, tiny_cfg)


class TestSaturationEquivalence:
    @pytest.mark.parametrize("seed", [0, 1])
    def test_saturated_supernet_matches_derived(self, tiny_cfg, seed):
        torch.manual_seed(seed)
        rng = np.random.default_rng(seed)
        supernet = Supernet(tiny_cfg)
        genotype = extract_genotype(random_arch(rng, 2), tiny_cfg)
        saturate_arch_parameters(supernet, genotype)
        derived = build_derived_network(genotype, tiny_cfg)
        transfer_supernet_weights(supernet, derived)
        x = torch.rand(2, 3, 12, 12)
        with torch.no_grad():
            diff = (supernet(x) - derived(x)).abs().max().item()
        assert diff < 1e-5
