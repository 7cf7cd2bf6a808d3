"""Lattice level maps, background kernel, large-field sets, paved geometry."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polygas.errors import DomainError
from polygas.lattice import (
    BackgroundKernel,
    PavedSet,
    TorusSpec,
    background_kernel,
    block_average,
    block_mean,
    build_hierarchy,
    closure,
    large_field_admissible,
    large_field_set,
    paved_components,
    paved_geometry,
    paved_set,
    tree_length,
)
from polygas import kernel_io


def hier(L=3, N=2, n=1, ell=1, Lcal=3, d=2):
    return build_hierarchy(TorusSpec(L=L, N=N, n=n, ell=ell, Lcal=Lcal, d=d))


class TestTorusSpec:
    def test_valid(self):
        spec = TorusSpec(L=3, N=2, n=1, ell=3, Lcal=3, d=2)
        assert spec.side_fine == 9
        assert spec.side_block == 3
        assert spec.block_side == 3

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(L=2),
            dict(L=4),
            dict(N=0),
            dict(n=3, N=2),
            dict(ell=2),
            dict(ell=9, Lcal=9, N=2, n=1),  # Lcal=9 does not divide side 3
            dict(ell=3, Lcal=4),
        ],
    )
    def test_invalid(self, kwargs):
        base = dict(L=3, N=2, n=1, ell=1, Lcal=1, d=2)
        base.update(kwargs)
        with pytest.raises(DomainError):
            TorusSpec(**base)


class TestBlockMaps:
    def test_block_of_fine_1d_example(self):
        # fine side 9, cubes of side 3 centered at 0, 3, 6
        h = hier(d=1, Lcal=1)
        got = [int(h.block_of_fine(np.array([xi]))[0]) for xi in range(9)]
        assert got == [0, 0, 1, 1, 1, 2, 2, 2, 0]

    def test_blocks_partition_fine_lattice(self):
        h = hier(d=2)
        seen = set()
        for x in np.ndindex(*h.block_shape()):
            for site in h.fine_sites_of_block(np.array(x)):
                t = tuple(int(c) for c in site)
                assert t not in seen
                seen.add(t)
                assert tuple(h.block_of_fine(site)) == x
        assert len(seen) == h.side_fine**h.d

    def test_ell_paving_nests_in_coarse(self):
        h = build_hierarchy(TorusSpec(L=3, N=3, n=0, ell=3, Lcal=9, d=2))
        for k in h.all_coarse_cells():
            cell_sites = {tuple(s) for s in h.sites_of_coarse_cell(np.array(k))}
            covered = set()
            for m in h.all_ell_blocks():
                sites = {tuple(s) for s in h.sites_of_ell_block(np.array(m))}
                if sites & cell_sites:
                    # an ell-block meeting the cell must sit inside it
                    assert sites <= cell_sites
                    covered |= sites
            assert covered == cell_sites

    def test_block_average_constant_scaling(self):
        # constant c maps to c * L^n when d = 4
        h4 = hier(L=3, N=2, n=1, d=4, Lcal=1, ell=1)
        out = block_average(np.full(h4.fine_shape(), 2.0), h4)
        assert np.allclose(out, 2.0 * 3)

    def test_block_mean_constant(self):
        h = hier()
        out = block_mean(np.full(h.fine_shape(), 0.7), h)
        assert np.allclose(out, 0.7)

    def test_block_sum_agrees_with_bruteforce(self):
        h = hier(d=2)
        rng = np.random.default_rng(7)
        psi = rng.normal(size=h.fine_shape())
        means = block_mean(psi, h)
        for x in np.ndindex(*h.block_shape()):
            sites = h.fine_sites_of_block(np.array(x))
            expect = psi[tuple(sites.T)].mean()
            assert abs(means[x] - expect) < 1e-12

    def test_n_zero_maps_are_identity(self):
        h = hier(n=0, N=1, Lcal=3, ell=1)
        psi = np.arange(9.0).reshape(3, 3)
        assert np.array_equal(block_average(psi, h), psi)
        assert np.array_equal(block_mean(psi, h), psi)


class TestBackgroundKernel:
    def test_row_sums_and_duals_small(self):
        K = background_kernel(hier())
        assert K.row_sum_residual() < 1e-12
        assert K.dual_residual() < 1e-12

    def test_row_sums_and_duals_d4(self):
        K = background_kernel(hier(L=3, N=2, n=1, d=4, Lcal=1))
        assert K.row_sum_residual() < 1e-12
        assert K.dual_residual() < 1e-12

    def test_cube_average_inverts_extension(self):
        h = hier()
        K = background_kernel(h)
        rng = np.random.default_rng(3)
        phi = rng.normal(size=h.block_shape())
        assert np.max(np.abs(block_mean(K.apply(phi), h) - phi)) < 1e-12

    def test_scaled_average_generalized_identity(self):
        # block_average after extension multiplies by L^(n(d-2)/2)
        h = hier(L=3, N=2, n=1, d=4, Lcal=1)
        K = background_kernel(h)
        rng = np.random.default_rng(4)
        phi = rng.normal(size=h.block_shape())
        out = block_average(K.apply(phi), h)
        assert np.max(np.abs(out - 3.0 * phi)) < 1e-11

    def test_translation_covariance(self):
        h = hier()
        K = background_kernel(h)
        x = np.array([1, 2])
        shifted = np.roll(
            K.column(np.array([0, 0])),
            (h.block_side * 1, h.block_side * 2),
            axis=(0, 1),
        )
        assert np.array_equal(K.column(x), shifted)

    def test_apply_matches_dense_matrix(self):
        h = hier()
        K = background_kernel(h)
        M = K.matrix()
        rng = np.random.default_rng(5)
        phi = rng.normal(size=h.block_shape())
        out = K.apply(phi)
        assert np.max(np.abs(out.ravel() - M @ phi.ravel())) < 1e-12

    def test_exponential_decay(self):
        K = background_kernel(hier(L=3, N=3, n=1, d=2, ell=3, Lcal=9))
        rate, _ = K.decay_fit()
        assert rate > 0.5

    def test_minimum_energy_among_constrained_fields(self):
        # the extension minimizes the gradient-plus-zero-mode energy among
        # all fields with the same cube averages; perturbing inside the
        # constraint manifold can only increase energy
        h = hier()
        K = background_kernel(h)
        rng = np.random.default_rng(6)
        phi = rng.normal(size=h.block_shape())
        psi = K.apply(phi)

        def energy(f):
            e = 0.0
            for ax in range(h.d):
                diff = f - np.roll(f, 1, axis=ax)
                e += 0.5 * np.sum(diff**2)
            e += 0.5 * f.sum() ** 2 / f.size
            return e

        e0 = energy(psi)
        for _ in range(10):
            z = rng.normal(size=h.fine_shape())
            z -= K.apply(block_mean(z, h))  # project onto zero cube averages
            assert np.max(np.abs(block_mean(z, h))) < 1e-10
            assert energy(psi + 0.1 * z) >= e0 - 1e-10

    def test_n_zero_kernel_is_identity(self):
        h = hier(n=0, N=1, Lcal=3)
        K = background_kernel(h)
        psi = np.arange(9.0).reshape(3, 3)
        assert np.max(np.abs(K.apply(psi) - psi)) == 0.0


class TestLargeFieldSet:
    def test_zero_field_empty(self):
        h = hier(ell=1)
        K = background_kernel(h)
        D = large_field_set(np.zeros(h.block_shape()), K, 1.0, 0.3)
        assert D.blocks == frozenset()

    def test_uniform_violation_fills_torus(self):
        h = hier(ell=1)
        K = background_kernel(h)
        D = large_field_set(np.full(h.block_shape(), 2.0), K, 1.0, 0.3)
        assert len(D.blocks) == len(h.all_ell_blocks())

    def test_result_is_admissible(self):
        h = hier(ell=1)
        K = background_kernel(h)
        rng = np.random.default_rng(11)
        for _ in range(5):
            phi = rng.normal(size=h.block_shape()) * 1.5
            D = large_field_set(phi, K, 1.0, 1.0)
            u = np.abs(K.apply(phi))
            assert large_field_admissible(u, D, h, 1.0, 1.0)

    def test_exhaustive_minimality_on_tiny_torus(self):
        h = hier(ell=1)  # 3x3 paving, 512 subsets
        K = background_kernel(h)
        all_blocks = h.all_ell_blocks()
        rng = np.random.default_rng(12)
        for trial in range(4):
            phi = rng.normal(size=h.block_shape()) * 1.2
            D = large_field_set(phi, K, 1.0, 2.0)
            u = np.abs(K.apply(phi))
            best = None
            for r in range(len(all_blocks) + 1):
                found = False
                for combo in itertools.combinations(all_blocks, r):
                    S = PavedSet(frozenset(combo), 1, h.side_block, h.d)
                    if large_field_admissible(u, S, h, 1.0, 2.0):
                        best = r
                        found = True
                        break
                if found:
                    break
            assert best is not None
            assert len(D.blocks) == best

    def test_removing_any_block_breaks_admissibility(self):
        h = hier(ell=1)
        K = background_kernel(h)
        phi = np.zeros(h.block_shape())
        phi[1, 1] = 4.0
        D = large_field_set(phi, K, 1.0, 2.0)
        assert 0 < len(D.blocks) < 9
        u = np.abs(K.apply(phi))
        for b in D.blocks:
            smaller = PavedSet(D.blocks - {b}, D.ell, D.torus_side, D.d)
            assert not large_field_admissible(u, smaller, h, 1.0, 2.0)

    def test_scaling_up_field_grows_region(self):
        h = hier(ell=1)
        K = background_kernel(h)
        rng = np.random.default_rng(13)
        for _ in range(5):
            phi = rng.normal(size=h.block_shape())
            D1 = large_field_set(phi, K, 1.0, 2.0)
            D2 = large_field_set(2.5 * phi, K, 1.0, 2.0)
            assert D1.blocks <= D2.blocks

    def test_bad_threshold(self):
        h = hier(ell=1)
        K = background_kernel(h)
        with pytest.raises(DomainError):
            large_field_set(np.zeros(h.block_shape()), K, -1.0, 0.3)


def big_paving():
    # block torus of side 27 paved by ell = 3: a 9 x 9 block grid
    return build_hierarchy(TorusSpec(L=3, N=3, n=0, ell=3, Lcal=9, d=2))


class TestPavedGeometry:
    def test_single_block(self):
        h = big_paving()
        X = paved_set([(4, 4)], h)
        geo = paved_geometry(X)
        assert geo["count"] == 1
        assert geo["tree_length"] == 0.0
        assert geo["closure"].count == 5

    def test_adjacent_pair_length(self):
        h = big_paving()
        assert tree_length(paved_set([(0, 0), (0, 1)], h)) == pytest.approx(3.0)

    def test_l_shape_length(self):
        h = big_paving()
        X = paved_set([(0, 0), (0, 1), (1, 1), (2, 1)], h)
        assert tree_length(X) == pytest.approx(9.0)

    def test_wraparound_distance(self):
        h = big_paving()
        # blocks 0 and 8 are adjacent through the torus seam
        assert tree_length(paved_set([(0, 0), (8, 0)], h)) == pytest.approx(3.0)

    def test_mst_against_spanning_tree_enumeration(self):
        h = big_paving()
        rng = np.random.default_rng(21)
        all_idx = list(np.ndindex(9, 9))
        for _ in range(6):
            picks = rng.choice(len(all_idx), size=5, replace=False)
            blocks = [all_idx[i] for i in picks]
            X = paved_set(blocks, h)
            centers = X.centers()
            k = len(blocks)
            edges = []
            for i in range(k):
                for j in range(i + 1, k):
                    delta = centers[i] - centers[j]
                    delta = (delta + h.side_block / 2) % h.side_block - h.side_block / 2
                    edges.append((i, j, float(np.hypot(*delta))))
            best = np.inf
            for combo in itertools.combinations(edges, k - 1):
                parent = list(range(k))

                def find(a):
                    while parent[a] != a:
                        parent[a] = parent[parent[a]]
                        a = parent[a]
                    return a

                ok = True
                for i, j, _ in combo:
                    ri, rj = find(i), find(j)
                    if ri == rj:
                        ok = False
                        break
                    parent[ri] = rj
                if ok:
                    best = min(best, sum(w for _, _, w in combo))
            assert tree_length(X) == pytest.approx(best, rel=1e-12)

    def test_closure_excludes_diagonals(self):
        h = big_paving()
        cl = closure(paved_set([(4, 4)], h))
        assert (5, 5) not in cl.blocks
        assert (5, 4) in cl.blocks and (4, 5) in cl.blocks

    def test_closure_on_full_paving_is_identity(self):
        h = hier(ell=1)
        X = paved_set(h.all_ell_blocks(), h)
        assert closure(X).blocks == X.blocks

    def test_components(self):
        h = big_paving()
        X = paved_set([(0, 0), (0, 1), (5, 5), (8, 0)], h)
        comps = paved_components(X)
        sizes = sorted(c.count for c in comps)
        # (8,0) touches (0,0) through the seam
        assert sizes == [1, 3]

    @given(
        st.lists(
            st.tuples(st.integers(0, 8), st.integers(0, 8)),
            min_size=1,
            max_size=6,
            unique=True,
        ),
        st.tuples(st.integers(0, 8), st.integers(0, 8)),
    )
    @settings(max_examples=40, deadline=None)
    def test_translation_invariance(self, blocks, shift):
        h = big_paving()
        X = paved_set(blocks, h)
        Y = X.translate((3 * shift[0], 3 * shift[1]))
        # shifts must respect the paving, so move by whole blocks
        Y = PavedSet(
            frozenset(
                tuple((b[i] + shift[i]) % 9 for i in range(2)) for b in X.blocks
            ),
            X.ell,
            X.torus_side,
            X.d,
        )
        assert tree_length(Y) == pytest.approx(tree_length(X), abs=1e-9)
        assert closure(Y).count == closure(X).count
        assert len(paved_components(Y)) == len(paved_components(X))

    def test_component_tree_lengths_sum_below_total(self):
        h = big_paving()
        X = paved_set([(0, 0), (1, 0), (4, 4), (4, 5), (4, 6)], h)
        total = tree_length(X)
        parts = sum(tree_length(c) for c in paved_components(X))
        assert parts <= total + 1e-12


class TestKernelIO:
    def test_round_trip(self, tmp_path):
        h = hier()
        K = background_kernel(h)
        path = str(tmp_path / "kernel.pgkn")
        kernel_io.write_kernel(path, K.stencil)
        back = kernel_io.read_kernel(path)
        assert back.shape == K.stencil.shape
        assert np.array_equal(back, K.stencil)

    def test_header_layout(self, tmp_path):
        path = str(tmp_path / "k.pgkn")
        kernel_io.write_kernel(path, np.arange(6.0).reshape(2, 3))
        raw = open(path, "rb").read()
        assert raw[:4] == b"PGKN"
        assert len(raw) == 64 + 6 * 8

    def test_rejects_corrupt(self, tmp_path):
        path = str(tmp_path / "bad.pgkn")
        with open(path, "wb") as f:
            f.write(b"NOPE" + b"\x00" * 60)
        with pytest.raises(DomainError):
            kernel_io.read_kernel(path)

    def test_rejects_truncated_payload(self, tmp_path):
        path = str(tmp_path / "k.pgkn")
        kernel_io.write_kernel(path, np.arange(6.0).reshape(2, 3))
        raw = open(path, "rb").read()
        with open(path, "wb") as f:
            f.write(raw[:-8])
        with pytest.raises(DomainError):
            kernel_io.read_kernel(path)
