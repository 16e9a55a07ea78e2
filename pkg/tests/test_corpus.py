import struct

import numpy as np
import pytest

from analogylab.corpus import (
    CorpusSpec,
    SplitSpec,
    channel_means,
    exemplar_seed_for,
    generate_corpus,
    load_corpus,
    make_splits,
    preprocess,
    random_split_spec,
    render_image,
    save_corpus,
)
from analogylab.errors import BadMagicError, FormatError, TruncatedFileError, ValidationError, VersionError
from analogylab.quadruples import AnalogyType


class TestSpec:
    @pytest.mark.parametrize(
        "kw", [dict(num_categories=1), dict(num_properties=1), dict(exemplars_per_cell=0), dict(channels=1)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            CorpusSpec(**kw)

    def test_hue_rotation_split(self):
        assert CorpusSpec(num_properties=8).hue_count == 4
        assert CorpusSpec(num_properties=5).hue_count == 3
        assert CorpusSpec(num_properties=5, num_hue_properties=0).hue_count == 0


class TestRender:
    spec = CorpusSpec()

    def test_deterministic(self):
        a = render_image(self.spec, 3, 5, 42)
        b = render_image(self.spec, 3, 5, 42)
        assert a.pixels.tobytes() == b.pixels.tobytes()

    def test_jitter_changes_pixels_not_labels(self):
        a = render_image(self.spec, 3, 5, 1)
        b = render_image(self.spec, 3, 5, 2)
        assert not np.array_equal(a.pixels, b.pixels)
        assert (a.category_id, a.property_id) == (b.category_id, b.property_id)

    def test_pixel_range_over_many_renders(self):
        rng = np.random.default_rng(0)
        lo, hi = np.inf, -np.inf
        for _ in range(1000):
            c = int(rng.integers(self.spec.num_categories))
            p = int(rng.integers(self.spec.num_properties))
            img = render_image(self.spec, c, p, int(rng.integers(2**63))).pixels
            lo, hi = min(lo, img.min()), max(hi, img.max())
        assert lo >= 0.0 and hi <= 1.0

    def test_pixels_on_u8_grid(self):
        img = render_image(self.spec, 0, 0, 9).pixels
        np.testing.assert_array_equal(np.round(img * 255) / 255, img)

    @pytest.mark.parametrize("c,p", [(-1, 0), (12, 0), (0, 8), (0, -1)])
    def test_ids_out_of_range(self, c, p):
        with pytest.raises(ValidationError):
            render_image(self.spec, c, p, 0)

    def test_every_category_renders_every_property(self):
        for c in range(self.spec.num_categories):
            imgs = [render_image(self.spec, c, p, 0).pixels for p in range(self.spec.num_properties)]
            # every property produces a visibly different image of the same glyph
            for i in range(len(imgs)):
                for j in range(i + 1, len(imgs)):
                    assert np.abs(imgs[i] - imgs[j]).mean() > 0.005

    def test_rotation_and_hue_families(self):
        spec = CorpusSpec(num_properties=4, jitter_px=0, jitter_scale=0, noise=0)
        hue0 = render_image(spec, 0, 0, 0).pixels
        rot0 = render_image(spec, 0, 2, 0).pixels
        # rotation properties are grey: channels equal
        np.testing.assert_allclose(rot0[0], rot0[1])
        assert not np.allclose(hue0[0], hue0[1])


class TestGenerate:
    def test_count(self, default_corpus):
        assert len(default_corpus) == 576

    def test_deterministic(self, default_corpus):
        again = generate_corpus(CorpusSpec())
        assert again.pixels.tobytes() == default_corpus.pixels.tobytes()
        assert np.array_equal(again.render_seeds, default_corpus.render_seeds)

    def test_grid_complete(self, default_corpus):
        counts = np.zeros((12, 8), dtype=int)
        np.add.at(counts, (default_corpus.category, default_corpus.property), 1)
        assert (counts == 6).all()

    def test_indexing(self, default_corpus):
        i = default_corpus.index(5, 3, 2)
        img = default_corpus.image(i)
        assert (img.category_id, img.property_id, img.exemplar_id) == (5, 3, 2)
        assert img.render_seed == exemplar_seed_for(default_corpus.spec, 5, 3, 2)
        np.testing.assert_array_equal(img.pixels, render_image(default_corpus.spec, 5, 3, img.render_seed).pixels)

    def test_different_seed_differs(self, small_corpus):
        other = generate_corpus(CorpusSpec(num_categories=5, num_properties=4, exemplars_per_cell=3, seed=4))
        assert not np.array_equal(other.pixels, small_corpus.pixels)


class TestSplits:
    def test_unseen_categories(self, default_corpus):
        s = make_splits(default_corpus, SplitSpec(unseen_category_ids=frozenset({0, 7})))
        assert s.train.size == 480
        assert not np.isin(default_corpus.category[s.train], [0, 7]).any()
        assert set(default_corpus.category[s.unseen]) == {0, 7}

    def test_identity_split(self, default_corpus):
        s = make_splits(default_corpus, SplitSpec())
        np.testing.assert_array_equal(s.train, np.arange(576))
        assert s.unseen.size == 0 and not s.heldout_types

    def test_test_exemplars(self, default_splits, default_corpus):
        assert default_splits.train.size == 10 * 8 * 4
        assert default_splits.test.size == 10 * 8 * 2
        assert not set(default_splits.train) & set(default_splits.test)
        assert (default_corpus.exemplar[default_splits.test] >= 4).all()

    def test_random_split_spec(self, default_corpus):
        sp = random_split_spec(default_corpus.spec, 2, 6, seed=0)
        assert len(sp.unseen_category_ids) == 2 and len(sp.heldout_analogy_types) == 6
        for t in sp.heldout_analogy_types:
            assert t.c_i not in sp.unseen_category_ids and t.c_o not in sp.unseen_category_ids
            assert t.c_i != t.c_o and t.p_1 != t.p_2

    @pytest.mark.parametrize(
        "split",
        [
            SplitSpec(unseen_category_ids=frozenset({99})),
            SplitSpec(unseen_category_ids=frozenset(range(11))),
            SplitSpec(heldout_analogy_types=frozenset({AnalogyType(0, 1, 0, 9)})),
            SplitSpec(test_exemplars=6),
        ],
    )
    def test_inconsistent(self, default_corpus, split):
        with pytest.raises(ValidationError):
            make_splits(default_corpus, split)

    def test_channel_means_train_only(self, default_corpus, default_splits):
        m = channel_means(default_corpus, default_splits.train)
        np.testing.assert_allclose(m, default_corpus.pixels[default_splits.train].mean(axis=(0, 2, 3)))
        np.testing.assert_array_equal(default_splits.channel_means, m)
        x = preprocess(default_corpus.pixels[default_splits.train], m)
        np.testing.assert_allclose(x.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)


class TestCorpusFile:
    def test_round_trip(self, small_corpus, tmp_path):
        path = tmp_path / "c.vslc"
        save_corpus(small_corpus, path)
        loaded = load_corpus(path)
        assert loaded.same_content(small_corpus)
        assert loaded.pixels.tobytes() == small_corpus.pixels.tobytes()

    def test_layout(self, small_corpus, tmp_path):
        path = tmp_path / "c.vslc"
        save_corpus(small_corpus, path)
        raw = path.read_bytes()
        assert raw[:4] == b"VSLC"
        assert struct.unpack("<7I", raw[4:32]) == (1, 5, 4, 3, 24, 24, 3)
        assert struct.unpack("<Q", raw[32:40])[0] == 3
        per_image = 3 * 24 * 24 + 8
        assert len(raw) == 40 + 60 * per_image
        first = np.frombuffer(raw[40 : 40 + 3 * 24 * 24], dtype=np.uint8)
        np.testing.assert_array_equal(first / 255.0, small_corpus.pixels[0].ravel())
        seed0 = struct.unpack("<Q", raw[40 + 3 * 24 * 24 : 40 + per_image])[0]
        assert seed0 == small_corpus.render_seeds[0]

    def test_bad_magic(self, small_corpus, tmp_path):
        path = tmp_path / "c.vslc"
        save_corpus(small_corpus, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(BadMagicError):
            load_corpus(path)

    def test_newer_version(self, small_corpus, tmp_path):
        path = tmp_path / "c.vslc"
        save_corpus(small_corpus, path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 2)
        path.write_bytes(bytes(raw))
        with pytest.raises(VersionError):
            load_corpus(path)

    @pytest.mark.parametrize("cut", [2, 20, 100, 1])
    def test_truncated(self, small_corpus, tmp_path, cut):
        path = tmp_path / "c.vslc"
        save_corpus(small_corpus, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - cut] if cut != 2 else raw[:2])
        with pytest.raises(TruncatedFileError):
            load_corpus(path)

    def test_errors_are_distinct(self):
        assert len({BadMagicError, VersionError, TruncatedFileError}) == 3
        for e in (BadMagicError, VersionError, TruncatedFileError):
            assert issubclass(e, FormatError)
