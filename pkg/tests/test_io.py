import json

import numpy as np
import pytest

from acnet.errors import ConfigError, IntegrityError, ParseError
from acnet.io import (load_manifest, parse_manifest, read_matrix, save_manifest, write_matrix)
from acnet.synth import SynthConfig, synth_generate


def minimal_doc():
    return {
        "version": 1,
        "embedding_dim": 2,
        "videos": [{"id": "a", "duration": 10.0, "n_frames": 4, "features": "a.bin"}],
        "annotations": [{"id": "a_q0", "video_id": "a", "interval": [1.0, 4.0],
                         "query": {"file": "q.bin", "row": 0}}],
        "captions": [],
    }


class TestMatrix:
    def test_round_trip(self, tmp_path):
        m = np.random.default_rng(0).normal(size=(3, 4))
        write_matrix(tmp_path / "m.bin", m)
        np.testing.assert_array_equal(read_matrix(tmp_path / "m.bin"), m)

    def test_layout(self, tmp_path):
        write_matrix(tmp_path / "m.bin", [[1.0, 2.0]])
        raw = (tmp_path / "m.bin").read_bytes()
        assert raw[:4] == b"ACMX" and len(raw) == 8 + 2 * 8 + 2 * 8
        assert np.frombuffer(raw[-16:], "<f8").tolist() == [1.0, 2.0]

    def test_truncated(self, tmp_path):
        write_matrix(tmp_path / "m.bin", np.ones((2, 2)))
        (tmp_path / "m.bin").write_bytes((tmp_path / "m.bin").read_bytes()[:-3])
        with pytest.raises(ParseError):
            read_matrix(tmp_path / "m.bin")


class TestManifest:
    def test_minimal(self):
        m = parse_manifest(minimal_doc())
        assert len(m.videos) == 1 and m.annotations[0].interval == (1.0, 4.0)

    def test_interval_beyond_duration(self):
        doc = minimal_doc()
        doc["annotations"][0]["interval"] = [1.0, 11.0]
        with pytest.raises(IntegrityError):
            parse_manifest(doc)

    def test_unknown_video(self):
        doc = minimal_doc()
        doc["annotations"][0]["video_id"] = "b"
        with pytest.raises(IntegrityError):
            parse_manifest(doc)

    def test_missing_file(self, tmp_path):
        (tmp_path / "manifest.json").write_text(json.dumps(minimal_doc()))
        with pytest.raises(IntegrityError):
            load_manifest(tmp_path)

    @pytest.mark.parametrize("edit,pointer", [
        (lambda d: d["videos"][0].pop("duration"), "/videos/0"),
        (lambda d: d["annotations"][0].__setitem__("interval", [3.0, 2.0]), "/annotations/0/interval"),
        (lambda d: d["annotations"][0]["query"].__setitem__("row", "x"), "/annotations/0/query/row"),
        (lambda d: d.__setitem__("version", 7), "/version"),
    ])
    def test_schema_errors_carry_pointers(self, edit, pointer):
        doc = minimal_doc()
        edit(doc)
        with pytest.raises(ParseError) as err:
            parse_manifest(doc)
        assert err.value.location == pointer

    def test_bad_json(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{")
        with pytest.raises(ParseError):
            load_manifest(tmp_path)

    def test_round_trip(self, tmp_path):
        m = synth_generate(SynthConfig(n_videos=3), tmp_path)
        save_manifest(tmp_path / "copy.json", m)
        again = load_manifest(tmp_path / "copy.json")
        assert again.to_json() == m.to_json()
        assert again.videos == m.videos and again.captions == m.captions


class TestSynth:
    def test_noiseless_limit(self, tmp_path):
        cfg = SynthConfig(n_videos=2, jitter=0.0, noise=0.0, annotated_fraction=1.0)
        m = synth_generate(cfg, tmp_path)
        assert all(not c.candidates for c in m.captions)
        queries = read_matrix(tmp_path / "queries.bin")
        for v in m.videos:
            frames = read_matrix(tmp_path / v.features)
            times = (np.arange(v.n_frames) + 0.5) * v.duration / v.n_frames
            covered = np.zeros(v.n_frames, dtype=bool)
            for a in (a for a in m.annotations if a.video_id == v.id):
                inside = (times >= a.interval[0]) & (times < a.interval[1])
                covered |= inside
                np.testing.assert_array_equal(frames[inside], np.repeat(queries[a.query.row][None], inside.sum(), 0))
            assert np.all(frames[~covered] == 0)

    def test_same_seed_same_bytes(self, tmp_path):
        synth_generate(SynthConfig(n_videos=3, seed=5), tmp_path / "a")
        synth_generate(SynthConfig(n_videos=3, seed=5), tmp_path / "b")
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert files
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_counts(self):
        m = synth_generate(SynthConfig(n_videos=5, events_per_video=4, annotated_fraction=0.5))
        for v in m.videos:
            assert sum(a.video_id == v.id for a in m.annotations) == 2
        assert all(len(c.candidates) == 2 for c in m.captions)

    def test_output_validates(self, tmp_path):
        synth_generate(SynthConfig(n_videos=4, jitter=5.0, seed=3), tmp_path)
        load_manifest(tmp_path)

    def test_confidence_ranges(self):
        m = synth_generate(SynthConfig(n_videos=20, jitter=4.0, seed=1))
        for c in m.captions:
            for e in c.candidates:
                assert 0 < e.proposal_conf <= 1 and 0.85 <= e.sentence_conf <= 1

    def test_jitter_lowers_proposal_confidence(self):
        exact = synth_generate(SynthConfig(n_videos=4, jitter=0.0))
        assert all(e.proposal_conf == 1.0 for c in exact.captions for e in c.candidates)
        rough = synth_generate(SynthConfig(n_videos=4, jitter=4.0))
        assert all(e.proposal_conf < 1.0 for c in rough.captions for e in c.candidates)

    def test_unplaceable(self):
        with pytest.raises(ConfigError):
            SynthConfig(events_per_video=9, grid=16, min_event_slots=2).validate()
