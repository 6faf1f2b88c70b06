import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twinqe import io
from twinqe import simulator as sim
from twinqe.errors import ConfigError, CorruptRecordError

EXAMPLE = io.example_config_text()


def record(n, seed=0, p=(0.3, 0.6)):
    rng = np.random.default_rng(seed)
    cs = (rng.random(n) < p[0]).astype(np.uint8)
    ci = (rng.random(n) < p[1]).astype(np.uint8)
    return io.RecordFile(io.RecordHeader("ab" * 32, 2**64 - 1, n, stream=5), cs, ci)


class TestConfig:
    def test_example_loads(self):
        cfg = io.load_config(EXAMPLE)
        assert cfg.idler_channel.efficiency == pytest.approx(0.257)
        assert cfg.source.mean_pairs_per_pulse == 0.0985
        assert cfg.estimation.window_factor == 1.0
        assert cfg.run.seed == 42

    def test_range_error_names_key(self):
        text = EXAMPLE.replace("transmission = 1.0", "transmission = 1.2", 1)
        with pytest.raises(ConfigError) as exc:
            io.load_config(text)
        assert "signal_channel.transmission" in str(exc.value)
        assert "line" in exc.value.errors[0][0]

    def test_missing_section(self):
        head, _, tail = EXAMPLE.partition("[run]")
        text = head + tail.partition("[estimation]")[1] + tail.partition("[estimation]")[2]
        with pytest.raises(ConfigError) as exc:
            io.load_config(text)
        assert any("missing section [run]" in m for _, m in exc.value.errors)

    def test_collects_all_errors(self):
        text = (
            EXAMPLE.replace("transmission = 1.0", "transmission = 1.2", 1)
            .replace("detector_efficiency = 0.257", "detector_efficiency = -1", 1)
            .replace("seed = 42", "seed = 42\ncolour = blue")
            .replace("workers = 1", "workers = many")
        )
        with pytest.raises(ConfigError) as exc:
            io.load_config(text)
        locs = [loc for loc, _ in exc.value.errors]
        assert len(locs) == 4
        assert any(l.startswith("run.colour") for l in locs)
        assert any(l.startswith("run.workers") for l in locs)
        assert any(l.startswith("signal_channel.detector_efficiency") for l in locs)

    def test_unknown_section_and_missing_key(self):
        text = EXAMPLE.replace("mean_pairs_per_pulse = 0.0985", "") + "\n[extra]\na = 1\n"
        with pytest.raises(ConfigError) as exc:
            io.load_config(text)
        msgs = " ".join(f"{l} {m}" for l, m in exc.value.errors)
        assert "unknown section [extra]" in msgs and "source.mean_pairs_per_pulse" in msgs

    def test_parse_error_position(self):
        with pytest.raises(ConfigError) as exc:
            io.load_config("[source]\nmean_pairs_per_pulse = 1\n  [run\nthis line is junk\n")
        assert exc.value.errors[0][0].startswith("line ")
        assert "column" in exc.value.errors[0][0]
        with pytest.raises(ConfigError):
            io.load_config("[run]\nn_pulses = 1\nn_pulses = 2\n")

    def test_scientific_integers(self):
        cfg = io.load_config(EXAMPLE.replace("n_pulses = 10000000", "n_pulses = 1e7"))
        assert cfg.run.n_pulses == 10**7 and isinstance(cfg.run.n_pulses, int)
        with pytest.raises(ConfigError):
            io.load_config(EXAMPLE.replace("n_pulses = 10000000", "n_pulses = 1.5"))

    def test_serialize_fixpoint(self):
        cfg = io.load_config(EXAMPLE)
        text = io.serialize_config(cfg)
        assert io.load_config(text) == cfg
        assert io.serialize_config(io.load_config(text)) == text

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_hash_detects_single_field_change(self, data):
        cfg = io.load_config(EXAMPLE)
        section = data.draw(st.sampled_from(["source", "signal_channel", "idler_channel", "run", "estimation"]))
        obj = getattr(cfg, section)
        names = [f.name for f in dataclasses.fields(obj) if f.name not in ("batch_size", "workers")]
        name = data.draw(st.sampled_from(names))
        old = getattr(obj, name)
        if isinstance(old, str):
            new = {"idler": "signal", "signal": "idler", "auto": "on", "on": "off", "off": "auto"}[old]
        elif isinstance(old, int):
            new = old + 1
        else:
            new = old * 0.5 if old else 0.001
        changed = cfg.replace(**{section: dataclasses.replace(obj, **{name: new})})
        assert io.config_hash(changed) != io.config_hash(cfg)

    def test_hash_ignores_execution_layout(self):
        cfg = io.load_config(EXAMPLE)
        other = cfg.replace(run=dataclasses.replace(cfg.run, batch_size=7, workers=4))
        assert io.config_hash(other) == io.config_hash(cfg)


class TestRecords:
    @pytest.mark.parametrize("fmt", ["binary", "text"])
    @pytest.mark.parametrize("n", [0, 1, 3, 4, 5, 1001])
    def test_round_trip(self, tmp_path, fmt, n):
        rec = record(n)
        path = tmp_path / "r"
        io.write_records(path, rec, fmt)
        assert io.read_records(path) == rec

    def test_million_records(self, tmp_path):
        rec = record(1_000_000, seed=1)
        io.write_records(tmp_path / "r.bin", rec)
        assert (tmp_path / "r.bin").stat().st_size == io._HEADER.size + 250_000
        assert io.read_records(tmp_path / "r.bin") == rec

    def test_streaming_writer_matches_one_shot(self, tmp_path):
        rec = record(10_007, seed=2)
        io.write_records(tmp_path / "a.bin", rec)
        with io.RecordWriter(tmp_path / "b.bin", rec.header.config_hash, rec.header.seed, 5) as w:
            for start in range(0, 10_007, 333):
                w(start, rec.clicks_s[start : start + 333], rec.clicks_i[start : start + 333])
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_out_of_order_rejected(self, tmp_path):
        with io.RecordWriter(tmp_path / "x.bin", "00" * 32, 1) as w:
            with pytest.raises(ValueError):
                w(5, np.zeros(3, np.uint8), np.zeros(3, np.uint8))

    @pytest.mark.parametrize("cut", [1, 10, io._HEADER.size + 1])
    def test_truncated_binary(self, tmp_path, cut):
        path = tmp_path / "r.bin"
        io.write_records(path, record(1000))
        data = path.read_bytes()
        path.write_bytes(data[:-cut])
        with pytest.raises(CorruptRecordError):
            io.read_records(path)

    def test_flipped_bit(self, tmp_path):
        path = tmp_path / "r.bin"
        io.write_records(path, record(1000))
        data = bytearray(path.read_bytes())
        data[-7] ^= 0x10
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptRecordError, match="checksum"):
            io.read_records(path)

    def test_count_mismatch(self, tmp_path):
        path = tmp_path / "r.bin"
        io.write_records(path, record(1000))
        data = path.read_bytes() + b"\x00"
        path.write_bytes(data)
        with pytest.raises(CorruptRecordError):
            io.read_records(path)

    def test_truncated_text(self, tmp_path):
        path = tmp_path / "r.txt"
        io.write_records(path, record(100))
        lines = path.read_text().splitlines(keepends=True)
        path.write_text("".join(lines[:-1]))
        with pytest.raises(CorruptRecordError):
            io.read_records(path)
        path.write_text("".join(lines)[:-3])
        with pytest.raises(CorruptRecordError):
            io.read_records(path)

    def test_format_from_suffix(self, tmp_path):
        io.write_records(tmp_path / "r.txt", record(3))
        assert (tmp_path / "r.txt").read_text().startswith("# twinqe-records")
        io.write_records(tmp_path / "r.dat", record(3))
        assert (tmp_path / "r.dat").read_bytes()[:4] == io.MAGIC

    def test_garbage(self, tmp_path):
        (tmp_path / "g").write_bytes(b"\xff\xfe junk")
        with pytest.raises(CorruptRecordError):
            io.read_records(tmp_path / "g")

    def test_simulation_sink(self, tmp_path):
        cfg = io.load_config(EXAMPLE)
        run = dataclasses.replace(cfg.run, n_pulses=12_345, batch_size=1000)
        with io.RecordWriter(tmp_path / "s.bin", io.config_hash(cfg), run.seed) as w:
            t = sim.run(cfg.source, cfg.signal_channel, cfg.idler_channel, run, sink=w)
        assert io.read_records(tmp_path / "s.bin").tally() == t


class TestResults:
    rows = [
        io.ResultRow("transmission", 0.1, 0.1 / 3, 1e-3, "coincidence", None, None, 0.05, frozenset({"deadtime", "accidentals"})),
        io.ResultRow("transmission", 0.2, 0.0514, 2e-17, "difference_signal", 0.7, 1e-3, 0.05, frozenset()),
    ]

    def test_header_and_rows(self):
        text = io.format_results(self.rows[:1])
        lines = text.splitlines()
        assert lines[0] == ",".join(io.RESULT_COLUMNS)
        assert len(lines) == 2
        assert lines[1].endswith("accidentals;deadtime")

    def test_lossless_round_trip(self):
        assert io.parse_results(io.format_results(self.rows)) == self.rows

    def test_file_round_trip(self, tmp_path):
        io.write_results(self.rows, tmp_path / "t.csv")
        assert io.read_results(tmp_path / "t.csv") == self.rows

    def test_bad_header(self):
        with pytest.raises(ValueError):
            io.parse_results("a,b\n1,2\n")
