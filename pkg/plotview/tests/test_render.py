import json
import math
from pathlib import Path

import numpy as np
import pytest

from plotview import FigureSpec, SchemaError, load_record, render_panels
from plotview.render import main

DATA = Path(__file__).parent / "data"


def synthetic_record(path: Path, n=64, m=0):
    t = np.arange(n) * 2 * math.pi / n
    eta = np.exp(1j * 5 * np.cos(t)) * (1.5 + 0.3 * np.sin(t))
    phi = np.cos(t)
    slow = eta * np.exp(-1j * 5 * phi)
    with open(path, "w") as fh:
        fh.write("t,re_eta,im_eta,phi,re_eta_slow,im_eta_slow,region\n")
        for i in range(n):
            region = "illuminated" if math.cos(t[i]) < 0 else "shadow"
            fh.write(f"{t[i]:.17g},{eta[i].real:.17g},{eta[i].imag:.17g},"
                     f"{phi[i]:.17g},{slow[i].real:.17g},{slow[i].imag:.17g},"
                     f"{region}\n")
    return path


class TestSchema:
    def test_golden_round_trip(self):
        # the checked-in golden file is a verbatim solver record; the parser
        # must keep accepting it as long as the schema contract stands
        rec = load_record(DATA / "golden_record.csv")
        assert len(rec["t"]) == 100
        assert set(rec) == {"t", "re_eta", "im_eta", "phi",
                            "re_eta_slow", "im_eta_slow", "region"}
        # demodulation identity encoded in the columns
        eta = rec["re_eta"] + 1j * rec["im_eta"]
        slow = rec["re_eta_slow"] + 1j * rec["im_eta_slow"]
        k = 20.0
        assert np.max(np.abs(np.exp(1j * k * rec["phi"]) * slow - eta)) < 1e-12
        assert set(rec["region"]) <= {"illuminated", "shadow", "near_boundary"}

    def test_header_mismatch_reports_file_and_line(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,nope\n0,1\n")
        with pytest.raises(SchemaError, match=r"bad\.csv:1"):
            load_record(bad)

    def test_bad_field_count(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,re_eta,im_eta,phi,re_eta_slow,im_eta_slow,region\n"
                       "0,1,2\n")
        with pytest.raises(SchemaError, match=r"bad\.csv:2"):
            load_record(bad)

    def test_non_numeric_field(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,re_eta,im_eta,phi,re_eta_slow,im_eta_slow,region\n"
                       "0,1,2,x,4,5,shadow\n")
        with pytest.raises(SchemaError, match=r"bad\.csv:2"):
            load_record(bad)

    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError):
            load_record(tmp_path / "nope.csv")


class TestRendering:
    def test_five_by_three_panel(self, tmp_path):
        files = [synthetic_record(tmp_path / f"rec{i}.csv", m=i)
                 for i in range(3)]
        spec = FigureSpec(panels=[(f, f"m = {2 * i}") for i, f in enumerate(files)],
                          out_path=tmp_path / "fig.png")
        out = render_panels(spec)
        assert out.exists()
        assert out.stat().st_size > 10_000

    def test_single_column(self, tmp_path):
        f = synthetic_record(tmp_path / "rec.csv")
        spec = FigureSpec(panels=[(f, "m = 0")], out_path=tmp_path / "fig.png")
        assert render_panels(spec).exists()

    def test_spec_json_round_trip(self, tmp_path):
        f = synthetic_record(tmp_path / "rec.csv")
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps({
            "panels": [{"file": str(f), "label": "m = 0"}],
            "layout": [5, 1],
            "out": str(tmp_path / "fig.png"),
        }))
        spec = FigureSpec.from_json(spec_path)
        assert spec.panels[0][1] == "m = 0"
        assert render_panels(spec).exists()

    def test_layout_mismatch_rejected(self, tmp_path):
        f = synthetic_record(tmp_path / "rec.csv")
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps({
            "panels": [{"file": str(f)}],
            "layout": [5, 4],
            "out": str(tmp_path / "fig.png"),
        }))
        with pytest.raises(SchemaError):
            FigureSpec.from_json(spec_path)


class TestCli:
    def test_empty_spec_is_usage_error(self, tmp_path):
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps({"panels": [], "out": "x.png"}))
        assert main(["--spec", str(spec_path)]) == 2
        assert not (tmp_path / "x.png").exists()

    def test_render_via_cli(self, tmp_path):
        f = synthetic_record(tmp_path / "rec.csv")
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps({
            "panels": [{"file": str(f), "label": "m = 0"}],
            "out": str(tmp_path / "fig.png"),
        }))
        assert main(["--spec", str(spec_path)]) == 0
        assert (tmp_path / "fig.png").exists()

    def test_schema_error_via_cli(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,nope\n0,1\n")
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps({
            "panels": [{"file": str(bad)}],
            "out": str(tmp_path / "fig.png"),
        }))
        assert main(["--spec", str(spec_path)]) == 2
        assert not (tmp_path / "fig.png").exists()
