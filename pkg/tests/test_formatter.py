import csv
import io

from serenade.pipeline.models.evaluation import EvalReport, MetricSummary, PairRecord
from serenade.pipeline.utils.formatter import RECORD_FIELDS, ReportFormatter

# Dados de exemplo para testes
SAMPLE_RECORDS = [
    PairRecord(
        source_clip_id="song001_clear",
        source_style="clear",
        target_style="breathy",
        reference_clip_id="song000_breathy",
        mel_distance=0.8125,
        f0_rmse_cents=35.5,
        vuv_error=0.02,
        output_nhr=0.4,
        style_proxy_distance_to_ref=0.1,
        style_proxy_distance_to_src=0.6,
    ),
    PairRecord(
        source_clip_id="song001_clear",
        source_style="clear",
        target_style="pressed",
        reference_clip_id="song000_pressed",
        error="nenhum quadro vozeado\tem comum",
    ),
]

SAMPLE_REPORT = EvalReport(
    records=SAMPLE_RECORDS,
    aggregates={"mel_distance": MetricSummary(mean=0.8125, count=1)},
    metadata={"pairs": "2", "expected_pairs": "2", "failed": "1"},
)


def test_format_value():
    """Testa a formatação de células."""
    assert ReportFormatter.format_value(None) == "-"
    assert ReportFormatter.format_value(0.5) == "0.500000"
    assert ReportFormatter.format_value("clear") == "clear"

    # Verificar que tabulações não quebram o TSV
    assert ReportFormatter.format_value("a\tb\nc") == "a b c"


def test_format_record():
    """Testa a linha TSV de um par."""
    line = ReportFormatter.format_record(SAMPLE_RECORDS[0])
    cells = line.split("\t")

    assert len(cells) == len(RECORD_FIELDS)
    assert cells[0] == "song001_clear"
    assert cells[RECORD_FIELDS.index("mel_distance")] == "0.812500"
    assert cells[RECORD_FIELDS.index("f0_rmse_cents_unprocessed")] == "-"
    assert cells[-1] == "-"


def test_format_summary():
    """Testa o bloco de resumo com prefixo #."""
    summary = ReportFormatter.format_summary(SAMPLE_REPORT)
    lines = summary.split("\n")

    assert all(line.startswith("#") for line in lines)
    assert "# pairs\t2" in lines
    assert "# mean.mel_distance\t0.812500\tcount=1" in lines


def test_format_report():
    """Testa o relatório completo."""
    text = ReportFormatter.format_report(SAMPLE_REPORT)
    records = [line for line in text.splitlines() if line and not line.startswith("#")]

    # Verificar cabeçalho, registros e falha
    assert text.startswith("# source_clip_id\t")
    assert len(records) == 2
    assert records[1].endswith("nenhum quadro vozeado em comum")
    assert text.endswith("\n")


def test_format_csv():
    """Testa a exportação CSV."""
    rows = list(csv.reader(io.StringIO(ReportFormatter.format_csv(SAMPLE_REPORT))))

    assert rows[0] == list(RECORD_FIELDS)
    assert len(rows) == 3
    assert rows[1][RECORD_FIELDS.index("mel_distance")] == "0.8125"
    assert rows[2][RECORD_FIELDS.index("mel_distance")] == ""


def test_write_report(tmp_path):
    """Testa a gravação do relatório e do CSV."""
    report_path = tmp_path / "report.tsv"
    csv_path = tmp_path / "report.csv"
    ReportFormatter.write_report(report_path, SAMPLE_REPORT, csv_path)

    assert report_path.read_text(encoding="utf-8") == ReportFormatter.format_report(SAMPLE_REPORT)
    assert csv_path.read_text(encoding="utf-8") == ReportFormatter.format_csv(SAMPLE_REPORT)
