import csv
import io
from pathlib import Path
from typing import List, Optional, Union

from serenade.pipeline.models.evaluation import EvalReport, PairRecord
from serenade.pipeline.utils.formats import atomic_write

RECORD_FIELDS = (
    "source_clip_id",
    "source_style",
    "target_style",
    "reference_clip_id",
    "mel_distance",
    "f0_rmse_cents",
    "f0_rmse_cents_unprocessed",
    "vuv_error",
    "output_nhr",
    "style_proxy_distance_to_ref",
    "style_proxy_distance_to_src",
    "error",
)
MISSING = "-"


class ReportFormatter:
    """
    Classe para formatar relatórios de avaliação: linhas TSV por par,
    bloco de resumo e exportação CSV.
    """

    @staticmethod
    def format_value(value) -> str:
        """
        Formata um valor de célula.

        Args:
            value: Número, texto ou None.

        Returns:
            Texto da célula; None vira "-".
        """
        if value is None:
            return MISSING
        if isinstance(value, float):
            return f"{value:.6f}"
        # tabulações e quebras de linha quebrariam o TSV
        return " ".join(str(value).split())

    @staticmethod
    def format_record(record: PairRecord) -> str:
        """Linha TSV de um par, na ordem de RECORD_FIELDS."""
        return "\t".join(ReportFormatter.format_value(getattr(record, f)) for f in RECORD_FIELDS)

    @staticmethod
    def format_summary(report: EvalReport) -> str:
        """
        Bloco de resumo: metadados e médias agregadas, uma linha por item,
        todas prefixadas por "#" para não se confundirem com os registros.
        """
        lines = ["# summary"]
        for key in sorted(report.metadata):
            lines.append(f"# {key}\t{report.metadata[key]}")
        for metric, summary in report.aggregates.items():
            lines.append(f"# mean.{metric}\t{summary.mean:.6f}\tcount={summary.count}")
        return "\n".join(lines)

    @staticmethod
    def format_report(report: EvalReport) -> str:
        """Relatório completo: cabeçalho, registros e resumo."""
        lines: List[str] = ["# " + "\t".join(RECORD_FIELDS)]
        lines.extend(ReportFormatter.format_record(r) for r in report.records)
        lines.append(ReportFormatter.format_summary(report))
        return "\n".join(lines) + "\n"

    @staticmethod
    def format_csv(report: EvalReport) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
        for record in report.records:
            writer.writerow(["" if getattr(record, f) is None else getattr(record, f) for f in RECORD_FIELDS])
        return buffer.getvalue()

    @staticmethod
    def write_report(path: Union[str, Path], report: EvalReport, csv_path: Optional[Union[str, Path]] = None) -> None:
        """
        Grava o relatório TSV e, opcionalmente, a exportação CSV.

        Args:
            path: Destino do relatório.
            report: Relatório de avaliação.
            csv_path: Destino do CSV, se desejado.
        """
        with atomic_write(path, "w") as handle:
            handle.write(ReportFormatter.format_report(report))
        if csv_path is not None:
            with atomic_write(csv_path, "w") as handle:
                handle.write(ReportFormatter.format_csv(report))
