"""
Report Export Service - NMSE charts and PDF results report

Renders one NMSE-vs-SNR chart per (train scene, test scene) pair from a
results CSV, and a PDF report that embeds the charts, the results table and
the SHA-256 of the CSV bytes so a report can be matched to its data.
"""

import csv
import io
import logging
from collections import defaultdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from pydantic import ValidationError
from reportlab.graphics import renderSVG
from reportlab.graphics.charts.legends import Legend
from reportlab.graphics.charts.lineplots import LinePlot
from reportlab.graphics.shapes import Drawing, Polygon, String
from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import PageBreak, Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from ..core.errors import ChannelDiffusionError
from ..core.seeding import hash_content
from ..schemas.experiments import RESULT_COLUMNS, ResultRecord


logger = logging.getLogger(__name__)

CHART_WIDTH = 460
CHART_HEIGHT = 280

METHOD_COLORS = {
    "dm": "#2563eb",
    "ls": "#dc2626",
    "lmmse": "#059669",
    "omp": "#d97706",
}


# =============================================================================
# EXCEPTIONS
# =============================================================================


class ResultsFormatError(ChannelDiffusionError):
    """Results CSV is missing, malformed, or has unexpected columns."""
    pass


# =============================================================================
# CSV
# =============================================================================


def read_results(csv_path: str | Path) -> list[ResultRecord]:
    """Parse a results CSV written by the experiment runner."""
    path = Path(csv_path)
    if not path.exists():
        raise ResultsFormatError(f"No results file at {path}")
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(header) != RESULT_COLUMNS:
            raise ResultsFormatError(f"{path} does not have the results header")
        records = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(RESULT_COLUMNS):
                raise ResultsFormatError(f"{path}:{line_no}: expected {len(RESULT_COLUMNS)} cells")
            try:
                records.append(ResultRecord(**dict(zip(RESULT_COLUMNS, row))))
            except ValidationError as e:
                raise ResultsFormatError(f"{path}:{line_no}: {e}") from e
    return records


def group_by_scene_pair(
    records: Sequence[ResultRecord],
) -> dict[tuple[str, str], dict[str, list[ResultRecord]]]:
    """(scene_train, scene_test) -> method -> records sorted by SNR."""
    groups: dict[tuple[str, str], dict[str, list[ResultRecord]]] = defaultdict(
        lambda: defaultdict(list)
    )
    for record in records:
        groups[(record.scene_train, record.scene_test)][record.method].append(record)
    for methods in groups.values():
        for rows in methods.values():
            rows.sort(key=lambda r: r.snr_db)
    return {pair: dict(methods) for pair, methods in sorted(groups.items())}


# =============================================================================
# CHARTS
# =============================================================================


def _axis_range(values: list[float], pad_fraction: float = 0.05) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    pad = (hi - lo) * pad_fraction or 1.0
    return lo - pad, hi + pad


def build_nmse_chart(
    by_method: dict[str, list[ResultRecord]],
    title: str = "",
    width: int = CHART_WIDTH,
    height: int = CHART_HEIGHT,
) -> Drawing:
    """
    NMSE (dB) vs SNR (dB), one line per method with a shaded 95% CI band.

    The LinePlot is reachable as drawing.plot; its axis ranges cover every
    point and band edge.
    """
    methods = sorted(by_method)
    drawing = Drawing(width, height)
    plot = LinePlot()
    plot.x, plot.y = 50, 45
    plot.width, plot.height = width - 160, height - 85
    plot.data = [[(r.snr_db, r.nmse_db_mean) for r in by_method[m]] for m in methods]

    xs = [r.snr_db for m in methods for r in by_method[m]]
    ys = [v for m in methods for r in by_method[m] for v in (
        r.nmse_db_mean - r.nmse_db_ci95, r.nmse_db_mean + r.nmse_db_ci95
    )]
    x_min, x_max = _axis_range(xs)
    y_min, y_max = _axis_range(ys)
    plot.xValueAxis.valueMin, plot.xValueAxis.valueMax = x_min, x_max
    plot.yValueAxis.valueMin, plot.yValueAxis.valueMax = y_min, y_max
    plot.xValueAxis.labelTextFormat = "%.0f"
    plot.yValueAxis.labelTextFormat = "%.0f"

    def to_px(x: float, y: float) -> tuple[float, float]:
        px = plot.x + (x - x_min) / (x_max - x_min) * plot.width
        py = plot.y + (y - y_min) / (y_max - y_min) * plot.height
        return px, py

    for i, method in enumerate(methods):
        color = colors.HexColor(METHOD_COLORS.get(method, "#6b7280"))
        plot.lines[i].strokeColor = color
        plot.lines[i].strokeWidth = 1.5
        rows = by_method[method]
        if any(r.nmse_db_ci95 > 0 for r in rows):
            upper = [to_px(r.snr_db, r.nmse_db_mean + r.nmse_db_ci95) for r in rows]
            lower = [to_px(r.snr_db, r.nmse_db_mean - r.nmse_db_ci95) for r in reversed(rows)]
            points = [c for p in upper + lower for c in p]
            band_color = colors.Color(color.red, color.green, color.blue, alpha=0.15)
            drawing.add(Polygon(points, fillColor=band_color, strokeColor=None))

    drawing.add(plot, name="plot")

    legend = Legend()
    legend.x, legend.y = width - 95, height - 50
    legend.alignment = "right"
    legend.colorNamePairs = [
        (colors.HexColor(METHOD_COLORS.get(m, "#6b7280")), m.upper()) for m in methods
    ]
    drawing.add(legend)
    drawing.add(String(width / 2, height - 18, title, textAnchor="middle", fontSize=11))
    drawing.add(String(plot.x + plot.width / 2, 12, "SNR (dB)", textAnchor="middle", fontSize=9))
    drawing.add(String(12, plot.y + plot.height / 2, "NMSE (dB)", fontSize=9))
    return drawing


# =============================================================================
# PDF GENERATOR
# =============================================================================


class ResultsPDFGenerator:
    """Results report: summary, one chart per scene pair, full table, hash."""

    def __init__(self, records: Sequence[ResultRecord], csv_hash: str, source: str):
        self.records = list(records)
        self.csv_hash = csv_hash
        self.source = source
        self.generated_at = datetime.now(timezone.utc)
        self.styles = self._create_styles()
        self.buffer = io.BytesIO()

    def _create_styles(self) -> dict[str, ParagraphStyle]:
        base_styles = getSampleStyleSheet()
        return {
            "title": ParagraphStyle(
                "Title",
                parent=base_styles["Title"],
                fontSize=22,
                spaceAfter=18,
                textColor=colors.HexColor("#1e293b"),
                alignment=TA_CENTER,
            ),
            "heading": ParagraphStyle(
                "Heading",
                parent=base_styles["Heading2"],
                fontSize=13,
                spaceBefore=12,
                spaceAfter=6,
                textColor=colors.HexColor("#0f172a"),
            ),
            "body": ParagraphStyle(
                "Body",
                parent=base_styles["Normal"],
                fontSize=9,
                spaceAfter=6,
                textColor=colors.HexColor("#334155"),
            ),
            "hash": ParagraphStyle(
                "Hash",
                parent=base_styles["Normal"],
                fontSize=8,
                fontName="Courier",
                textColor=colors.HexColor("#059669"),
                alignment=TA_CENTER,
                spaceBefore=8,
            ),
        }

    def generate(self) -> bytes:
        doc = SimpleDocTemplate(
            self.buffer,
            pagesize=letter,
            rightMargin=0.75 * inch,
            leftMargin=0.75 * inch,
            topMargin=1 * inch,
            bottomMargin=1 * inch,
        )
        story: list = [Paragraph("Channel Estimation Results", self.styles["title"])]
        story.extend(self._build_summary())

        for (train, test), by_method in group_by_scene_pair(self.records).items():
            story.append(Paragraph(f"Trained on {train}, tested on {test}", self.styles["heading"]))
            story.append(build_nmse_chart(by_method, title=f"{train} -> {test}"))
            story.append(Spacer(1, 0.2 * inch))

        story.append(PageBreak())
        story.extend(self._build_results_table())
        story.extend(self._build_verification_section())

        doc.build(story, onFirstPage=self._add_page_header, onLaterPages=self._add_page_header)
        pdf_bytes = self.buffer.getvalue()
        self.buffer.close()
        return pdf_bytes

    def _build_summary(self) -> list:
        experiments = sorted({r.experiment_id for r in self.records})
        methods = sorted({r.method for r in self.records})
        rows = [
            ["Source:", self.source],
            ["Experiments:", ", ".join(experiments)],
            ["Methods:", ", ".join(m.upper() for m in methods)],
            ["Cells:", str(len(self.records))],
        ]
        table = Table(rows, colWidths=[1.5 * inch, 5 * inch])
        table.setStyle(
            TableStyle([
                ("FONTNAME", (0, 0), (0, -1), "Helvetica-Bold"),
                ("FONTSIZE", (0, 0), (-1, -1), 9),
                ("TEXTCOLOR", (0, 0), (0, -1), colors.HexColor("#64748b")),
                ("ALIGN", (0, 0), (0, -1), "RIGHT"),
                ("BOTTOMPADDING", (0, 0), (-1, -1), 4),
            ])
        )
        return [table, Spacer(1, 0.25 * inch)]

    def _build_results_table(self) -> list:
        header = ["Method", "Train", "Test", "SNR", "NMSE dB", "CI95", "n"]
        rows = [header] + [
            [
                r.method.upper(),
                r.scene_train,
                r.scene_test,
                f"{r.snr_db:g}",
                f"{r.nmse_db_mean:.2f}",
                f"{r.nmse_db_ci95:.2f}",
                str(r.n_test),
            ]
            for r in self.records
        ]
        table = Table(rows, repeatRows=1)
        table.setStyle(
            TableStyle([
                ("BACKGROUND", (0, 0), (-1, 0), colors.HexColor("#f1f5f9")),
                ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
                ("FONTSIZE", (0, 0), (-1, -1), 8),
                ("GRID", (0, 0), (-1, -1), 0.5, colors.HexColor("#e2e8f0")),
                ("ALIGN", (3, 1), (-1, -1), "RIGHT"),
            ])
        )
        return [Paragraph("Results", self.styles["heading"]), table]

    def _build_verification_section(self) -> list:
        return [
            Spacer(1, 0.3 * inch),
            Paragraph("SHA-256 of the results CSV", self.styles["heading"]),
            Paragraph(self.csv_hash, self.styles["hash"]),
        ]

    def _add_page_header(self, canvas, doc):
        canvas.saveState()
        canvas.setFont("Helvetica", 8)
        canvas.setFillColor(colors.HexColor("#94a3b8"))
        canvas.drawString(0.75 * inch, letter[1] - 0.5 * inch, "Channel Diffusion Results")
        canvas.drawRightString(
            letter[0] - 0.75 * inch,
            letter[1] - 0.5 * inch,
            f"Generated: {self.generated_at.strftime('%Y-%m-%d')}",
        )
        canvas.setStrokeColor(colors.HexColor("#e2e8f0"))
        canvas.line(0.75 * inch, letter[1] - 0.6 * inch, letter[0] - 0.75 * inch, letter[1] - 0.6 * inch)
        canvas.drawCentredString(letter[0] / 2, 0.5 * inch, f"Page {doc.page}")
        canvas.restoreState()


# =============================================================================
# ENTRY POINT
# =============================================================================


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def plot_results(csv_path: str | Path, out_path: str | Path, pdf: bool = True) -> list[Path]:
    """
    Write one SVG chart per scene pair (and report.pdf) under out_path.

    Returns the written files; an empty results set writes nothing.
    """
    csv_path = Path(csv_path)
    records = read_results(csv_path)
    if not records:
        logger.info(f"No methods to plot in {csv_path}; nothing written")
        return []

    out_dir = Path(out_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for (train, test), by_method in group_by_scene_pair(records).items():
        drawing = build_nmse_chart(by_method, title=f"{train} -> {test}")
        target = out_dir / f"nmse_{_slug(train)}_vs_{_slug(test)}.svg"
        renderSVG.drawToFile(drawing, str(target))
        written.append(target)

    if pdf:
        csv_hash = hash_content(csv_path.read_bytes())
        pdf_bytes = ResultsPDFGenerator(records, csv_hash, csv_path.name).generate()
        target = out_dir / "report.pdf"
        target.write_bytes(pdf_bytes)
        written.append(target)

    logger.info(f"Wrote {len(written)} report files to {out_dir}")
    return written
