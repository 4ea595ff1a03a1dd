import io
import logging
import os
import tempfile

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from reportlab.lib import colors
from reportlab.lib.pagesizes import A4, landscape
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Image, Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from src.utils import atomic_write_bytes

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = [
    ("name", "Run"), ("method", "Method"), ("consensus_norm", "Norm"), ("q", "q"),
    ("n_vertices", "Vertices"), ("iterations", "Iterations"), ("solution_time", "Time [s]"),
    ("rel_error", "Rel. error"), ("state_misfit", "State misfit"), ("forward_solves", "Forward"),
    ("adjoint_solves", "Adjoint"), ("incremental_solves", "Incremental"), ("status", "Status"),
]

TABLE_STYLE = TableStyle([
    ('BACKGROUND', (0, 0), (-1, 0), colors.grey),
    ('TEXTCOLOR', (0, 0), (-1, 0), colors.whitesmoke),
    ('ALIGN', (0, 0), (-1, -1), 'CENTER'),
    ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
    ('FONTSIZE', (0, 0), (-1, -1), 8),
    ('BOTTOMPADDING', (0, 0), (-1, 0), 8),
    ('BACKGROUND', (0, 1), (-1, -1), colors.beige),
    ('GRID', (0, 0), (-1, -1), 1, colors.black)
])


def _format(value):
    if isinstance(value, (bool, np.bool_)):
        return "yes" if value else "no"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if np.isnan(value):
            return "-"
        return f"{value:.4g}"
    return str(value)


class ReportGenerator:
    def __init__(self):
        self.styles = getSampleStyleSheet()

    def generate_study_report(self, kind, summary, histories, config, path):
        """Write the PDF report of one study to ``path``; returns the path"""
        buffer = io.BytesIO()
        doc = SimpleDocTemplate(buffer, pagesize=landscape(A4), invariant=1,
                                title=f"{kind} study", author="admm-invert")
        story = []

        title_style = ParagraphStyle(
            'StudyTitle',
            parent=self.styles['Heading1'],
            fontSize=20,
            spaceAfter=20,
            alignment=1
        )
        story.append(Paragraph(f"ADMM-INVERT - {kind} study", title_style))

        story.append(Paragraph("Configuration", self.styles['Heading2']))
        story.append(self._table(self._configuration_rows(config), col_widths=[2.2 * inch, 4 * inch]))
        story.append(Spacer(1, 16))

        story.append(Paragraph("Runs", self.styles['Heading2']))
        if summary.empty:
            story.append(Paragraph("No runs were executed.", self.styles['Normal']))
        else:
            columns = [(key, label) for key, label in SUMMARY_COLUMNS if key in summary.columns]
            rows = [[label for _, label in columns]]
            rows += [[_format(row[key]) for key, _ in columns] for _, row in summary.iterrows()]
            story.append(self._table(rows))
            story.append(Paragraph("State misfit is the sum over models of the squared data mismatch "
                                   "at the reconstruction.", self.styles['Italic']))
            region_columns = [c for c in summary.columns if c.startswith("err_")]
            if region_columns:
                story.append(Spacer(1, 12))
                story.append(Paragraph("Relative error per region", self.styles['Heading2']))
                rows = [["Run"] + [c[len("err_"):] for c in region_columns]]
                rows += [[row["name"]] + [_format(row[c]) for c in region_columns] for _, row in summary.iterrows()]
                story.append(self._table(rows))
        story.append(Spacer(1, 16))

        with tempfile.TemporaryDirectory() as tmp:
            for column, heading, log_y in (("rel_error", "Relative error history", False),
                                           ("r_norm", "Primal residual history", True)):
                chart = self._create_history_chart(histories, column, heading, log_y, tmp)
                if chart:
                    story.append(Paragraph(heading, self.styles['Heading2']))
                    story.append(Image(chart, width=7 * inch, height=3.2 * inch))
                    story.append(Spacer(1, 12))

            story.append(Paragraph("Observations", self.styles['Heading2']))
            for note in self._observations(summary):
                story.append(Paragraph(f"• {note}", self.styles['Normal']))
            doc.build(story)

        atomic_write_bytes(path, buffer.getvalue())
        logger.info("study report written to %s", path)
        return path

    def _table(self, rows, col_widths=None):
        table = Table(rows, colWidths=col_widths, repeatRows=1)
        table.setStyle(TABLE_STYLE)
        return table

    def _configuration_rows(self, config):
        rows = [['Setting', 'Value']]
        for section, key in (("run", "problem"), ("run", "method"), ("run", "seed"), ("mesh", "level"),
                             ("mesh", "divisions"), ("eit", "q"), ("eit", "noise_level"),
                             ("qpact", "wavelengths"), ("admm", "consensus_norm"), ("admm", "mu"),
                             ("admm", "tau"), ("admm", "eps_abs"), ("admm", "eps_rel"),
                             ("incg", "max_iter"), ("incg", "hessian_mode"),
                             ("regularization", "alpha_tv"), ("regularization", "alpha_tk"),
                             ("regularization", "eps")):
            rows.append([f"{section}.{key}", _format(config.get(section, key))])
        if config.overrides:
            rows.append(["overrides", " ".join(config.overrides)])
        return rows

    def _create_history_chart(self, histories, column, heading, log_y, directory):
        """Matplotlib line chart of one history column, saved as PNG; None when no run has it"""
        series = {name: df for name, df in histories.items()
                  if column in df.columns and df[column].notna().any()}
        if not series:
            return None
        fig, ax = plt.subplots(figsize=(10, 4.5))
        for name, df in series.items():
            ax.plot(df["k"], df[column], marker="o", linewidth=2, label=name)
        if log_y:
            ax.set_yscale("log")
        ax.set_title(heading, fontsize=14)
        ax.set_xlabel("Iteration", fontsize=11)
        ax.set_ylabel(column, fontsize=11)
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = os.path.join(directory, f"{column}.png")
        fig.savefig(path, dpi=120, metadata={"Software": None})
        plt.close(fig)
        return path

    def _observations(self, summary):
        notes = []
        if summary.empty:
            return ["Nothing to report."]
        ok = summary[summary["status"] == "ok"]
        failed = summary[summary["status"] != "ok"]
        for _, row in failed.iterrows():
            notes.append(f"Run {row['name']} failed: {row['message']}")
        if not ok.empty:
            best = ok.loc[ok["rel_error"].idxmin()]
            notes.append(f"Lowest relative error: {best['name']} ({best['rel_error']:.4f}).")
            cheapest = ok.loc[ok["incremental_solves"].idxmin()]
            notes.append(f"Fewest incremental solves: {cheapest['name']} ({int(cheapest['incremental_solves'])}).")
            not_converged = ok[~ok["converged"].astype(bool)]
            if not not_converged.empty:
                notes.append("Stopped at the iteration limit: " + ", ".join(not_converged["name"]) + ".")
        return notes
