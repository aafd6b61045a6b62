import os
from typing import Dict, Optional

import pandas as pd

from metrics import MetricsReport

GEO_ERR_NOTE = "_`geo_err` is the mean squared difference of standardized depths (no square root taken)._\n"


def _table(df: pd.DataFrame) -> str:
    if df.empty:
        return "_No rows._\n"
    cols = list(df.columns)
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for _, row in df.iterrows():
        cells = [f"{v:.4f}" if isinstance(v, float) else str(v) for v in row.tolist()]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _comparison(summary: Dict) -> str:
    if "mix_better_fraction" not in summary:
        return "_Only the w⁺-only variant was evaluated._\n"
    return (f"- mean MSE, w⁺ only: `{summary['wplus_mse']:.5f}`\n"
            f"- mean MSE, AFA + occlusion mix: `{summary['mix_mse']:.5f}`\n"
            f"- images where the mixed render is at least as close: "
            f"`{100.0 * summary['mix_better_fraction']:.1f}%`\n")


def generate_report(report: MetricsReport, summary: Dict, mermaid: str = "", title: str = "TriInvert") -> str:
    md = [f"# 📘 Evaluation report for `{title}`\n"]

    md.append("## 🧭 Summary\n")
    md.append("\n".join(f"- {k}: `{v:.5f}`" if isinstance(v, float) else f"- {k}: `{v}`"
                        for k, v in summary.items()) + "\n")

    md.append("## 📈 Per-yaw means\n")
    md.append(_table(report.per_yaw()) if report.rows else "_No rows._\n")
    md.append(GEO_ERR_NOTE)

    if summary.get("source") == "generator":
        md.append("## ⚖️ w⁺-only vs mixed\n")
        md.append(_comparison(summary))

    md.append("## 📊 Pipeline\n")
    if mermaid:
        md.append("<details><summary>Show pipeline graph</summary>\n\n")
        md.append(mermaid)
        md.append("</details>\n")
    else:
        md.append("_Pipeline graph unavailable._\n")
    return "\n".join(md)


def save_report(out_dir: str, report: MetricsReport, summary: Dict, mermaid: str = "",
                title: Optional[str] = None) -> Dict[str, str]:
    """Writes reports/metrics.csv and reports/report.md under out_dir."""
    report_dir = os.path.join(out_dir, "reports")
    os.makedirs(report_dir, exist_ok=True)
    csv_path = report.to_csv(os.path.join(report_dir, "metrics.csv"))
    md_path = os.path.join(report_dir, "report.md")
    with open(md_path, "w", encoding="utf-8") as f:
        f.write(generate_report(report, summary, mermaid, title or os.path.basename(os.path.abspath(out_dir))))
    return {"csv": csv_path, "markdown": md_path}
